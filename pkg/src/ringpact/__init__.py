"""Ring-array photoacoustic tomography: simulation, sparse-view
reconstruction (UBP / model-based / implicit neural representation) and
image-quality metrics."""

from .core import (
    Image,
    ImageGrid,
    RingGeometry,
    RoiCircle,
    Sinogram,
    default_roi,
    pixel_to_world,
    subsample_detectors,
    world_to_pixel,
)
from .forward import (
    ForwardConfig,
    adjoint_project,
    arc_points,
    assemble_matrix,
    forward_project,
    line_integral,
    opening_angle,
)

__version__ = "0.1.0"

__all__ = [
    "Image",
    "ImageGrid",
    "RingGeometry",
    "RoiCircle",
    "Sinogram",
    "ForwardConfig",
    "default_roi",
    "pixel_to_world",
    "world_to_pixel",
    "subsample_detectors",
    "opening_angle",
    "arc_points",
    "line_integral",
    "forward_project",
    "adjoint_project",
    "assemble_matrix",
    "__version__",
]
