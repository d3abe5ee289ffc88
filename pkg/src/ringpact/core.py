"""Shared domain types and coordinate conventions.

World coordinates are meters, origin at the ring center. An image raster
stores ``values[i, j]`` where ``i`` indexes x (columns) and ``j`` indexes y
(rows); the center of pixel (i, j) sits at

    x = cx + (i + 0.5 - nx/2) * pixel_m
    y = cy + (j + 0.5 - ny/2) * pixel_m

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

TWO_PI = 2.0 * np.pi


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class RingGeometry:
    """Circular transducer array: radius and element angles.

    Element k defaults to angle 2*pi*k/n_elements; a subsampled ring keeps
    the surviving elements' original angles.
    """

    radius_m: float
    n_elements: int
    element_angles_rad: np.ndarray | None = None

    def __post_init__(self):
        if not self.radius_m > 0:
            raise DataError(f"ring radius must be positive, got {self.radius_m}")
        if self.n_elements < 4:
            raise DataError(f"need at least 4 elements, got {self.n_elements}")
        if self.element_angles_rad is None:
            angles = TWO_PI * np.arange(self.n_elements) / self.n_elements
        else:
            angles = np.asarray(self.element_angles_rad, dtype=np.float64)
            if angles.shape != (self.n_elements,):
                raise DataError(
                    f"expected {self.n_elements} element angles, got shape {angles.shape}"
                )
            if np.any(angles < 0) or np.any(angles >= TWO_PI):
                raise DataError("element angles must lie in [0, 2*pi)")
            if np.any(np.diff(angles) <= 0):
                raise DataError("element angles must be strictly increasing")
        object.__setattr__(self, "element_angles_rad", _as_readonly(angles))

    @property
    def positions_m(self) -> np.ndarray:
        """(n_elements, 2) element centers on the ring."""
        a = self.element_angles_rad
        return np.stack(
            [self.radius_m * np.cos(a), self.radius_m * np.sin(a)], axis=1
        )

    def subsample(self, n_proj: int) -> "RingGeometry":
        """Every (n_elements/n_proj)-th element, starting at index 0."""
        if n_proj <= 0 or self.n_elements % n_proj != 0:
            raise DataError(
                f"{n_proj} projections do not evenly divide {self.n_elements} elements"
            )
        stride = self.n_elements // n_proj
        return RingGeometry(
            radius_m=self.radius_m,
            n_elements=n_proj,
            element_angles_rad=self.element_angles_rad[::stride].copy(),
        )


@dataclass(frozen=True)
class ImageGrid:
    """Reconstruction raster: nx-by-ny pixels of pitch pixel_m, centered on
    (center_x_m, center_y_m) which defaults to the ring center."""

    nx: int
    ny: int
    pixel_m: float
    center_x_m: float = 0.0
    center_y_m: float = 0.0

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise DataError(f"grid dimensions must be positive, got {self.nx}x{self.ny}")
        if not self.pixel_m > 0:
            raise DataError(f"pixel pitch must be positive, got {self.pixel_m}")

    @property
    def width_m(self) -> float:
        return self.nx * self.pixel_m

    @property
    def height_m(self) -> float:
        return self.ny * self.pixel_m

    @property
    def half_diagonal_m(self) -> float:
        return 0.5 * float(np.hypot(self.width_m, self.height_m))

    def pixel_centers_x(self) -> np.ndarray:
        return self.center_x_m + (np.arange(self.nx) + 0.5 - self.nx / 2) * self.pixel_m

    def pixel_centers_y(self) -> np.ndarray:
        return self.center_y_m + (np.arange(self.ny) + 0.5 - self.ny / 2) * self.pixel_m

    def world_to_pixel(self, points):
        """World coords (..., 2) -> fractional pixel coords (..., 2).

        No clamping: out-of-grid points map outside [0, nx) x [0, ny).
        """
        p = np.asarray(points, dtype=np.float64)
        fx = (p[..., 0] - self.center_x_m) / self.pixel_m + self.nx / 2 - 0.5
        fy = (p[..., 1] - self.center_y_m) / self.pixel_m + self.ny / 2 - 0.5
        return np.stack([fx, fy], axis=-1)

    def pixel_to_world(self, pixels):
        """Fractional pixel coords (..., 2) -> world coords (..., 2)."""
        q = np.asarray(pixels, dtype=np.float64)
        x = self.center_x_m + (q[..., 0] + 0.5 - self.nx / 2) * self.pixel_m
        y = self.center_y_m + (q[..., 1] + 0.5 - self.ny / 2) * self.pixel_m
        return np.stack([x, y], axis=-1)


def world_to_pixel(grid: ImageGrid, point) -> np.ndarray:
    """Module-level alias of :meth:`ImageGrid.world_to_pixel`."""
    return grid.world_to_pixel(point)


def pixel_to_world(grid: ImageGrid, pixel) -> np.ndarray:
    """Module-level alias of :meth:`ImageGrid.pixel_to_world`."""
    return grid.pixel_to_world(pixel)


@dataclass(frozen=True)
class RoiCircle:
    """Circular region of interest covered by the forward-model arcs.

    Defaults (see :func:`default_roi`) circumscribe the reconstruction
    square so every pixel is covered.
    """

    radius_m: float
    center_x_m: float = 0.0
    center_y_m: float = 0.0

    def __post_init__(self):
        if not self.radius_m > 0:
            raise DataError(f"ROI radius must be positive, got {self.radius_m}")


def default_roi(grid: ImageGrid) -> RoiCircle:
    """Circle through the corners of the grid square."""
    return RoiCircle(
        radius_m=grid.half_diagonal_m,
        center_x_m=grid.center_x_m,
        center_y_m=grid.center_y_m,
    )


@dataclass(frozen=True)
class Sinogram:
    """RF pressure data: one row per detector, one column per time sample."""

    data: np.ndarray
    fs_hz: float
    c_mps: float
    geometry: RingGeometry
    t0_s: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise DataError(f"sinogram data must be 2-D, got shape {d.shape}")
        if d.shape[0] != self.geometry.n_elements:
            raise DataError(
                f"sinogram has {d.shape[0]} detector rows but the geometry has "
                f"{self.geometry.n_elements} elements"
            )
        if not np.isfinite(d).all():
            raise DataError("sinogram contains non-finite samples")
        if not self.fs_hz > 0:
            raise DataError(f"sampling frequency must be positive, got {self.fs_hz}")
        if not self.c_mps > 0:
            raise DataError(f"speed of sound must be positive, got {self.c_mps}")
        object.__setattr__(self, "data", _as_readonly(d))

    @property
    def n_detectors(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def sample_times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.n_samples) / self.fs_hz


def subsample_detectors(s: Sinogram, n_proj: int) -> Sinogram:
    """Keep every (n_detectors/n_proj)-th detector row, starting at row 0.

    The returned sinogram owns a copy of the selected rows and carries the
    correspondingly reduced geometry; the source is left untouched.
    """
    if n_proj <= 0 or s.n_detectors % n_proj != 0:
        raise DataError(
            f"cannot select {n_proj} projections from {s.n_detectors} detectors: "
            "not a divisor"
        )
    stride = s.n_detectors // n_proj
    return Sinogram(
        data=s.data[::stride].copy(),
        fs_hz=s.fs_hz,
        c_mps=s.c_mps,
        geometry=s.geometry.subsample(n_proj),
        t0_s=s.t0_s,
    )


@dataclass(frozen=True)
class Image:
    """Raster of initial pressure / absorbed heat.

    ``values`` has shape (nx, ny) and must be finite. Non-negativity is the
    convention for heat maps (phantoms, MB and INR outputs satisfy it); raw
    unclipped back-projections may carry negative values.
    """

    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.nx, self.grid.ny):
            raise DataError(
                f"image values shape {v.shape} does not match grid "
                f"{self.grid.nx}x{self.grid.ny}"
            )
        if not np.isfinite(v).all():
            raise DataError("image contains non-finite values")
        object.__setattr__(self, "values", _as_readonly(v))

    def normalized(self) -> "Image":
        """Max-normalized copy (all-zero images pass through unchanged)."""
        m = float(self.values.max())
        if m <= 0:
            return self
        return Image(self.grid, self.values / m)
