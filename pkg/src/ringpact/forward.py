"""Matrix-free discrete photoacoustic forward operator and its adjoint.

The pressure sample a detector records at time t is modeled as the centered
finite difference, over a small interval dt, of the arc integral

    I(t) = integral over the isochrone arc of  H(r') / |r - r'|

where the isochrone is the circle of radius c*t centered on the detector.
The arc is restricted to the angular sector (opening angle
``2*arcsin(roi_radius/ring_radius)``) that faces the ring center and covers
the circular ROI, and is sampled by M angularly uniform points combined with
trapezoid weights. Because every arc point is exactly c*t away from the
detector, the 1/|r - r'| kernel cancels the segment length factor and each
point contributes ``H * trapezoid_weight * alpha/(M-1)``.

Off-grid points contribute zero: the image is sampled by bilinear
interpolation with zero padding, so arcs may legitimately exit the
reconstruction square. Constant physical scale factors are folded into one
overall gain and omitted; all downstream comparisons are made after
normalization.

``adjoint_project`` applies the exact transpose of the same linear map
(bilinear scatter plus the transposed finite difference), which makes the
pair usable inside iterative solvers. ``assemble_matrix`` optionally
materializes the operator as a sparse matrix behind a memory-budget guard.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Image, ImageGrid, RingGeometry, RoiCircle, Sinogram, default_roi
from .exceptions import DataError, MemoryBudgetError

# Soft cap on the number of arc points held in memory per block.
_BLOCK_POINTS = 4_000_000


def opening_angle(roi: RoiCircle, geometry: RingGeometry) -> float:
    """Full opening angle, seen from a ring element, of the sector covering
    the circular ROI: 2*arcsin(roi_radius / ring_radius)."""
    if roi.radius_m >= geometry.radius_m:
        raise DataError(
            f"ROI radius {roi.radius_m} must be smaller than the ring radius "
            f"{geometry.radius_m}"
        )
    return 2.0 * math.asin(roi.radius_m / geometry.radius_m)


@dataclass(frozen=True)
class ForwardConfig:
    """Geometry, sampling and discretization of the forward operator.

    ``m_arc_points`` defaults to the smallest M whose arc spacing at the
    largest sampled radius does not exceed the pixel pitch;
    ``dt_deriv_s`` defaults to a tenth of the sampling interval.
    """

    geometry: RingGeometry
    grid: ImageGrid
    fs_hz: float
    c_mps: float
    n_samples: int
    t0_s: float = 0.0
    roi: RoiCircle | None = None
    m_arc_points: int | None = None
    dt_deriv_s: float | None = None

    def __post_init__(self):
        if self.n_samples <= 0:
            raise DataError(f"n_samples must be positive, got {self.n_samples}")
        if not self.fs_hz > 0 or not self.c_mps > 0:
            raise DataError("fs_hz and c_mps must be positive")
        if self.t0_s < 0:
            raise DataError(f"t0_s must be non-negative, got {self.t0_s}")
        if self.roi is None:
            object.__setattr__(self, "roi", default_roi(self.grid))
        if self.dt_deriv_s is None:
            object.__setattr__(self, "dt_deriv_s", 0.1 / self.fs_hz)
        if not 0 < self.dt_deriv_s < 1.0 / self.fs_hz:
            raise DataError(
                f"derivative half-step {self.dt_deriv_s} must lie strictly "
                f"between 0 and the sampling interval {1.0 / self.fs_hz}"
            )
        alpha = opening_angle(self.roi, self.geometry)
        if self.m_arc_points is None:
            t_last = self.t0_s + (self.n_samples - 1) / self.fs_hz + self.dt_deriv_s
            m = math.ceil(alpha * self.c_mps * t_last / self.grid.pixel_m) + 1
            object.__setattr__(self, "m_arc_points", max(m, 2))
        if self.m_arc_points < 2:
            raise DataError(f"m_arc_points must be >= 2, got {self.m_arc_points}")

    @property
    def alpha(self) -> float:
        return opening_angle(self.roi, self.geometry)

    def sample_times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.n_samples) / self.fs_hz

    def trapezoid_weights(self) -> np.ndarray:
        w = np.ones(self.m_arc_points)
        w[0] = w[-1] = 0.5
        return w

    def point_weight_scale(self) -> float:
        """Per-point quadrature factor alpha/(M-1); the isochrone distance
        c*t cancels against the segment length, see the module docstring."""
        return self.alpha / (self.m_arc_points - 1)

    def jitter_halfwidth(self) -> float:
        """Largest allowed random angular offset: half the point spacing."""
        return self.alpha / (2 * (self.m_arc_points - 1))

    def matches(self, s: Sinogram) -> bool:
        return (
            s.n_detectors == self.geometry.n_elements
            and s.n_samples == self.n_samples
            and s.fs_hz == self.fs_hz
            and s.c_mps == self.c_mps
            and s.t0_s == self.t0_s
        )


def arc_points(cfg: ForwardConfig, detector_index: int, t: float, jitter: float = 0.0) -> np.ndarray:
    """The M world points sampling the isochrone arc of detector
    ``detector_index`` at time ``t``, optionally rotated by ``jitter``.

    The arc faces the ring center; at t = 0 every point collapses onto the
    detector position.
    """
    fx, fy, _ = _arc_pixel_coords(
        cfg, detector_index, np.asarray([max(t, 0.0) * cfg.c_mps]), jitter
    )
    g = cfg.grid
    x = g.center_x_m + (fx[0] + 0.5 - g.nx / 2) * g.pixel_m
    y = g.center_y_m + (fy[0] + 0.5 - g.ny / 2) * g.pixel_m
    return np.stack([x, y], axis=-1)


def _arc_pixel_coords(cfg: ForwardConfig, det: int, radii: np.ndarray, jitter):
    """Fractional pixel coordinates of arc points for one detector.

    radii: (T,) arc radii; jitter: scalar or (T,). Returns fx, fy with shape
    (T, M) and the validity mask (radii > 0) of shape (T,).
    """
    geom, grid = cfg.geometry, cfg.grid
    m = cfg.m_arc_points
    beta0 = float(geom.element_angles_rad[det])
    x0 = geom.radius_m * math.cos(beta0)
    y0 = geom.radius_m * math.sin(beta0)
    alpha = cfg.alpha
    offsets = np.pi - 0.5 * alpha + np.arange(m) * (alpha / (m - 1))
    phi = beta0 + offsets
    jit = np.asarray(jitter, dtype=np.float64)
    if jit.ndim == 0:
        cphi = np.cos(phi + float(jit))[None, :]
        sphi = np.sin(phi + float(jit))[None, :]
    else:
        ang = phi[None, :] + jit[:, None]
        cphi, sphi = np.cos(ang), np.sin(ang)
    r = np.maximum(radii, 0.0)[:, None]
    x = r * cphi + x0
    y = r * sphi + y0
    fx = (x - grid.center_x_m) / grid.pixel_m + grid.nx / 2 - 0.5
    fy = (y - grid.center_y_m) / grid.pixel_m + grid.ny / 2 - 0.5
    return fx, fy, radii > 0


def _bilinear_corners(grid: ImageGrid, fx: np.ndarray, fy: np.ndarray):
    """Yield (flat_index, weight) for the four bilinear corners.

    Corners outside the grid get weight zero (zero-padded image); their
    indices are clamped so gathers stay in bounds.
    """
    nx, ny = grid.nx, grid.ny
    ix0 = np.floor(fx).astype(np.int64)
    iy0 = np.floor(fy).astype(np.int64)
    wx = fx - ix0
    wy = fy - iy0
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        cx = ix0 + dx
        cy = iy0 + dy
        w = (wx if dx else 1.0 - wx) * (wy if dy else 1.0 - wy)
        inside = (cx >= 0) & (cx < nx) & (cy >= 0) & (cy < ny)
        w = np.where(inside, w, 0.0)
        flat = np.clip(cx, 0, nx - 1) * ny + np.clip(cy, 0, ny - 1)
        yield flat, w


def _sample_window(cfg: ForwardConfig, det: int) -> tuple[int, int]:
    """Contiguous sample range whose isochrones can touch the grid square.

    Samples outside the window map to exactly zero rows of the operator and
    are skipped by forward, adjoint and assembly alike.
    """
    geom, grid = cfg.geometry, cfg.grid
    beta0 = float(geom.element_angles_rad[det])
    px = geom.radius_m * math.cos(beta0)
    py = geom.radius_m * math.sin(beta0)
    pad = grid.pixel_m  # bilinear support reaches one pixel past the square
    hx, hy = 0.5 * grid.width_m, 0.5 * grid.height_m
    dx = max(abs(px - grid.center_x_m) - hx, 0.0)
    dy = max(abs(py - grid.center_y_m) - hy, 0.0)
    d_min = math.hypot(dx, dy)
    d_max = math.hypot(abs(px - grid.center_x_m) + hx, abs(py - grid.center_y_m) + hy)
    t_lo = (d_min - pad) / cfg.c_mps - cfg.dt_deriv_s
    t_hi = (d_max + pad) / cfg.c_mps + cfg.dt_deriv_s
    s_lo = max(0, int(math.floor((t_lo - cfg.t0_s) * cfg.fs_hz)))
    s_hi = min(cfg.n_samples, int(math.ceil((t_hi - cfg.t0_s) * cfg.fs_hz)) + 1)
    return s_lo, max(s_lo, s_hi)


def _integrals_block(cfg, det, radii, jitter, image_flat):
    """Arc integrals I for a block of radii: (T,) values."""
    fx, fy, valid = _arc_pixel_coords(cfg, det, radii, jitter)
    acc = np.zeros(fx.shape, dtype=image_flat.dtype)
    for flat, w in _bilinear_corners(cfg.grid, fx, fy):
        acc += image_flat[flat.ravel()].reshape(flat.shape) * w
    acc *= cfg.trapezoid_weights()[None, :]
    out = acc.sum(axis=1)
    out *= cfg.point_weight_scale()
    out[~valid] = 0.0
    return out


def line_integral(image: Image, detector_index: int, t: float, cfg: ForwardConfig, jitter: float = 0.0) -> float:
    """Discretized arc integral I(t) for a single detector/time pair."""
    if image.grid != cfg.grid:
        raise DataError("image grid does not match the forward configuration")
    radii = np.asarray([cfg.c_mps * t], dtype=np.float64)
    return float(
        _integrals_block(cfg, detector_index, radii, jitter, image.values.ravel())[0]
    )


def _project_detector(cfg: ForwardConfig, det: int, image_flat: np.ndarray) -> np.ndarray:
    row = np.zeros(cfg.n_samples, dtype=np.float64)
    s_lo, s_hi = _sample_window(cfg, det)
    if s_lo >= s_hi:
        return row
    t = cfg.t0_s + np.arange(s_lo, s_hi) / cfg.fs_hz
    block = max(1, _BLOCK_POINTS // cfg.m_arc_points)
    for b0 in range(0, t.size, block):
        tb = t[b0 : b0 + block]
        i_plus = _integrals_block(cfg, det, cfg.c_mps * (tb + cfg.dt_deriv_s), 0.0, image_flat)
        i_minus = _integrals_block(cfg, det, cfg.c_mps * (tb - cfg.dt_deriv_s), 0.0, image_flat)
        row[s_lo + b0 : s_lo + b0 + tb.size] = (i_plus - i_minus) / (2.0 * cfg.dt_deriv_s)
    return row


def _backproject_detector(cfg: ForwardConfig, det: int, y_row: np.ndarray) -> np.ndarray:
    n_px = cfg.grid.nx * cfg.grid.ny
    out = np.zeros(n_px, dtype=np.float64)
    s_lo, s_hi = _sample_window(cfg, det)
    if s_lo >= s_hi:
        return out
    t = cfg.t0_s + np.arange(s_lo, s_hi) / cfg.fs_hz
    trap = cfg.trapezoid_weights()
    scale = cfg.point_weight_scale() / (2.0 * cfg.dt_deriv_s)
    block = max(1, _BLOCK_POINTS // cfg.m_arc_points)
    for b0 in range(0, t.size, block):
        tb = t[b0 : b0 + block]
        yb = y_row[s_lo + b0 : s_lo + b0 + tb.size]
        for sign in (1.0, -1.0):
            radii = cfg.c_mps * (tb + sign * cfg.dt_deriv_s)
            fx, fy, valid = _arc_pixel_coords(cfg, det, radii, 0.0)
            # weight carried by each arc point before bilinear spreading
            pv = (yb * valid * (sign * scale))[:, None] * trap[None, :]
            flats, vals = [], []
            for flat, w in _bilinear_corners(cfg.grid, fx, fy):
                flats.append(flat.ravel())
                vals.append((w * pv).ravel())
            out += np.bincount(
                np.concatenate(flats), weights=np.concatenate(vals), minlength=n_px
            )
    return out


def _detector_loop(n_det: int, fn, n_threads: int):
    """Run fn(det) for every detector, returning results in detector order."""
    if n_threads <= 1:
        return [fn(d) for d in range(n_det)]
    with ThreadPoolExecutor(max_workers=n_threads) as ex:
        return list(ex.map(fn, range(n_det)))


def forward_apply(cfg: ForwardConfig, values: np.ndarray, n_threads: int = 1) -> np.ndarray:
    """Raw-array forward map: (nx, ny) image values -> (n_det, n_samples)."""
    image_flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    rows = _detector_loop(
        cfg.geometry.n_elements,
        lambda d: _project_detector(cfg, d, image_flat),
        n_threads,
    )
    return np.stack(rows, axis=0)


def adjoint_apply(cfg: ForwardConfig, sino_values: np.ndarray, n_threads: int = 1) -> np.ndarray:
    """Raw-array adjoint map: (n_det, n_samples) -> (nx, ny) image values."""
    y = np.ascontiguousarray(sino_values, dtype=np.float64)
    partials = _detector_loop(
        cfg.geometry.n_elements,
        lambda d: _backproject_detector(cfg, d, y[d]),
        n_threads,
    )
    out = np.zeros(cfg.grid.nx * cfg.grid.ny, dtype=np.float64)
    for p in partials:  # fixed detector order keeps the reduction deterministic
        out += p
    return out.reshape(cfg.grid.nx, cfg.grid.ny)


def forward_project(image: Image, cfg: ForwardConfig, n_threads: int = 1) -> Sinogram:
    """Apply the forward operator to a raster image."""
    if image.grid != cfg.grid:
        raise DataError("image grid does not match the forward configuration")
    data = forward_apply(cfg, image.values, n_threads=n_threads)
    return Sinogram(
        data=data,
        fs_hz=cfg.fs_hz,
        c_mps=cfg.c_mps,
        geometry=cfg.geometry,
        t0_s=cfg.t0_s,
    )


def adjoint_project(s: Sinogram, cfg: ForwardConfig, n_threads: int = 1) -> Image:
    """Apply the exact transpose of :func:`forward_project`."""
    if not cfg.matches(s):
        raise DataError("sinogram dimensions/sampling do not match the configuration")
    values = adjoint_apply(cfg, s.data, n_threads=n_threads)
    return Image(grid=cfg.grid, values=values)


def estimate_matrix_bytes(cfg: ForwardConfig) -> int:
    """Upper bound on the memory needed to assemble the explicit operator."""
    nnz = 0
    for d in range(cfg.geometry.n_elements):
        s_lo, s_hi = _sample_window(cfg, d)
        nnz += (s_hi - s_lo) * 2 * cfg.m_arc_points * 4
    # data f64 + row/col int32 in COO, plus comparable transient for CSR
    return int(nnz * 16 * 2)


def assemble_matrix(cfg: ForwardConfig, memory_budget_bytes: int = 768 * 2**20):
    """Explicit sparse measurement matrix of shape
    (n_detectors * n_samples, nx * ny), equal to the matrix-free operator.

    Raises MemoryBudgetError when the estimate exceeds the budget; use the
    matrix-free forward_apply/adjoint_apply pair instead in that case.
    """
    from scipy import sparse

    est = estimate_matrix_bytes(cfg)
    if est > memory_budget_bytes:
        raise MemoryBudgetError(
            f"assembling the measurement matrix needs about {est / 2**20:.0f} MiB, "
            f"over the {memory_budget_bytes / 2**20:.0f} MiB budget; "
            "use the matrix-free forward_apply/adjoint_apply instead"
        )
    n_px = cfg.grid.nx * cfg.grid.ny
    n_rows = cfg.geometry.n_elements * cfg.n_samples
    trap = cfg.trapezoid_weights()
    scale = cfg.point_weight_scale() / (2.0 * cfg.dt_deriv_s)
    rows_all, cols_all, vals_all = [], [], []
    for det in range(cfg.geometry.n_elements):
        s_lo, s_hi = _sample_window(cfg, det)
        if s_lo >= s_hi:
            continue
        t = cfg.t0_s + np.arange(s_lo, s_hi) / cfg.fs_hz
        row_ids = det * cfg.n_samples + np.arange(s_lo, s_hi)
        for sign in (1.0, -1.0):
            radii = cfg.c_mps * (t + sign * cfg.dt_deriv_s)
            fx, fy, valid = _arc_pixel_coords(cfg, det, radii, 0.0)
            pw = (valid * (sign * scale))[:, None] * trap[None, :]
            rr = np.broadcast_to(row_ids[:, None], fx.shape)
            for flat, w in _bilinear_corners(cfg.grid, fx, fy):
                v = (w * pw).ravel()
                keep = v != 0.0
                rows_all.append(rr.ravel()[keep].astype(np.int32))
                cols_all.append(flat.ravel()[keep].astype(np.int32))
                vals_all.append(v[keep])
    mat = sparse.coo_matrix(
        (
            np.concatenate(vals_all) if vals_all else np.zeros(0),
            (
                np.concatenate(rows_all) if rows_all else np.zeros(0, dtype=np.int32),
                np.concatenate(cols_all) if cols_all else np.zeros(0, dtype=np.int32),
            ),
        ),
        shape=(n_rows, n_px),
    )
    return mat.tocsr()
