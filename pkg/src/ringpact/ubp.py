"""Universal back-projection reconstruction.

Each pixel accumulates, over all detectors, the filtered RF term

    b(t) = 2 p(t) - 2 t dp/dt

evaluated at the time of flight t = |detector - pixel| / c (linear
interpolation between samples), weighted by cos(theta0) / distance^2 where
theta0 is the angle between the pixel direction and the inward element
normal. The per-element surface patch is uniform (2 pi R / n_elements) and,
together with the solid-angle normalization, only sets the overall gain.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Image, ImageGrid, RingGeometry, Sinogram
from .exceptions import DataError


@dataclass(frozen=True)
class UbpConfig:
    """Back-projection settings.

    solid_angle_total is 4*pi for cylindrical elements (the default) or
    2*pi for planar ones. Negative accumulator values are clipped when
    clip_negative is set (display convention); normalize rescales the
    result to [0, 1].
    """

    geometry: RingGeometry
    grid: ImageGrid
    fs_hz: float
    c_mps: float
    t0_s: float = 0.0
    solid_angle_total: float = 4.0 * math.pi
    clip_negative: bool = True
    normalize: bool = True

    def __post_init__(self):
        if not any(
            math.isclose(self.solid_angle_total, v) for v in (2 * math.pi, 4 * math.pi)
        ):
            raise DataError(
                f"solid_angle_total must be 2*pi or 4*pi, got {self.solid_angle_total}"
            )
        if not self.fs_hz > 0 or not self.c_mps > 0:
            raise DataError("fs_hz and c_mps must be positive")


def _filtered_rf(s: Sinogram) -> np.ndarray:
    """b = 2 p - 2 t dp/dt, centered differences inside, one-sided at ends."""
    t = s.sample_times()
    dpdt = np.gradient(s.data, 1.0 / s.fs_hz, axis=1)
    return 2.0 * s.data - 2.0 * t[None, :] * dpdt


def ubp_reconstruct(s: Sinogram, cfg: UbpConfig, n_threads: int = 1) -> Image:
    """Back-project a sinogram onto the configured grid."""
    if s.n_detectors != cfg.geometry.n_elements:
        raise DataError(
            f"sinogram has {s.n_detectors} detectors, config expects "
            f"{cfg.geometry.n_elements}"
        )
    if s.fs_hz != cfg.fs_hz or s.c_mps != cfg.c_mps or s.t0_s != cfg.t0_s:
        raise DataError("sinogram sampling metadata does not match the configuration")

    b = _filtered_rf(s)
    grid = cfg.grid
    px = grid.pixel_centers_x()
    py = grid.pixel_centers_y()
    gx = px[:, None]  # broadcast to (nx, ny)
    gy = py[None, :]
    det_pos = cfg.geometry.positions_m
    patch = 2.0 * math.pi * cfg.geometry.radius_m / cfg.geometry.n_elements
    gain = patch / cfg.solid_angle_total
    n_samp = s.n_samples

    def block(rows: slice) -> np.ndarray:
        bx = gx[rows]
        acc = np.zeros((bx.shape[0], grid.ny), dtype=np.float64)
        for d in range(s.n_detectors):
            dx = bx - det_pos[d, 0]
            dy = gy - det_pos[d, 1]
            dist = np.hypot(dx, dy)
            dist = np.maximum(dist, 1e-12)
            # inward normal of the element points at the ring center
            nxv = -det_pos[d, 0] / cfg.geometry.radius_m
            nyv = -det_pos[d, 1] / cfg.geometry.radius_m
            cos_t = (dx * nxv + dy * nyv) / dist
            u = (dist / cfg.c_mps - cfg.t0_s) * cfg.fs_hz
            i0 = np.floor(u).astype(np.int64)
            frac = u - i0
            ok = (i0 >= 0) & (i0 < n_samp - 1)
            i0c = np.clip(i0, 0, n_samp - 2)
            row = b[d]
            val = row[i0c] * (1.0 - frac) + row[i0c + 1] * frac
            acc += np.where(ok, val * cos_t / (dist * dist), 0.0)
        return acc * gain

    if n_threads <= 1:
        out = block(slice(0, grid.nx))
    else:
        bounds = np.linspace(0, grid.nx, n_threads + 1).astype(int)
        slices = [slice(a, b_) for a, b_ in zip(bounds[:-1], bounds[1:]) if b_ > a]
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            parts = list(ex.map(block, slices))
        out = np.concatenate(parts, axis=0)

    if cfg.clip_negative:
        out = np.maximum(out, 0.0)
    if cfg.normalize:
        m = float(np.abs(out).max())
        if m > 0:
            out = out / m
    return Image(grid=grid, values=out)
