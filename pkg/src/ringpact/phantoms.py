"""Synthetic ground-truth phantoms and the in-silico acquisition protocol.

Phantoms are built from two primitives, filled disks and constant-width
strokes (polylines), rasterized deterministically with 4x4 supersampled
anti-aliasing. Bundled generators cover disk sets, a seeded branching
vessel tree, and thin-stroke delta / heart / star outlines standing in for
wire targets; arbitrary wire shapes can be given as point lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Image, ImageGrid, RoiCircle, Sinogram, default_roi
from .exceptions import DataError
from .forward import ForwardConfig, forward_project

SUPERSAMPLE = 4


@dataclass(frozen=True)
class Disk:
    cx_m: float
    cy_m: float
    radius_m: float
    amplitude: float = 1.0


@dataclass(frozen=True)
class Stroke:
    """Constant-width polyline; points_m has shape (k, 2), k >= 2."""

    points_m: tuple
    width_m: float
    amplitude: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points_m, dtype=np.float64)


@dataclass(frozen=True)
class PhantomSpec:
    kind: str
    disks: tuple = ()
    strokes: tuple = ()

    def is_empty(self) -> bool:
        return not self.disks and not self.strokes


def disks_spec(disks) -> PhantomSpec:
    return PhantomSpec(kind="disks", disks=tuple(disks))


def wires_spec(points_m, width_m: float, amplitude: float = 1.0) -> PhantomSpec:
    pts = tuple(tuple(p) for p in points_m)
    return PhantomSpec(kind="wires", strokes=(Stroke(pts, width_m, amplitude),))


def _closed(points: np.ndarray) -> tuple:
    return tuple(map(tuple, np.vstack([points, points[:1]])))


def delta_spec(radius_m: float, width_m: float, amplitude: float = 1.0,
               center=(0.0, 0.0)) -> PhantomSpec:
    """Equilateral triangle outline (apex up)."""
    ang = np.deg2rad([90.0, 210.0, 330.0])
    pts = np.stack([center[0] + radius_m * np.cos(ang),
                    center[1] + radius_m * np.sin(ang)], axis=1)
    return PhantomSpec(kind="delta", strokes=(Stroke(_closed(pts), width_m, amplitude),))


def heart_spec(radius_m: float, width_m: float, amplitude: float = 1.0,
               center=(0.0, 0.0), n_points: int = 256) -> PhantomSpec:
    """Classic sinusoidal heart curve scaled so it fits a circle of
    radius_m."""
    t = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    x = 16.0 * np.sin(t) ** 3
    y = 13.0 * np.cos(t) - 5.0 * np.cos(2 * t) - 2.0 * np.cos(3 * t) - np.cos(4 * t)
    scale = radius_m / float(np.max(np.hypot(x, y)))
    pts = np.stack([center[0] + scale * x, center[1] + scale * y], axis=1)
    return PhantomSpec(kind="heart", strokes=(Stroke(_closed(pts), width_m, amplitude),))


def star_spec(radius_m: float, width_m: float, amplitude: float = 1.0,
              center=(0.0, 0.0)) -> PhantomSpec:
    """Five-pointed star outline (pentagram proportions)."""
    inner = radius_m * math.sin(math.pi / 10.0) / math.sin(3.0 * math.pi / 10.0)
    ang = np.pi / 2.0 + np.arange(10) * np.pi / 5.0
    r = np.where(np.arange(10) % 2 == 0, radius_m, inner)
    pts = np.stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)], axis=1)
    return PhantomSpec(kind="star", strokes=(Stroke(_closed(pts), width_m, amplitude),))


def vessel_spec(seed: int, extent_m: float, n_trunks: int = 2) -> PhantomSpec:
    """Seeded branching-vessel tree: random-walk branches with tapering
    width, confined to a disk of 0.42 * extent_m around the origin."""
    rng = np.random.default_rng(seed)
    safe_r = 0.42 * extent_m
    step = 0.014 * extent_m
    strokes: list[Stroke] = []
    # (position, direction, width, depth)
    stack = []
    for _ in range(n_trunks):
        ang = rng.uniform(0.0, 2.0 * np.pi)
        pos = rng.uniform(-0.25, 0.25, size=2) * safe_r
        stack.append((pos, ang, 0.016 * extent_m, 0))
    while stack:
        pos, ang, width, depth = stack.pop()
        pts = [pos.copy()]
        w = width
        for i in range(rng.integers(18, 36)):
            ang += rng.normal(0.0, 0.22)
            pos = pos + step * np.array([math.cos(ang), math.sin(ang)])
            if np.hypot(*pos) > safe_r:
                break
            pts.append(pos.copy())
            w *= 0.988
            if len(pts) >= 3 and len(pts) % 6 == 0:
                strokes.append(Stroke(tuple(map(tuple, pts[-7:])), w, 1.0))
            if (
                depth < 3
                and w > 0.005 * extent_m
                and i > 8
                and rng.random() < 0.10
            ):
                side = 1.0 if rng.random() < 0.5 else -1.0
                stack.append((pos.copy(), ang + side * rng.uniform(0.4, 0.9), w * 0.72, depth + 1))
        if len(pts) >= 2:
            strokes.append(Stroke(tuple(map(tuple, pts)), w, 1.0))
    return PhantomSpec(kind="vessel", strokes=tuple(strokes))


def _segment_coverage(sx, sy, a, b, half_w):
    """Boolean mask of supersample points within half_w of segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    dx = sx - a[0]
    dy = sy - a[1]
    if denom == 0.0:
        return dx * dx + dy * dy <= half_w * half_w
    t = np.clip((dx * ab[0] + dy * ab[1]) / denom, 0.0, 1.0)
    ex = dx - t * ab[0]
    ey = dy - t * ab[1]
    return ex * ex + ey * ey <= half_w * half_w


def _check_inside_roi(spec: PhantomSpec, roi: RoiCircle):
    def dist(p):
        return math.hypot(p[0] - roi.center_x_m, p[1] - roi.center_y_m)

    for d in spec.disks:
        if dist((d.cx_m, d.cy_m)) + d.radius_m > roi.radius_m:
            raise DataError(f"disk at ({d.cx_m}, {d.cy_m}) exceeds the ROI circle")
    for st in spec.strokes:
        pts = st.as_array()
        reach = np.hypot(pts[:, 0] - roi.center_x_m, pts[:, 1] - roi.center_y_m).max()
        if reach + 0.5 * st.width_m > roi.radius_m:
            raise DataError("stroke exceeds the ROI circle")


def render_phantom(spec: PhantomSpec, grid: ImageGrid, roi: RoiCircle | None = None) -> Image:
    """Deterministic rasterization with 4x4 supersampled anti-aliasing;
    overlapping shapes combine by maximum amplitude."""
    if roi is None:
        roi = default_roi(grid)
    _check_inside_roi(spec, roi)
    ss = SUPERSAMPLE
    nxs, nys = grid.nx * ss, grid.ny * ss
    sub_pitch = grid.pixel_m / ss
    x0 = grid.center_x_m - 0.5 * grid.width_m + 0.5 * sub_pitch
    y0 = grid.center_y_m - 0.5 * grid.height_m + 0.5 * sub_pitch
    canvas = np.zeros((nxs, nys), dtype=np.float64)

    def paint(x_lo_m, x_hi_m, y_lo_m, y_hi_m, fn, amplitude):
        i0 = max(0, int(math.floor((x_lo_m - x0) / sub_pitch)))
        i1 = min(nxs, int(math.ceil((x_hi_m - x0) / sub_pitch)) + 1)
        j0 = max(0, int(math.floor((y_lo_m - y0) / sub_pitch)))
        j1 = min(nys, int(math.ceil((y_hi_m - y0) / sub_pitch)) + 1)
        if i0 >= i1 or j0 >= j1:
            return
        sx = (x0 + np.arange(i0, i1) * sub_pitch)[:, None]
        sy = (y0 + np.arange(j0, j1) * sub_pitch)[None, :]
        mask = fn(sx, sy)
        region = canvas[i0:i1, j0:j1]
        np.maximum(region, np.where(mask, amplitude, 0.0), out=region)

    for d in spec.disks:
        r = d.radius_m
        paint(
            d.cx_m - r, d.cx_m + r, d.cy_m - r, d.cy_m + r,
            lambda sx, sy, d=d: (sx - d.cx_m) ** 2 + (sy - d.cy_m) ** 2 <= d.radius_m**2,
            d.amplitude,
        )
    for st in spec.strokes:
        pts = st.as_array()
        hw = 0.5 * st.width_m
        for a, b in zip(pts[:-1], pts[1:]):
            paint(
                min(a[0], b[0]) - hw, max(a[0], b[0]) + hw,
                min(a[1], b[1]) - hw, max(a[1], b[1]) + hw,
                lambda sx, sy, a=a, b=b: _segment_coverage(sx, sy, a, b, hw),
                st.amplitude,
            )
    values = canvas.reshape(grid.nx, ss, grid.ny, ss).mean(axis=(1, 3))
    return Image(grid=grid, values=values)


def simulate_acquisition(
    phantom: Image,
    fwd: ForwardConfig,
    noise_db: float | None = None,
    noise_seed: int = 0,
    n_threads: int = 1,
) -> Sinogram:
    """Forward-project a phantom; optionally add white Gaussian noise at the
    given per-channel SNR (dB). With noise off this is exactly
    :func:`ringpact.forward.forward_project`."""
    s = forward_project(phantom, fwd, n_threads=n_threads)
    if noise_db is None:
        return s
    rng = np.random.default_rng(noise_seed)
    rms = np.sqrt(np.mean(s.data**2, axis=1, keepdims=True))
    sigma = rms / (10.0 ** (noise_db / 20.0))
    noisy = s.data + rng.standard_normal(s.data.shape) * sigma
    return Sinogram(
        data=noisy, fs_hz=s.fs_hz, c_mps=s.c_mps, geometry=s.geometry, t0_s=s.t0_s
    )
