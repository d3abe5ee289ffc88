"""Image-quality metrics: SSIM, PSNR, MSE, SNR, CNR.

SSIM here is the global single-window form (scalar means, population
variances, cross-covariance) with additive constants C1 = 0.01 and
C2 = 0.03, for images normalized to [0, 1]. SNR and CNR are region-based
and expect a RegionSpec naming a signal rectangle and a background
rectangle in pixel coordinates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import Image
from .exceptions import DataError

SSIM_C1 = 0.01
SSIM_C2 = 0.03


def _values(img) -> np.ndarray:
    return img.values if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


@dataclass(frozen=True)
class Rect:
    """Pixel-aligned rectangle: origin (x, y), size (w, h); x indexes
    columns (first image axis), y rows (second axis)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise DataError(f"rectangle must have positive area, got {self}")
        if self.x < 0 or self.y < 0:
            raise DataError(f"rectangle origin must be non-negative, got {self}")

    def slice_of(self, values: np.ndarray) -> np.ndarray:
        nx, ny = values.shape
        if self.x + self.w > nx or self.y + self.h > ny:
            raise DataError(f"rectangle {self} exceeds the {nx}x{ny} image")
        return values[self.x : self.x + self.w, self.y : self.y + self.h]

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.x + self.w <= other.x
            or other.x + other.w <= self.x
            or self.y + self.h <= other.y
            or other.y + other.h <= self.y
        )


@dataclass(frozen=True)
class RegionSpec:
    """Signal and background rectangles for SNR/CNR evaluation."""

    signal: Rect
    background: Rect

    def __post_init__(self):
        if self.signal.overlaps(self.background):
            raise DataError("signal and background regions must not overlap")


def _check_same_shape(f: np.ndarray, g: np.ndarray):
    if f.shape != g.shape:
        raise DataError(f"image shapes differ: {f.shape} vs {g.shape}")


def mse(f, gt) -> float:
    """Mean squared error: squared Frobenius distance over the pixel count."""
    fv, gv = _values(f), _values(gt)
    _check_same_shape(fv, gv)
    d = fv - gv
    return float(np.vdot(d, d).real) / fv.size


def ssim(f, gt) -> float:
    """Global structural similarity of two [0, 1] images."""
    fv, gv = _values(f), _values(gt)
    _check_same_shape(fv, gv)
    for name, v in (("first", fv), ("second", gv)):
        if v.min() < -1e-9 or v.max() > 1.0 + 1e-9:
            raise DataError(f"{name} image is not normalized to [0, 1]")
    mu_f = fv.mean()
    mu_g = gv.mean()
    var_f = fv.var()  # population (1/N)
    var_g = gv.var()
    cov = ((fv - mu_f) * (gv - mu_g)).mean()
    num = (2 * mu_f * mu_g + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_f**2 + mu_g**2 + SSIM_C1) * (var_f + var_g + SSIM_C2)
    return float(num / den)


def psnr(f, gt) -> float:
    """Peak signal-to-noise ratio in dB; the peak is the max over both
    images. Identical images return +inf."""
    fv, gv = _values(f), _values(gt)
    _check_same_shape(fv, gv)
    err = mse(fv, gv)
    if err == 0.0:
        return math.inf
    i_max = float(max(fv.max(), gv.max()))
    return 10.0 * math.log10(i_max * i_max / err)


def _region_stats(values: np.ndarray, rect: Rect) -> tuple[float, float]:
    block = rect.slice_of(values)
    return float(block.mean()), float(block.std())  # population std


def snr(img, regions: RegionSpec) -> float:
    """20 log10(mean(signal) / std(background)) in dB."""
    v = _values(img)
    mean_sig, _ = _region_stats(v, regions.signal)
    _, std_bg = _region_stats(v, regions.background)
    if std_bg == 0.0:
        warnings.warn("background region has zero variance; SNR is +inf")
        return math.inf if mean_sig > 0 else -math.inf
    if mean_sig <= 0.0:
        return -math.inf
    return 20.0 * math.log10(mean_sig / std_bg)


def cnr(img, regions: RegionSpec) -> float:
    """20 log10(|mean(signal) - mean(background)| / sqrt(var(bg) + var(sig)))."""
    v = _values(img)
    mean_sig, std_sig = _region_stats(v, regions.signal)
    mean_bg, std_bg = _region_stats(v, regions.background)
    denom = math.sqrt(std_bg * std_bg + std_sig * std_sig)
    num = abs(mean_sig - mean_bg)
    if denom == 0.0:
        warnings.warn("both regions have zero variance; CNR is an infinity sentinel")
        return math.inf if num > 0 else -math.inf
    if num == 0.0:
        return -math.inf
    return 20.0 * math.log10(num / denom)


def default_regions(gt, size_px: int = 24, margin_px: int = 4) -> RegionSpec:
    """Deterministic signal/background rectangles derived from a ground
    truth image: the windows with the highest and lowest mean, scanned on a
    coarse stride, kept apart by at least one window."""
    v = _values(gt)
    nx, ny = v.shape
    size = min(size_px, nx // 3, ny // 3)
    if size < 2:
        raise DataError("image too small for region selection")
    stride = max(1, size // 4)
    csum = np.cumsum(np.cumsum(np.pad(v, ((1, 0), (1, 0))), axis=0), axis=1)

    def win_mean(x, y):
        return (
            csum[x + size, y + size] - csum[x, y + size] - csum[x + size, y] + csum[x, y]
        ) / (size * size)

    xs = range(margin_px, nx - size - margin_px + 1, stride)
    ys = range(margin_px, ny - size - margin_px + 1, stride)
    cells = [(win_mean(x, y), x, y) for x in xs for y in ys]
    _, sx, sy = max(cells, key=lambda c: (c[0], -c[1], -c[2]))
    signal = Rect(sx, sy, size, size)
    far = [
        c
        for c in cells
        if abs(c[1] - sx) >= 2 * size or abs(c[2] - sy) >= 2 * size
    ]
    _, bx, by = min(far, key=lambda c: (c[0], c[1], c[2]))
    return RegionSpec(signal=signal, background=Rect(bx, by, size, size))
