"""Binary containers for sinograms and images.

Both formats are little-endian and carry a trailing CRC32 over every
preceding byte, so a single flipped bit is detected. Payload samples are
float32; loading widens to float64 and re-saving a loaded object reproduces
the file byte for byte.

Sinogram container ("PACTSGM1")::

    offset  size            field
    0       8               magic b"PACTSGM1"
    8       4               u32 version (1)
    12      4               u32 n_detectors
    16      4               u32 n_samples
    20      8               f64 fs_hz
    28      8               f64 c_mps
    36      8               f64 t0_s
    44      8               f64 ring_radius_m
    52      8*n_detectors   f64 element angles (radians)
    ...     4*n_det*n_samp  f32 samples, detector-major
    end-4   4               u32 CRC32 of all preceding bytes

Image container ("PACTIMG1")::

    offset  size        field
    0       8           magic b"PACTIMG1"
    8       4           u32 version (1)
    12      4           u32 nx
    16      4           u32 ny
    20      8           f64 pixel_m
    28      8           f64 center_x_m
    36      8           f64 center_y_m
    44      4*nx*ny     f32 values, x-major (row i = column of constant x)
    end-4   4           u32 CRC32 of all preceding bytes
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .core import Image, ImageGrid, RingGeometry, Sinogram
from .exceptions import (
    BadMagicError,
    ChecksumError,
    DimensionError,
    TruncatedFileError,
)

SINOGRAM_MAGIC = b"PACTSGM1"
IMAGE_MAGIC = b"PACTIMG1"
_VERSION = 1

# Sanity bound on any single payload: 2^31 float32 entries (8 GiB).
_MAX_ELEMENTS = 2**31


def _crc(buf: bytes) -> int:
    return zlib.crc32(buf) & 0xFFFFFFFF


class _Reader:
    """Cursor over a byte buffer that raises TruncatedFileError on underrun."""

    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"{self.path}: expected {n} more bytes at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()

    def f32_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").copy()


def _check_magic(r: _Reader, magic: bytes):
    got = r.take(len(magic))
    if got != magic:
        raise BadMagicError(
            f"{r.path}: bad magic {got!r}, expected {magic!r}"
        )
    version = r.u32()
    if version != _VERSION:
        raise DimensionError(f"{r.path}: unsupported format version {version}")


def _check_dims(path: str, *dims: int):
    n = 1
    for d in dims:
        if d == 0:
            raise DimensionError(f"{path}: zero dimension in header")
        n *= d
    if n > _MAX_ELEMENTS:
        raise DimensionError(
            f"{path}: declared payload of {n} elements overflows the "
            f"{_MAX_ELEMENTS}-element limit"
        )


def _check_crc(r: _Reader):
    body = r.buf[: r.pos]
    stored = r.u32()
    if r.pos != len(r.buf):
        raise TruncatedFileError(
            f"{r.path}: {len(r.buf) - r.pos} unexpected trailing bytes"
        )
    actual = _crc(body)
    if stored != actual:
        raise ChecksumError(
            f"{r.path}: CRC mismatch (stored {stored:#010x}, computed {actual:#010x})"
        )


def save_sinogram(path, s: Sinogram) -> None:
    parts = [SINOGRAM_MAGIC]
    parts.append(struct.pack("<III", _VERSION, s.n_detectors, s.n_samples))
    parts.append(struct.pack("<dddd", s.fs_hz, s.c_mps, s.t0_s, s.geometry.radius_m))
    parts.append(np.ascontiguousarray(s.geometry.element_angles_rad, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(s.data, dtype="<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", _crc(body)))


def load_sinogram(path) -> Sinogram:
    p = str(path)
    r = _Reader(Path(path).read_bytes(), p)
    _check_magic(r, SINOGRAM_MAGIC)
    n_det, n_samp = r.u32(), r.u32()
    _check_dims(p, n_det, n_samp)
    fs, c, t0, radius = r.f64(), r.f64(), r.f64(), r.f64()
    angles = r.f64_array(n_det)
    data = r.f32_array(n_det * n_samp).astype(np.float64).reshape(n_det, n_samp)
    _check_crc(r)
    geom = RingGeometry(radius_m=radius, n_elements=n_det, element_angles_rad=angles)
    return Sinogram(data=data, fs_hz=fs, c_mps=c, geometry=geom, t0_s=t0)


def save_image(path, img: Image) -> None:
    g = img.grid
    parts = [IMAGE_MAGIC]
    parts.append(struct.pack("<III", _VERSION, g.nx, g.ny))
    parts.append(struct.pack("<ddd", g.pixel_m, g.center_x_m, g.center_y_m))
    parts.append(np.ascontiguousarray(img.values, dtype="<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", _crc(body)))


def load_image(path) -> Image:
    p = str(path)
    r = _Reader(Path(path).read_bytes(), p)
    _check_magic(r, IMAGE_MAGIC)
    nx, ny = r.u32(), r.u32()
    _check_dims(p, nx, ny)
    pixel, cx, cy = r.f64(), r.f64(), r.f64()
    values = r.f32_array(nx * ny).astype(np.float64).reshape(nx, ny)
    _check_crc(r)
    grid = ImageGrid(nx=nx, ny=ny, pixel_m=pixel, center_x_m=cx, center_y_m=cy)
    return Image(grid=grid, values=values)
