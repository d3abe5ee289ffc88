"""The coordinate network: hash encoding -> small ReLU MLP -> sigmoid,
plus a from-scratch Adam optimizer and a binary checkpoint format.

Evaluation is batch-size invariant down to the bit: hidden layers use wide
GEMMs whose per-row results do not depend on the number of rows, the scalar
head is computed as a row-local product-sum, and tiny inputs are padded to
a minimum row count so no matrix-vector fast path is taken.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import Image, ImageGrid
from ..exceptions import DataError
from ..formats import _Reader
from .encoding import HashEncoding, HashEncodingConfig

MODEL_MAGIC = b"PACTINR1"
_VERSION = 1
_MIN_ROWS = 8
_QUERY_CHUNK = 131072


@dataclass(frozen=True)
class MlpConfig:
    in_features: int
    hidden_layers: int = 2
    hidden_width: int = 128

    def __post_init__(self):
        if self.in_features < 1 or self.hidden_layers < 1 or self.hidden_width < 1:
            raise DataError(f"invalid MLP configuration: {self}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


class Mlp:
    """Fully connected ReLU network with a linear scalar head."""

    def __init__(self, cfg: MlpConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        dims = [cfg.in_features] + [cfg.hidden_width] * cfg.hidden_layers + [1]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(
                rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(self.dtype)
            )
            self.biases.append(
                rng.uniform(-bound, bound, size=(fan_out,)).astype(self.dtype)
            )

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Pre-sigmoid scalar output (n,); cache holds layer inputs."""
        cache = [x] if want_cache else None
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            if want_cache:
                cache.append(h)
        # row-local head: batch-size-invariant unlike a (n,width)@(width,1) GEMM
        w_out = self.weights[-1][:, 0]
        z = (h * w_out).sum(axis=1) + self.biases[-1][0]
        return z, cache

    def backward(self, cache, dz: np.ndarray):
        """Weight/bias gradients, plus the gradient w.r.t. the input
        features, given d(loss)/d(pre-sigmoid)."""
        h_last = cache[-1]
        w_out = self.weights[-1][:, 0]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        grads_w[-1] = (h_last * dz[:, None]).sum(axis=0)[:, None].astype(self.dtype)
        grads_b[-1] = np.asarray([dz.sum()], dtype=self.dtype)
        dh = dz[:, None] * w_out[None, :]
        for li in range(len(self.weights) - 2, -1, -1):
            h_out = cache[li + 1]
            dzl = dh * (h_out > 0)
            grads_w[li] = (cache[li].T @ dzl).astype(self.dtype)
            grads_b[li] = dzl.sum(axis=0).astype(self.dtype)
            dh = dzl @ self.weights[li].T  # input-feature gradient once li == 0
        return grads_w, grads_b, dh


class InrModel:
    """Continuous image representation over the grid square.

    World coordinates are normalized into the unit square spanned by the
    grid extent (out-of-square queries clamp to the boundary), encoded,
    passed through the MLP, and squashed by a sigmoid into (0, 1).
    """

    def __init__(self, encoding: HashEncoding, mlp: Mlp, grid: ImageGrid):
        if mlp.cfg.in_features != encoding.cfg.output_dim:
            raise DataError("MLP input width does not match the encoding output")
        if mlp.dtype != encoding.dtype:
            raise DataError("encoding and MLP dtypes differ")
        self.encoding = encoding
        self.mlp = mlp
        self.grid = grid
        self.x_min = grid.center_x_m - 0.5 * grid.width_m
        self.y_min = grid.center_y_m - 0.5 * grid.height_m

    @property
    def dtype(self):
        return self.mlp.dtype

    def to_unit(self, points_world: np.ndarray) -> np.ndarray:
        p = np.asarray(points_world, dtype=np.float64)
        u = np.empty_like(p)
        u[..., 0] = (p[..., 0] - self.x_min) / self.grid.width_m
        u[..., 1] = (p[..., 1] - self.y_min) / self.grid.height_m
        return u

    def query_unit(self, u01: np.ndarray) -> np.ndarray:
        """Model values at unit-square coordinates (n, 2) -> (n,) in (0, 1)."""
        u = np.asarray(u01, dtype=np.float64).reshape(-1, 2)
        n = u.shape[0]
        out = np.empty(n, dtype=self.dtype)
        for lo in range(0, n, _QUERY_CHUNK):
            block = u[lo : lo + _QUERY_CHUNK]
            nb = block.shape[0]
            if nb < _MIN_ROWS:
                block = np.vstack([block, np.zeros((_MIN_ROWS - nb, 2))])
            feats, _ = self.encoding.encode(block)
            z, _ = self.mlp.forward(feats)
            out[lo : lo + nb] = _sigmoid(z[:nb])
        return out

    def query_world(self, points_world: np.ndarray) -> np.ndarray:
        return self.query_unit(self.to_unit(points_world).reshape(-1, 2))

    def render(self, grid: ImageGrid | None = None) -> Image:
        """Evaluate at every pixel center of the given (default: own) grid."""
        g = grid if grid is not None else self.grid
        xs = g.pixel_centers_x()
        ys = g.pixel_centers_y()
        pts = np.stack(
            [np.repeat(xs, g.ny), np.tile(ys, g.nx)], axis=1
        )
        vals = self.query_world(pts).astype(np.float64).reshape(g.nx, g.ny)
        return Image(grid=g, values=vals)

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays: hash tables, then weights/biases per layer."""
        params = list(self.encoding.tables)
        for w, b in zip(self.mlp.weights, self.mlp.biases):
            params.extend([w, b])
        return params

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros(p.shape, dtype=np.float64) for p in self.parameters()]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel().astype(np.float64) for p in self.parameters()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for p in self.parameters():
            n = p.size
            p[...] = vec[pos : pos + n].reshape(p.shape).astype(p.dtype)
            pos += n
        if pos != vec.size:
            raise DataError(f"flat vector length {vec.size} != parameter count {pos}")


def new_model(
    enc_cfg: HashEncodingConfig,
    grid: ImageGrid,
    rng: np.random.Generator,
    mlp_cfg: MlpConfig | None = None,
    dtype=np.float32,
) -> InrModel:
    """Fresh model; hash tables are drawn before MLP weights so a fixed rng
    seed pins every parameter."""
    encoding = HashEncoding(enc_cfg, rng, dtype=dtype)
    if mlp_cfg is None:
        mlp_cfg = MlpConfig(in_features=enc_cfg.output_dim)
    mlp = Mlp(mlp_cfg, rng, dtype=dtype)
    return InrModel(encoding, mlp, grid)


class Adam:
    """Standard Adam with bias correction; moments start at zero, so a step
    with zero gradient from the fresh state leaves parameters unchanged.

    Moments and update arithmetic stay in float64 regardless of the
    parameter dtype: early training can see very large gradient scales
    (the least-squares signal gain is almost unconstrained while the model
    is still flat), which would overflow float32 second moments.
    """

    def __init__(self, params: list[np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in params]

    def step(self, params: list[np.ndarray], grads, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = np.asarray(g, dtype=np.float64)
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def save_model(path, model: InrModel) -> None:
    """Checkpoint: config header plus all parameter arrays as f32."""
    g = model.grid
    e = model.encoding.cfg
    m = model.mlp.cfg
    parts = [MODEL_MAGIC]
    parts.append(
        struct.pack(
            "<8I",
            _VERSION,
            e.n_levels,
            e.features_per_level,
            e.table_size_log2,
            e.base_resolution,
            e.finest_resolution,
            m.hidden_layers,
            m.hidden_width,
        )
    )
    parts.append(struct.pack("<IId", g.nx, g.ny, g.pixel_m))
    parts.append(struct.pack("<dd", g.center_x_m, g.center_y_m))
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        parts.append(struct.pack("<I", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}I", *p.shape))
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_model(path) -> InrModel:
    p = str(path)
    r = _Reader(Path(path).read_bytes(), p)
    from ..formats import _check_crc, _check_magic

    _check_magic(r, MODEL_MAGIC)
    n_levels, feats, log2, base, finest, hidden_layers, hidden_width = (
        r.u32() for _ in range(7)
    )
    nx, ny = r.u32(), r.u32()
    pixel = r.f64()
    cx, cy = r.f64(), r.f64()
    n_arrays = r.u32()
    arrays = []
    for _ in range(n_arrays):
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arrays.append(r.f32_array(count).reshape(shape))
    _check_crc(r)

    enc_cfg = HashEncodingConfig(
        n_levels=n_levels,
        features_per_level=feats,
        table_size_log2=log2,
        base_resolution=base,
        finest_resolution=finest,
    )
    grid = ImageGrid(nx=nx, ny=ny, pixel_m=pixel, center_x_m=cx, center_y_m=cy)
    mlp_cfg = MlpConfig(
        in_features=enc_cfg.output_dim,
        hidden_layers=hidden_layers,
        hidden_width=hidden_width,
    )
    model = new_model(enc_cfg, grid, np.random.default_rng(0), mlp_cfg=mlp_cfg)
    params = model.parameters()
    if len(params) != len(arrays):
        raise DataError(f"{p}: checkpoint carries {len(arrays)} arrays, expected {len(params)}")
    for tgt, src in zip(params, arrays):
        if tgt.shape != src.shape:
            raise DataError(f"{p}: parameter shape mismatch {src.shape} vs {tgt.shape}")
        tgt[...] = src
    return model
