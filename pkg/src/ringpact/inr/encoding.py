"""Multiresolution hash encoding of 2-D coordinates.

Each level lays a virtual grid of geometrically growing resolution over the
unit square. A query point is located in its cell, the four corner vertices
are mapped to rows of a learned feature table, and the corner features are
bilinearly blended. Levels whose full vertex grid fits in the table are
indexed directly; finer levels hash vertex coordinates by XOR-ing
coordinate-wise multiplications with large primes, modulo the table size.
The per-level features are concatenated into the encoding vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DataError

_PRIME_X = np.uint32(2654435761)
_PRIME_Y = np.uint32(805459861)
INIT_SCALE = 1e-4


@dataclass(frozen=True)
class HashEncodingConfig:
    n_levels: int = 16
    features_per_level: int = 2
    table_size_log2: int = 19
    base_resolution: int = 16
    finest_resolution: int = 512

    def __post_init__(self):
        if self.n_levels < 1:
            raise DataError(f"n_levels must be >= 1, got {self.n_levels}")
        if self.features_per_level < 1:
            raise DataError("features_per_level must be >= 1")
        if not 1 <= self.table_size_log2 <= 30:
            raise DataError("table_size_log2 must be in [1, 30]")
        if self.base_resolution < 1 or self.finest_resolution < self.base_resolution:
            raise DataError("need finest_resolution >= base_resolution >= 1")

    @property
    def output_dim(self) -> int:
        return self.n_levels * self.features_per_level

    @property
    def hash_table_size(self) -> int:
        return 1 << self.table_size_log2

    def level_resolutions(self) -> np.ndarray:
        """Cells per axis at each level, geometric from base to finest."""
        if self.n_levels == 1:
            return np.asarray([self.finest_resolution], dtype=np.int64)
        growth = (self.finest_resolution / self.base_resolution) ** (
            1.0 / (self.n_levels - 1)
        )
        res = np.round(self.base_resolution * growth ** np.arange(self.n_levels))
        return res.astype(np.int64)


class HashEncoding:
    """Learned feature tables plus the (fixed) interpolation machinery."""

    def __init__(self, cfg: HashEncodingConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.resolutions = cfg.level_resolutions()
        self.direct: list[bool] = []
        self.tables: list[np.ndarray] = []
        for res in self.resolutions:
            dense = (res + 1) * (res + 1)
            direct = dense <= cfg.hash_table_size
            size = int(dense) if direct else cfg.hash_table_size
            self.direct.append(direct)
            self.tables.append(
                rng.uniform(-INIT_SCALE, INIT_SCALE, size=(size, cfg.features_per_level))
                .astype(self.dtype)
            )

    def vertex_index(self, level: int, ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
        """Table row of vertex (ix, iy) at the given level."""
        res = int(self.resolutions[level])
        if self.direct[level]:
            return ix * (res + 1) + iy
        h = (ix.astype(np.uint32) * _PRIME_X) ^ (iy.astype(np.uint32) * _PRIME_Y)
        return (h & np.uint32(self.cfg.hash_table_size - 1)).astype(np.int64)

    def _corners(self, u: np.ndarray, level: int):
        """Corner indices and bilinear weights for unit-square points (n, 2)."""
        res = int(self.resolutions[level])
        pos = u * res
        c0 = np.floor(pos).astype(np.int64)
        np.clip(c0, 0, res - 1, out=c0)
        w = (pos - c0).astype(self.dtype)
        ix, iy = c0[:, 0], c0[:, 1]
        wx, wy = w[:, 0], w[:, 1]
        idx = (
            self.vertex_index(level, ix, iy),
            self.vertex_index(level, ix + 1, iy),
            self.vertex_index(level, ix, iy + 1),
            self.vertex_index(level, ix + 1, iy + 1),
        )
        wgt = ((1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy)
        return idx, wgt

    def encode(self, u01: np.ndarray, want_cache: bool = False):
        """Encode points (n, 2) with coordinates clamped to [0, 1].

        Returns (features, cache); the cache holds per-level corner indices
        and weights for :meth:`backward`.
        """
        u = np.clip(np.asarray(u01, dtype=np.float64), 0.0, 1.0)
        n = u.shape[0]
        f_dim = self.cfg.features_per_level
        out = np.empty((n, self.cfg.output_dim), dtype=self.dtype)
        cache = [] if want_cache else None
        for level, table in enumerate(self.tables):
            idx, wgt = self._corners(u, level)
            acc = table[idx[0]] * wgt[0][:, None]
            for k in (1, 2, 3):
                acc += table[idx[k]] * wgt[k][:, None]
            out[:, level * f_dim : (level + 1) * f_dim] = acc
            if want_cache:
                cache.append((idx, wgt))
        return out, cache

    def backward(self, cache, grad_features: np.ndarray, out_grads: list[np.ndarray]):
        """Scatter feature gradients onto the four corner rows per level,
        accumulating into out_grads (one array per table)."""
        f_dim = self.cfg.features_per_level
        for level, (idx, wgt) in enumerate(cache):
            g = grad_features[:, level * f_dim : (level + 1) * f_dim]
            rows = np.concatenate(idx)
            size = out_grads[level].shape[0]
            for f in range(f_dim):
                vals = np.concatenate([g[:, f] * wgt[k] for k in range(4)])
                out_grads[level][:, f] += np.bincount(rows, weights=vals, minlength=size)
