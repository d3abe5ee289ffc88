"""Model-based reconstruction: non-negative least squares with isotropic
total-variation regularization, minimized by projected gradient descent
with Armijo backtracking.

The objective, in max-normalized data units, is

    f(H) = mean((A H - p)^2) + lambda * TV(H) / n_pixels

with TV the epsilon-smoothed isotropic total variation (forward
differences, Neumann boundary). Normalizing both terms per-sample keeps
the regularization weight transferable across acquisition sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .core import Image, Sinogram
from .exceptions import DataError, NumericalError
from .forward import ForwardConfig, adjoint_apply, assemble_matrix, forward_apply

TV_EPS = 1e-8


def tv_value(values, eps: float = TV_EPS) -> float:
    """Smoothed isotropic total variation: sum of sqrt(dx^2 + dy^2 + eps^2).

    Forward differences with Neumann boundary (zero difference past the
    last row/column); a constant image therefore scores n_pixels * eps.
    """
    v = values.values if isinstance(values, Image) else np.asarray(values, dtype=np.float64)
    dx = np.zeros_like(v)
    dy = np.zeros_like(v)
    dx[:-1, :] = v[1:, :] - v[:-1, :]
    dy[:, :-1] = v[:, 1:] - v[:, :-1]
    return float(np.sqrt(dx * dx + dy * dy + eps * eps).sum())


def tv_subgradient(values, eps: float = TV_EPS) -> np.ndarray:
    """Gradient of :func:`tv_value` with respect to every pixel."""
    v = values.values if isinstance(values, Image) else np.asarray(values, dtype=np.float64)
    dx = np.zeros_like(v)
    dy = np.zeros_like(v)
    dx[:-1, :] = v[1:, :] - v[:-1, :]
    dy[:, :-1] = v[:, 1:] - v[:, :-1]
    s = np.sqrt(dx * dx + dy * dy + eps * eps)
    px = dx / s
    py = dy / s
    g = -px - py
    g[1:, :] += px[:-1, :]
    g[:, 1:] += py[:, :-1]
    return g


@dataclass(frozen=True)
class MbConfig:
    """Projected-gradient NNLS-TV settings.

    lambda_tv is validated against the [0, 0.2] search range unless
    override_lambda_range is set. The step size starts from the inverse of
    a power-iteration Lipschitz estimate and is halved until the Armijo
    sufficient-decrease condition holds.
    """

    lambda_tv: float = 0.01
    n_iters: int = 50
    max_backtracks: int = 30
    power_iters: int = 12
    seed: int = 0
    use_assembled_matrix: bool = False
    matrix_memory_budget_bytes: int = 768 * 2**20
    lipschitz_estimate: float | None = None
    override_lambda_range: bool = False

    def __post_init__(self):
        if self.lambda_tv < 0:
            raise DataError(f"lambda_tv must be >= 0, got {self.lambda_tv}")
        if self.lambda_tv > 0.2 and not self.override_lambda_range:
            raise DataError(
                f"lambda_tv={self.lambda_tv} is outside the validated [0, 0.2] "
                "range; set override_lambda_range=True to force it"
            )
        if self.n_iters <= 0:
            raise DataError(f"n_iters must be positive, got {self.n_iters}")


class IterationStats(NamedTuple):
    iteration: int
    data_term: float
    tv_term: float
    total: float
    step_size: float


def estimate_lipschitz(
    apply_fwd: Callable[[np.ndarray], np.ndarray],
    apply_adj: Callable[[np.ndarray], np.ndarray],
    x_shape: tuple[int, int],
    n_iters: int = 12,
    seed: int = 0,
) -> float:
    """Power-iteration estimate of the largest eigenvalue of A^T A."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x_shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iters):
        w = apply_adj(apply_fwd(v))
        lam = float(np.linalg.norm(w.ravel()))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def minimize_nnls_tv(
    p_m: np.ndarray,
    apply_fwd: Callable[[np.ndarray], np.ndarray],
    apply_adj: Callable[[np.ndarray], np.ndarray],
    x_shape: tuple[int, int],
    cfg: MbConfig,
) -> tuple[np.ndarray, list[IterationStats]]:
    """Core projected-gradient loop, operator-agnostic for testability.

    Returns the final iterate (elementwise >= 0) and the per-iteration loss
    trace; row 0 records the initial point and the trace is non-increasing
    by construction (steps that fail to decrease the loss are rejected).
    """
    n_data = p_m.size
    n_px = x_shape[0] * x_shape[1]
    lam = cfg.lambda_tv

    def loss_parts(resid, x):
        data = float(np.vdot(resid, resid).real) / n_data
        tv = tv_value(x) / n_px
        return data, tv, data + lam * tv

    if cfg.lipschitz_estimate is not None:
        l_ata = cfg.lipschitz_estimate
    else:
        l_ata = estimate_lipschitz(
            apply_fwd, apply_adj, x_shape, n_iters=cfg.power_iters, seed=cfg.seed
        )
    l_f = 2.0 * l_ata / n_data
    eta0 = 1.0 / l_f if l_f > 0 else 1.0

    x = np.zeros(x_shape, dtype=np.float64)
    resid = apply_fwd(x) - p_m
    data, tv, total = loss_parts(resid, x)
    if not np.isfinite(total):
        raise NumericalError(f"initial loss is not finite ({total})")
    trace = [IterationStats(0, data, tv, total, 0.0)]

    for k in range(1, cfg.n_iters + 1):
        grad = 2.0 / n_data * apply_adj(resid) + (lam / n_px) * tv_subgradient(x)
        eta = eta0
        accepted = False
        x_new, resid_new, parts_new = x, resid, (data, tv, total)
        for _ in range(cfg.max_backtracks + 1):
            cand = np.maximum(x - eta * grad, 0.0)
            step = cand - x
            resid_c = apply_fwd(cand) - p_m
            d_c, t_c, f_c = loss_parts(resid_c, cand)
            if not np.isfinite(f_c):
                raise NumericalError(f"loss became non-finite at iteration {k}")
            # sufficient decrease against the local quadratic model
            bound = total + float(np.vdot(grad, step).real) + float(
                np.vdot(step, step).real
            ) / (2.0 * eta)
            if f_c <= bound:
                x_new, resid_new, parts_new = cand, resid_c, (d_c, t_c, f_c)
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            # keep whichever point does not increase the loss
            cand = np.maximum(x - eta * grad, 0.0)
            resid_c = apply_fwd(cand) - p_m
            d_c, t_c, f_c = loss_parts(resid_c, cand)
            if f_c <= total:
                x_new, resid_new, parts_new = cand, resid_c, (d_c, t_c, f_c)
        x, resid = x_new, resid_new
        data, tv, total = parts_new
        trace.append(IterationStats(k, data, tv, total, eta))
    return x, trace


def mb_reconstruct(
    s: Sinogram,
    cfg: MbConfig,
    fwd: ForwardConfig,
    n_threads: int = 1,
) -> tuple[Image, list[IterationStats]]:
    """TV-regularized non-negative least-squares reconstruction.

    The measured sinogram is max-abs normalized before optimization and the
    result rescaled back, so lambda_tv acts on dimensionless data. Runs
    exactly cfg.n_iters iterations.
    """
    if not fwd.matches(s):
        raise DataError("sinogram does not match the forward configuration")
    scale = float(np.abs(s.data).max())
    if scale == 0.0:
        scale = 1.0
    p_m = s.data / scale

    if cfg.use_assembled_matrix:
        mat = assemble_matrix(fwd, memory_budget_bytes=cfg.matrix_memory_budget_bytes)
        mat_t = mat.T.tocsr()
        shape = (fwd.grid.nx, fwd.grid.ny)

        def apply_fwd(x):
            return (mat @ x.ravel()).reshape(s.data.shape)

        def apply_adj(y):
            return (mat_t @ y.ravel()).reshape(shape)

    else:

        def apply_fwd(x):
            return forward_apply(fwd, x, n_threads=n_threads)

        def apply_adj(y):
            return adjoint_apply(fwd, y, n_threads=n_threads)

    x, trace = minimize_nnls_tv(
        p_m, apply_fwd, apply_adj, (fwd.grid.nx, fwd.grid.ny), cfg
    )
    return Image(grid=fwd.grid, values=x * scale), trace
