"""Self-supervised training of the coordinate network against measured RF
data through the acoustic forward operator.

Each training pair is one (detector, time sample) of the sinogram. The
network is evaluated on the jittered isochrone arcs at t +/- dt, combined
with the same trapezoid quadrature and finite difference as the raster
forward model, and compared with the measured sample. A per-step
closed-form least-squares gain aligns the sigmoid-bounded model output
with the arbitrary pressure units; at the optimal gain its derivative
drops out of the gradient, so backpropagation treats it as a constant.
The smoothed total-variation penalty is evaluated on a raster snapshot of
the model over the reconstruction grid every step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..core import Image, ImageGrid, Sinogram
from ..exceptions import DataError, NumericalError
from ..forward import ForwardConfig
from ..mb import tv_subgradient, tv_value
from .encoding import HashEncodingConfig
from .network import _MIN_ROWS, Adam, InrModel, MlpConfig, _sigmoid, new_model

_CHUNK = 131072
_PAIR_BLOCK_POINTS = 2_000_000


@dataclass(frozen=True)
class InrTrainConfig:
    """Optimizer, schedule and loss settings.

    The learning rate decays by lr_decay every lr_decay_every epochs;
    training stops once the epoch loss drops under stop_loss or after
    max_epochs. The least-squares gain is clamped to +/- gain_cap to keep
    early near-zero predictions from producing float32 overflows.
    """

    lr0: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 20
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eta_tv: float = 0.02
    stop_loss: float = 1e-4
    max_epochs: int = 500
    batch_size: int = 4096
    seed: int = 0
    gain_cap: float = 1e12
    divergence_factor: float = 10.0
    divergence_patience: int = 5

    def __post_init__(self):
        if min(self.lr0, self.lr_decay, self.stop_loss, self.gain_cap) <= 0:
            raise DataError("lr0, lr_decay, stop_loss and gain_cap must be positive")
        if self.eta_tv < 0:
            raise DataError(f"eta_tv must be >= 0, got {self.eta_tv}")
        if min(self.lr_decay_every, self.max_epochs, self.batch_size) < 1:
            raise DataError("schedule, epoch and batch settings must be >= 1")


def lr_at_epoch(cfg: InrTrainConfig, epoch: int) -> float:
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


class EpochStats(NamedTuple):
    epoch: int
    data_term: float
    tv_term: float
    total: float
    lr: float


@dataclass(frozen=True)
class TrainingBatch:
    """A mini-batch of (detector, time sample) pairs with one fresh random
    arc rotation per pair."""

    detectors: np.ndarray
    sample_indices: np.ndarray
    jitters: np.ndarray

    def __len__(self) -> int:
        return self.detectors.size

    def times(self, fwd: ForwardConfig) -> np.ndarray:
        return fwd.t0_s + self.sample_indices / fwd.fs_hz

    def arc_points(self, fwd: ForwardConfig, time_offset_s: float = 0.0) -> np.ndarray:
        """World coordinates (batch, M, 2) of the jittered arc samples at
        the pair times plus time_offset_s."""
        x, y, _ = _batch_arcs(
            fwd, self.detectors, self.times(fwd) + time_offset_s, self.jitters
        )
        return np.stack([x, y], axis=-1)


class BatchSampler:
    """Shuffles all (detector, sample) pairs each epoch and slices them into
    batches, drawing one jitter angle per pair per batch."""

    def __init__(self, rng: np.random.Generator, n_detectors: int, n_samples: int,
                 fwd: ForwardConfig, batch_size: int):
        self.rng = rng
        self.n_detectors = n_detectors
        self.n_samples = n_samples
        self.batch_size = batch_size
        self.jitter_halfwidth = fwd.jitter_halfwidth()

    def epoch(self):
        n = self.n_detectors * self.n_samples
        perm = self.rng.permutation(n)
        for lo in range(0, n, self.batch_size):
            idx = perm[lo : lo + self.batch_size]
            yield TrainingBatch(
                detectors=(idx // self.n_samples).astype(np.int64),
                sample_indices=(idx % self.n_samples).astype(np.int64),
                jitters=self.rng.uniform(
                    -self.jitter_halfwidth, self.jitter_halfwidth, idx.size
                ),
            )


def sample_training_batch(rng: np.random.Generator, s: Sinogram, fwd: ForwardConfig,
                          batch_size: int) -> TrainingBatch:
    """One shuffled batch; :class:`BatchSampler` cycles whole epochs."""
    sampler = BatchSampler(rng, s.n_detectors, s.n_samples, fwd, batch_size)
    return next(iter(sampler.epoch()))


def _batch_arcs(fwd: ForwardConfig, detectors, times, jitters):
    """Arc sample world coordinates for mixed-detector batches."""
    geom = fwd.geometry
    ang = geom.element_angles_rad[detectors]
    x0 = geom.radius_m * np.cos(ang)
    y0 = geom.radius_m * np.sin(ang)
    m = fwd.m_arc_points
    alpha = fwd.alpha
    offs = np.pi - 0.5 * alpha + np.arange(m) * (alpha / (m - 1))
    phi = (ang + jitters)[:, None] + offs[None, :]
    r = np.maximum(fwd.c_mps * np.asarray(times), 0.0)
    x = r[:, None] * np.cos(phi) + x0[:, None]
    y = r[:, None] * np.sin(phi) + y0[:, None]
    return x, y, r


def _signal_geometry(fwd: ForwardConfig, batch: TrainingBatch):
    """Flattened in-grid arc samples for the +/- dt arcs of a batch.

    Returns unit coordinates (n, 2), signed quadrature weights (n,) and the
    owning pair index (n,). Points outside the grid square carry zero
    weight and are dropped, mirroring the raster operator's zero padding.
    """
    grid = fwd.grid
    b = len(batch)
    t = batch.times(fwd)
    trap = fwd.trapezoid_weights()
    scale = fwd.point_weight_scale() / (2.0 * fwd.dt_deriv_s)
    x_min = grid.center_x_m - 0.5 * grid.width_m
    y_min = grid.center_y_m - 0.5 * grid.height_m
    x_max = x_min + grid.width_m
    y_max = y_min + grid.height_m

    us, ws, segs = [], [], []
    block = max(1, _PAIR_BLOCK_POINTS // (2 * fwd.m_arc_points))
    for lo in range(0, b, block):
        sl = slice(lo, min(lo + block, b))
        nb = sl.stop - sl.start
        det2 = np.concatenate([batch.detectors[sl]] * 2)
        jit2 = np.concatenate([batch.jitters[sl]] * 2)
        t2 = np.concatenate([t[sl] + fwd.dt_deriv_s, t[sl] - fwd.dt_deriv_s])
        sign2 = np.concatenate([np.ones(nb), -np.ones(nb)])
        x, y, r = _batch_arcs(fwd, det2, t2, jit2)
        inside = (
            (x >= x_min) & (x <= x_max) & (y >= y_min) & (y <= y_max)
            & (r > 0)[:, None]
        )
        w = (sign2 * scale)[:, None] * trap[None, :]
        seg = np.broadcast_to(
            np.concatenate([np.arange(sl.start, sl.stop)] * 2)[:, None], x.shape
        )
        keep = inside.ravel()
        us.append(
            np.stack(
                [
                    (x.ravel()[keep] - x_min) / grid.width_m,
                    (y.ravel()[keep] - y_min) / grid.height_m,
                ],
                axis=1,
            )
        )
        ws.append(np.broadcast_to(w, x.shape).ravel()[keep])
        segs.append(seg.ravel()[keep])
    if not us:
        return np.zeros((0, 2)), np.zeros(0), np.zeros(0, dtype=np.int64), b
    return np.concatenate(us), np.concatenate(ws), np.concatenate(segs), b


def predicted_signal(model: InrModel, batch: TrainingBatch, fwd: ForwardConfig) -> np.ndarray:
    """Model-predicted pressure samples for a batch: network values on the
    +/- dt arcs combined by the quadrature and finite-difference weights."""
    u01, w, seg, b = _signal_geometry(fwd, batch)
    if u01.shape[0] == 0:
        return np.zeros(b)
    h = model.query_unit(u01).astype(np.float64)
    return np.bincount(seg, weights=h * w, minlength=b)


def _backprop_points(model: InrModel, u01: np.ndarray, d_out: np.ndarray,
                     grads: list[np.ndarray]) -> None:
    """Accumulate parameter gradients given d(loss)/d(model output) at the
    given unit-square points."""
    n = u01.shape[0]
    n_tables = len(model.encoding.tables)
    for lo in range(0, n, _CHUNK):
        block = u01[lo : lo + _CHUNK]
        dv = d_out[lo : lo + _CHUNK]
        nb = block.shape[0]
        if nb < _MIN_ROWS:
            block = np.vstack([block, np.zeros((_MIN_ROWS - nb, 2))])
            dv = np.concatenate([dv, np.zeros(_MIN_ROWS - nb)])
        feats, enc_cache = model.encoding.encode(block, want_cache=True)
        z, mlp_cache = model.mlp.forward(feats, want_cache=True)
        s = _sigmoid(z)
        dz = (dv * s * (1.0 - s)).astype(model.dtype)
        grads_w, grads_b, dfeats = model.mlp.backward(mlp_cache, dz)
        for i, (gw, gb) in enumerate(zip(grads_w, grads_b)):
            grads[n_tables + 2 * i] += gw
            grads[n_tables + 2 * i + 1] += gb
        model.encoding.backward(enc_cache, dfeats, grads[:n_tables])


def _grid_unit_coords(grid: ImageGrid) -> np.ndarray:
    """Unit coordinates of every pixel center, x-major like Image values."""
    ux = (np.arange(grid.nx) + 0.5) / grid.nx
    uy = (np.arange(grid.ny) + 0.5) / grid.ny
    return np.stack([np.repeat(ux, grid.ny), np.tile(uy, grid.nx)], axis=1)


def _gain(p_pred: np.ndarray, p_meas: np.ndarray, cap: float) -> float:
    """Least-squares scale aligning predictions with measurements.

    At the uncapped optimum the residual is orthogonal to the prediction,
    so the gradient of the gained loss rotates predictions toward the data
    instead of shrinking them; the cap is only a non-finite guard.
    """
    den = float(p_pred @ p_pred)
    if den == 0.0:
        return 0.0
    g = float(p_pred @ p_meas) / den
    return float(np.clip(g, -cap, cap))


def full_loss(model: InrModel, batch: TrainingBatch, p_meas: np.ndarray,
              fwd: ForwardConfig, eta_tv: float, gain_cap: float = 1e12,
              signal_scale: float = 1.0):
    """(data, tv, total) of the training loss for a frozen batch.

    signal_scale is the fixed constant standing in for the omitted physical
    factors of the forward model; see :func:`calibrate_signal_scale`.
    """
    p = predicted_signal(model, batch, fwd) * signal_scale
    g = _gain(p, p_meas, gain_cap)
    resid = g * p - p_meas
    data = float(resid @ resid) / len(batch)
    u_px = _grid_unit_coords(model.grid)
    h_px = model.query_unit(u_px).astype(np.float64).reshape(model.grid.nx, model.grid.ny)
    tv = tv_value(h_px) / h_px.size
    return data, tv, data + eta_tv * tv


def loss_and_grads(model: InrModel, batch: TrainingBatch, p_meas: np.ndarray,
                   fwd: ForwardConfig, eta_tv: float, gain_cap: float = 1e12,
                   signal_scale: float = 1.0):
    """Training loss parts and analytic gradients for every parameter.

    Gradients flow through the quadrature weights (fixed), the MLP and the
    hash interpolation; the raster TV term backpropagates through the pixel
    center queries.
    """
    grads = model.zero_grads()
    u01, w, seg, b = _signal_geometry(fwd, batch)
    if u01.shape[0]:
        h = model.query_unit(u01).astype(np.float64)
        p = np.bincount(seg, weights=h * w, minlength=b) * signal_scale
    else:
        p = np.zeros(b)
    g = _gain(p, p_meas, gain_cap)
    resid = g * p - p_meas
    data = float(resid @ resid) / b
    if u01.shape[0]:
        d_h = (2.0 * g * signal_scale / b) * resid[seg] * w
        _backprop_points(model, u01, d_h, grads)

    u_px = _grid_unit_coords(model.grid)
    h_px = model.query_unit(u_px).astype(np.float64).reshape(model.grid.nx, model.grid.ny)
    tv = tv_value(h_px) / h_px.size
    if eta_tv > 0:
        d_px = (eta_tv / h_px.size) * tv_subgradient(h_px)
        _backprop_points(model, u_px, d_px.ravel(), grads)
    return (data, tv, data + eta_tv * tv), grads


def calibrate_signal_scale(model: InrModel, pm: np.ndarray, fwd: ForwardConfig,
                           max_pairs: int = 4096) -> float:
    """Fixed stand-in for the forward model's omitted physical constants:
    the RMS ratio between the measured data and the fresh model's
    predictions on a deterministic probe batch.

    Folding this single constant into the prediction path keeps the
    per-step least-squares gain near unity, so gradient magnitudes stay on
    one scale across training instead of swinging with the raw pressure
    units.
    """
    n_det, n_samp = pm.shape
    n = min(max_pairs, n_det * n_samp)
    idx = np.arange(n)
    probe = TrainingBatch(
        detectors=(idx // n_samp).astype(np.int64),
        sample_indices=(idx % n_samp).astype(np.int64),
        jitters=np.zeros(n),
    )
    p0 = predicted_signal(model, probe, fwd)
    pred_rms = float(np.sqrt(np.mean(p0 * p0)))
    meas_rms = float(np.sqrt(np.mean(pm[probe.detectors, probe.sample_indices] ** 2)))
    if pred_rms == 0.0 or meas_rms == 0.0:
        return 1.0
    return meas_rms / pred_rms


def inr_train(
    s: Sinogram,
    fwd: ForwardConfig,
    enc_cfg: HashEncodingConfig | None = None,
    mlp_cfg: MlpConfig | None = None,
    train_cfg: InrTrainConfig | None = None,
) -> tuple[InrModel, list[EpochStats]]:
    """Fit the coordinate network to a measured sinogram.

    The sinogram is max-abs normalized; model, optimizer moments and batch
    order all derive from train_cfg.seed, so fixed seeds reproduce loss
    traces bit for bit.
    """
    if not fwd.matches(s):
        raise DataError("sinogram does not match the forward configuration")
    cfg = train_cfg or InrTrainConfig()
    if enc_cfg is None:
        enc_cfg = HashEncodingConfig(
            finest_resolution=max(fwd.grid.nx, fwd.grid.ny)
        )
    scale = float(np.abs(s.data).max())
    if scale == 0.0:
        scale = 1.0
    pm_full = s.data / scale

    rng = np.random.default_rng(cfg.seed)
    model = new_model(enc_cfg, fwd.grid, rng, mlp_cfg=mlp_cfg, dtype=np.float32)
    signal_scale = calibrate_signal_scale(model, pm_full, fwd)
    adam = Adam(
        model.parameters(), beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
        eps=cfg.adam_eps,
    )
    sampler = BatchSampler(rng, s.n_detectors, s.n_samples, fwd, cfg.batch_size)

    trace: list[EpochStats] = []
    initial_total = None
    bad_epochs = 0
    for epoch in range(cfg.max_epochs):
        lr = lr_at_epoch(cfg, epoch)
        data_sum = 0.0
        tv_sum = 0.0
        n_steps = 0
        n_pairs = 0
        for batch in sampler.epoch():
            pm_b = pm_full[batch.detectors, batch.sample_indices]
            (data, tv, _), grads = loss_and_grads(
                model, batch, pm_b, fwd, cfg.eta_tv, cfg.gain_cap,
                signal_scale=signal_scale,
            )
            adam.step(model.parameters(), grads, lr)
            data_sum += data * len(batch)
            tv_sum += tv
            n_steps += 1
            n_pairs += len(batch)
        epoch_data = data_sum / n_pairs
        epoch_tv = tv_sum / n_steps
        epoch_total = epoch_data + cfg.eta_tv * epoch_tv
        trace.append(EpochStats(epoch, epoch_data, epoch_tv, epoch_total, lr))
        if not np.isfinite(epoch_total):
            raise NumericalError(f"training loss became non-finite at epoch {epoch}")
        if initial_total is None:
            initial_total = epoch_total
        elif epoch_total > cfg.divergence_factor * initial_total:
            bad_epochs += 1
            if bad_epochs >= cfg.divergence_patience:
                raise NumericalError(
                    f"training diverged: loss above {cfg.divergence_factor}x the "
                    f"initial value for {bad_epochs} consecutive epochs"
                )
        else:
            bad_epochs = 0
        if epoch_total < cfg.stop_loss:
            break
    return model, trace


def render_image(model: InrModel, grid: ImageGrid | None = None) -> Image:
    """Raster snapshot of the model at pixel centers."""
    return model.render(grid)
