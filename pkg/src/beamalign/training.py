"""End-to-end unrolled training of the sensing policy.

A rollout alternates policy forward passes with simulated measurements and
Bayesian posterior updates for ``num_frames`` frames, entirely through the
autodiff dispatchers, so the cross-entropy (on-grid) or squared-error
(gridless) loss differentiates through the measurement model and, when the
fading tracker is active, through the tracker recursion itself.

The posterior is carried in log domain (normalized by a max-shifted
log-sum-exp each frame) so gradients stay finite even when masses underflow
linearly.  Complex quantities are paired real channels throughout.
"""
from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .channel import ArrayConfig, grid_angles, snr_to_power, steering_matrix
from .posterior import uniform_gridless_posterior

__all__ = [
    "TrainConfig",
    "Workspace",
    "Episode",
    "build_workspace",
    "draw_episodes",
    "rollout",
    "RolloutResult",
    "loss_ongrid",
    "loss_gridless",
    "episode_loss",
    "loss_and_grad",
    "AdamState",
    "adam_step",
    "learning_rate",
    "train",
]

_FADING_MODES = ("known", "mmse", "kalman")
_STREAM_VALIDATION = 2**63
_STREAM_INIT = 2**63 + 1


@dataclass(frozen=True)
class TrainConfig:
    scenario: str = "on-grid"            # on-grid | gridless
    fading: str = "known"                # known | mmse | kalman
    num_antennas: int = 16
    grid_size: int = 16                  # hypotheses N (on-grid)
    num_coarse: int = 16                 # intervals N_c (gridless)
    samples_per_interval: int = 8        # N_s (gridless)
    num_frames: int = 8
    snr_db: float = 0.0
    snr_range_db: tuple | None = None    # (lo, hi) -> uniform per episode
    phi_span: tuple = (-np.pi / 3, np.pi / 3)
    hidden: tuple = (128, 128, 128)
    constraint: str = "unit-norm"
    scaled_input: bool = False
    detach_fading: bool = False
    bn_stats: str = "shared"             # shared | per-frame running stats
    batch_size: int = 2**12
    batches_per_epoch: int = 10
    max_epochs: int = 2000
    lr_start: float = 1e-3
    lr_floor: float = 1e-5
    lr_decay_epochs: int = 1000
    patience: int = 300
    val_size: int = 10**4
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("on-grid", "gridless"):
            raise ValueError("scenario must be 'on-grid' or 'gridless'")
        if self.fading not in _FADING_MODES:
            raise ValueError(f"fading must be one of {_FADING_MODES}")
        if self.bn_stats not in ("per-frame", "shared"):
            raise ValueError("bn_stats must be 'per-frame' or 'shared'")
        for name in ("num_antennas", "grid_size", "num_coarse",
                     "samples_per_interval", "num_frames", "batch_size",
                     "batches_per_epoch", "max_epochs", "patience",
                     "val_size", "lr_decay_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr_floor > self.lr_start:
            raise ValueError("learning-rate schedule must be non-increasing")
        if self.phi_span[0] >= self.phi_span[1]:
            raise ValueError("phi_span must be increasing")
        if (self.snr_range_db is not None
                and self.snr_range_db[0] >= self.snr_range_db[1]):
            raise ValueError("snr_range_db must be increasing")


@dataclass(frozen=True)
class Workspace:
    """Precomputed geometry shared by every rollout of one configuration."""

    array: ArrayConfig
    angles: np.ndarray        # hypothesis angles (grid or flat midpoints)
    steer_re: np.ndarray      # (M, K)
    steer_im: np.ndarray
    feature_dim: int          # N on-grid, N_c gridless
    num_hypotheses: int       # K: N on-grid, N_c*N_s gridless


def build_workspace(cfg: TrainConfig) -> Workspace:
    array = ArrayConfig(cfg.num_antennas)
    lo, hi = cfg.phi_span
    if cfg.scenario == "on-grid":
        angles = grid_angles(cfg.grid_size, lo, hi)
        feature_dim = cfg.grid_size
    else:
        gp = uniform_gridless_posterior(cfg.num_coarse,
                                        cfg.samples_per_interval, lo, hi)
        angles = gp.flat_midpoints()
        feature_dim = cfg.num_coarse
    steer = steering_matrix(angles, array)
    return Workspace(array, angles, np.ascontiguousarray(steer.real),
                     np.ascontiguousarray(steer.imag), feature_dim,
                     angles.size)


@dataclass(frozen=True)
class Episode:
    """A batch of independent alignment episodes with pre-drawn randomness."""

    phi: np.ndarray           # (B,) true angles
    phi_index: np.ndarray | None   # (B,) grid index, on-grid only
    alpha: np.ndarray         # (B,) complex fading
    noise: np.ndarray         # (num_frames, B, M) complex
    power: np.ndarray         # (B,) pilot power

    @property
    def size(self) -> int:
        return self.phi.shape[0]


def draw_episodes(cfg: TrainConfig, ws: Workspace, rng, count: int) -> Episode:
    if cfg.scenario == "on-grid":
        idx = rng.integers(ws.angles.size, size=count)
        phi = ws.angles[idx]
    else:
        idx = None
        phi = rng.uniform(cfg.phi_span[0], cfg.phi_span[1], size=count)
    alpha = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / np.sqrt(2)
    noise = (rng.standard_normal((cfg.num_frames, count, cfg.num_antennas))
             + 1j * rng.standard_normal((cfg.num_frames, count, cfg.num_antennas))
             ) / np.sqrt(2)
    if cfg.snr_range_db is not None:
        power = snr_to_power(rng.uniform(cfg.snr_range_db[0],
                                         cfg.snr_range_db[1], size=count))
    else:
        power = np.full(count, snr_to_power(cfg.snr_db))
    return Episode(phi, idx, alpha, noise, power)


@dataclass
class RolloutResult:
    log_posterior: object          # (B, K) Tensor or ndarray
    beams: list                    # per frame, (B, 2M) real-stacked
    angle_estimate: object = None  # (B,) gridless only
    fading_mean: object = None     # (B, K) complex tracker mean, ndarray
    fading_var: object = None      # (B, K) tracker variance, ndarray


def _features_from_logp(lp, cfg: TrainConfig, ws: Workspace, batch):
    probs = ad.exp(lp)
    if cfg.scenario == "on-grid":
        return probs
    shaped = ad.reshape(probs, (batch, cfg.num_coarse, cfg.samples_per_interval))
    return ad.vsum(shaped, axis=2)


def _normalize_logp(lp, batch, num_hyp):
    peak, _ = ad.vmax(lp, axis=1, keepdims=True)
    lse = ad.log(ad.vsum(ad.exp(lp - peak), axis=1, keepdims=True)) + peak
    return lp - ad.broadcast_to(lse, (batch, num_hyp))


def rollout(params: pol.PolicyParams, episode: Episode, cfg: TrainConfig,
            ws: Workspace, *, arrays=None, train=False,
            update_stats=True) -> RolloutResult:
    """Unrolled sensing loop: posterior -> beam -> measurement -> posterior.

    With ``arrays`` bound to a tape (policy.bind_params) every step is
    recorded and the returned loss tensors are differentiable end to end;
    without it the identical code runs on plain float arrays.
    """
    batch = episode.size
    m = cfg.num_antennas
    num_hyp = ws.num_hypotheses
    sqrt_p = np.sqrt(episode.power)[:, None]            # (B, 1)
    hr = (episode.alpha[:, None] * np.exp(
        2j * np.pi * ws.array.spacing_ratio
        * np.sin(episode.phi)[:, None] * np.arange(m)))
    hre, him = np.ascontiguousarray(hr.real), np.ascontiguousarray(hr.imag)
    a_re, a_im = ws.steer_re, ws.steer_im
    alpha_re = episode.alpha.real[:, None]
    alpha_im = episode.alpha.imag[:, None]

    lp = np.full((batch, num_hyp), -np.log(num_hyp))
    mu_re = np.zeros((batch, num_hyp))
    mu_im = np.zeros((batch, num_hyp))
    gamma = np.ones((batch, num_hyp))
    beams = []

    for t in range(cfg.num_frames):
        feats = (np.full((batch, ws.feature_dim), 1.0 / ws.feature_dim)
                 if t == 0 else _features_from_logp(lp, cfg, ws, batch))
        v = pol.assemble_input(feats, episode.power, t,
                               num_frames=cfg.num_frames,
                               scaled=params.scaled_input)
        u = pol.forward(params, v, train=train, arrays=arrays,
                        update_stats=update_stats,
                        frame=t if params.bn_frames > 1 else None)
        beams.append(u)
        w_re = u[:, :m]
        w_im = u[:, m:]

        z_re = np.ascontiguousarray(episode.noise[t].real)
        z_im = np.ascontiguousarray(episode.noise[t].imag)
        sig_re = ad.vsum(w_re * hre + w_im * him, axis=1, keepdims=True)
        sig_im = ad.vsum(w_re * him - w_im * hre, axis=1, keepdims=True)
        n_re = ad.vsum(w_re * z_re + w_im * z_im, axis=1, keepdims=True)
        n_im = ad.vsum(w_re * z_im - w_im * z_re, axis=1, keepdims=True)
        y_re = sqrt_p * sig_re + n_re                   # (B, 1)
        y_im = sqrt_p * sig_im + n_im

        g_re = (ad.matmul(w_re, a_re) + ad.matmul(w_im, a_im)) * sqrt_p
        g_im = (ad.matmul(w_re, a_im) - ad.matmul(w_im, a_re)) * sqrt_p

        if cfg.fading == "known":
            ag_re = alpha_re * g_re - alpha_im * g_im
            ag_im = alpha_re * g_im + alpha_im * g_re
            res_re = ad.broadcast_to(y_re, (batch, num_hyp)) - ag_re
            res_im = ad.broadcast_to(y_im, (batch, num_hyp)) - ag_im
            ll = -(ad.square(res_re) + ad.square(res_im))
        else:
            gsq = ad.square(g_re) + ad.square(g_im)
            denom = gamma * gsq + 1.0
            mg_re = mu_re * g_re - mu_im * g_im
            mg_im = mu_re * g_im + mu_im * g_re
            res_re = ad.broadcast_to(y_re, (batch, num_hyp)) - mg_re
            res_im = ad.broadcast_to(y_im, (batch, num_hyp)) - mg_im
            if cfg.fading == "kalman":
                # likelihood from the pre-update (predictive) tracker state
                ll = -(ad.square(res_re) + ad.square(res_im)) / denom
            gain = gamma / denom
            mu_re = mu_re + gain * (g_re * res_re + g_im * res_im)
            mu_im = mu_im + gain * (g_re * res_im - g_im * res_re)
            gamma = gamma / denom
            if cfg.fading == "mmse":
                # likelihood from the post-update state: identical to the
                # batch least-squares fading estimate over the history
                mg_re = mu_re * g_re - mu_im * g_im
                mg_im = mu_re * g_im + mu_im * g_re
                res2_re = ad.broadcast_to(y_re, (batch, num_hyp)) - mg_re
                res2_im = ad.broadcast_to(y_im, (batch, num_hyp)) - mg_im
                ll = -(ad.square(res2_re) + ad.square(res2_im)) / (gamma * gsq + 1.0)
            if cfg.detach_fading:
                mu_re, mu_im = ad.detach(mu_re), ad.detach(mu_im)
                gamma = ad.detach(gamma)

        lp = _normalize_logp(lp + ll, batch, num_hyp)

    result = RolloutResult(lp, beams)
    if cfg.fading != "known":
        result.fading_mean = ad.detach(mu_re) + 1j * ad.detach(mu_im)
        result.fading_var = ad.detach(gamma)
    if cfg.scenario == "gridless":
        probs = ad.exp(lp)
        result.angle_estimate = pol.estimate_head(params, probs, arrays=arrays)
    return result


def loss_ongrid(log_posterior, true_index):
    """Cross-entropy against the one-hot truth, in bits, batch-averaged."""
    batch = true_index.shape[0]
    picked = log_posterior[np.arange(batch), np.asarray(true_index)]
    return ad.vsum(picked) * (-1.0 / (batch * np.log(2.0)))


def loss_gridless(angle_estimate, phi_true):
    """Mean squared angle error, radians squared."""
    err = angle_estimate - np.asarray(phi_true)
    return ad.vsum(ad.square(err)) / phi_true.shape[0]


def episode_loss(params, episode, cfg, ws, *, arrays=None, train=False,
                 update_stats=True):
    res = rollout(params, episode, cfg, ws, arrays=arrays, train=train,
                  update_stats=update_stats)
    if cfg.scenario == "on-grid":
        return loss_ongrid(res.log_posterior, episode.phi_index)
    return loss_gridless(res.angle_estimate, episode.phi)


def loss_and_grad(params, episode, cfg, ws, *, update_stats=True):
    """Train-mode loss plus gradients for every trainable array."""
    tape = ad.Tape()
    binds = pol.bind_params(params, tape)
    loss = episode_loss(params, episode, cfg, ws, arrays=binds, train=True,
                        update_stats=update_stats)
    ad.backward(tape, loss)
    grads = {name: (np.zeros_like(t.value) if t.grad is None else t.grad)
             for name, t in binds.items()}
    return float(loss.value), grads


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: pol.PolicyParams, grads: dict, state: AdamState,
              lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    for name in params.trainable_names():
        g = grads[name]
        if g.shape != params.arrays[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.m[name] = m
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        params.arrays[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Geometric decay lr_start -> lr_floor over lr_decay_epochs, then flat."""
    frac = min(epoch / cfg.lr_decay_epochs, 1.0)
    return float(cfg.lr_start * (cfg.lr_floor / cfg.lr_start) ** frac)


def _stream(seed, index):
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def _validation_loss(params, episode, cfg, ws):
    return float(episode_loss(params, episode, cfg, ws, train=False))


def _dump_episode(episode: Episode, path):
    np.savez(path, phi=episode.phi,
             phi_index=(episode.phi_index if episode.phi_index is not None
                        else np.array([])),
             alpha=episode.alpha, noise=episode.noise, power=episode.power)


def train(cfg: TrainConfig, out_dir=None, init_params=None, start_epoch=0,
          progress=None):
    """Run the training loop; returns (best params, log rows).

    Episodes are drawn from per-(seed, epoch, batch) counter streams and the
    validation set from its own stream, so a run is a pure function of
    (cfg, init_params, start_epoch): identical calls produce bit-identical
    checkpoints and logs (wall_seconds aside).

    out_dir, when given, receives best.bapn, training_log.csv and, on a
    non-finite loss, a diagnostic dump of the offending episode batch.
    """
    ws = build_workspace(cfg)
    if init_params is None:
        init_rng = _stream(cfg.seed, _STREAM_INIT)
        head = ws.angles if cfg.scenario == "gridless" else None
        params = pol.init_policy(ws.feature_dim + 2, cfg.num_antennas,
                                 init_rng, hidden=cfg.hidden,
                                 constraint=cfg.constraint,
                                 mode=cfg.scenario if cfg.scenario == "gridless"
                                 else "on-grid",
                                 head_init=head, scaled_input=cfg.scaled_input,
                                 bn_frames=(cfg.num_frames
                                            if cfg.bn_stats == "per-frame"
                                            else 1))
    else:
        params = init_params.copy()

    val_rng = _stream(cfg.seed, _STREAM_VALIDATION)
    val_episode = draw_episodes(cfg, ws, val_rng, cfg.val_size)

    state = AdamState()
    best_val = np.inf
    best_params = params.copy()
    best_epoch = start_epoch
    rows = []
    t0 = time.perf_counter()

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(start_epoch, cfg.max_epochs):
        lr = learning_rate(cfg, epoch)
        batch_losses = []
        for b in range(cfg.batches_per_epoch):
            rng = _stream(cfg.seed, epoch * cfg.batches_per_epoch + b)
            episode = draw_episodes(cfg, ws, rng, cfg.batch_size)
            loss, grads = loss_and_grad(params, episode, cfg, ws)
            if not np.isfinite(loss):
                if out_dir is not None:
                    dump = os.path.join(out_dir, f"bad_episode_e{epoch}_b{b}.npz")
                    _dump_episode(episode, dump)
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch} batch {b}; "
                        f"episode dumped to {dump}")
                raise RuntimeError(f"non-finite loss at epoch {epoch} batch {b}")
            if lr > 0:
                adam_step(params, grads, state, lr)
            batch_losses.append(loss)
        val = _validation_loss(params, val_episode, cfg, ws)
        if val < best_val:
            best_val = val
            best_params = params.copy()
            best_epoch = epoch
            if out_dir is not None:
                pol.save_policy(best_params, os.path.join(out_dir, "best.bapn"))
        rows.append({"epoch": epoch, "train_loss": float(np.mean(batch_losses)),
                     "val_loss": val, "best_val_loss": best_val, "lr": lr,
                     "wall_seconds": time.perf_counter() - t0})
        if progress is not None:
            progress(rows[-1])
        if epoch - best_epoch >= cfg.patience:
            break

    if out_dir is not None:
        write_training_log(os.path.join(out_dir, "training_log.csv"), rows)
    return best_params, rows


def write_training_log(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss",
                                                "val_loss", "best_val_loss",
                                                "lr", "wall_seconds"])
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("train_loss", "val_loss", "best_val_loss", "lr",
                        "wall_seconds"):
                out[key] = f"{out[key]:.10g}"
            writer.writerow(out)
