"""Monte Carlo evaluation harness: runs a method over independent alignment
episodes and reports detection error probability (on-grid) or mean squared
angle error (gridless) per SNR point.

Common random numbers: every trial owns a counter-based RNG stream keyed by
(seed, trial index); the channel realization (angle, fading, noise) is drawn
first in a fixed order, so different methods evaluated at the same seed see
identical channels, and method-private randomness (random sensing matrices)
continues from the same stream afterwards without disturbing other trials.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import hiebs_run, hiepm_run, omp_detect, random_sensing_matrix
from .channel import ArrayConfig, grid_angles, snr_to_power, steering_matrix, trial_rng
from .codebook import build_codebook
from .policy import load_policy
from .posterior import gains, loglik_known_alpha, posterior_step
from . import training as tr

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "monte_carlo_eval",
    "single_trial_posterior",
    "write_report",
    "parse_report",
    "register_method",
    "METHODS",
]

_DNN_METHODS = ("dnn-known", "dnn-mmse", "dnn-kalman")
_CONSTRAINTS = ("unit-norm", "cm")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "on-grid"               # on-grid | gridless
    method: str = "hiebs"
    num_antennas: int = 64
    grid_size: int = 128
    num_coarse: int = 128
    samples_per_interval: int = 20
    num_frames: int = 14
    phi_span: tuple = (-np.pi / 3, np.pi / 3)
    snr_db: tuple = (0.0,)
    trials: int = 1000
    constraint: str = "unit-norm"           # unit-norm | cm
    seed: int = 0
    checkpoint: str | None = None
    noiseless: bool = False                 # diagnostic: drop the noise term

    def __post_init__(self):
        if self.scenario not in ("on-grid", "gridless"):
            raise ValueError("scenario must be 'on-grid' or 'gridless'")
        if self.constraint not in _CONSTRAINTS:
            raise ValueError(f"constraint must be one of {_CONSTRAINTS}")
        if self.trials <= 0 or self.num_frames <= 0:
            raise ValueError("trials and num_frames must be positive")
        if self.method == "hiebs":
            levels = math.log2(self.grid_size)
            if levels != int(levels) or self.num_frames != 2 * int(levels):
                raise ValueError(
                    "bisection needs num_frames = 2*log2(grid_size)")
        if self.method in _DNN_METHODS and self.checkpoint is None:
            raise ValueError(f"method {self.method} needs a checkpoint")
        if self.method in ("omp", "hiebs", "hiepm-known") \
                and self.scenario != "on-grid":
            raise ValueError(f"method {self.method} is on-grid only")

    @property
    def levels(self) -> int:
        return int(math.log2(self.grid_size))


@dataclass(frozen=True)
class ResultRow:
    method: str
    snr_db: float
    metric: str                  # detect_error_prob | mse_rad2
    value: float
    stderr: float
    trials: int
    seed: int

    def __post_init__(self):
        if self.metric == "detect_error_prob" and not 0.0 <= self.value <= 1.0:
            raise ValueError("error probability outside [0, 1]")
        if self.metric == "mse_rad2" and self.value < 0.0:
            raise ValueError("mean squared error must be nonnegative")


@dataclass
class TrialBlock:
    """All episodes of one (config, SNR) evaluation plus their live streams."""

    cfg: ExperimentConfig
    power: float
    phi: np.ndarray
    phi_index: np.ndarray | None
    alpha: np.ndarray
    noise: np.ndarray            # (num_frames, trials, M)
    rngs: list                   # per-trial generators, channel already drawn
    array: ArrayConfig = field(init=False)
    grid: np.ndarray = field(init=False)
    steering: np.ndarray = field(init=False)

    def __post_init__(self):
        self.array = ArrayConfig(self.cfg.num_antennas)
        if self.cfg.scenario == "on-grid":
            self.grid = grid_angles(self.cfg.grid_size, *self.cfg.phi_span)
        else:
            ws = tr.build_workspace(_train_view(self.cfg, "known"))
            self.grid = ws.angles
        self.steering = steering_matrix(self.grid, self.array)


def _train_view(cfg: ExperimentConfig, fading: str) -> tr.TrainConfig:
    return tr.TrainConfig(scenario=cfg.scenario, fading=fading,
                          num_antennas=cfg.num_antennas,
                          grid_size=cfg.grid_size,
                          num_coarse=cfg.num_coarse,
                          samples_per_interval=cfg.samples_per_interval,
                          num_frames=cfg.num_frames, phi_span=cfg.phi_span)


def draw_trials(cfg: ExperimentConfig, power: float,
                first=0, count=None) -> TrialBlock:
    count = cfg.trials if count is None else count
    m, tau = cfg.num_antennas, cfg.num_frames
    phi = np.empty(count)
    idx = np.empty(count, dtype=int) if cfg.scenario == "on-grid" else None
    alpha = np.empty(count, dtype=complex)
    noise = np.empty((tau, count, m), dtype=complex)
    rngs = []
    grid = (grid_angles(cfg.grid_size, *cfg.phi_span)
            if cfg.scenario == "on-grid" else None)
    for i in range(count):
        rng = trial_rng(cfg.seed, first + i)
        if cfg.scenario == "on-grid":
            idx[i] = rng.integers(cfg.grid_size)
            phi[i] = grid[idx[i]]
        else:
            phi[i] = rng.uniform(*cfg.phi_span)
        alpha[i] = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
        z = (rng.standard_normal((tau, m)) + 1j * rng.standard_normal((tau, m)))
        noise[:, i, :] = z / np.sqrt(2)
        rngs.append(rng)
    if cfg.noiseless:
        noise[:] = 0.0
    return TrialBlock(cfg, power, phi, idx, alpha, noise, rngs)


def _channel_vectors(block: TrialBlock) -> np.ndarray:
    m = block.cfg.num_antennas
    phase = np.exp(2j * np.pi * block.array.spacing_ratio
                   * np.sin(block.phi)[:, None] * np.arange(m))
    return block.alpha[:, None] * phase


def _env_for(block: TrialBlock, i: int, h_row: np.ndarray):
    state = {"t": 0}
    sqrt_p = np.sqrt(block.power)

    def env(w):
        t = state["t"]
        if t >= block.cfg.num_frames:
            raise RuntimeError("pilot budget exhausted")
        state["t"] = t + 1
        return sqrt_p * np.vdot(w, h_row) + np.vdot(w, block.noise[t, i])

    return env


def _codebook_for(cfg: ExperimentConfig, levels=None):
    constraint = "two-norm" if cfg.constraint == "unit-norm" else "cm-refine"
    angles = grid_angles(cfg.grid_size, *cfg.phi_span)
    return build_codebook(angles, ArrayConfig(cfg.num_antennas),
                          levels or cfg.levels, constraint)


def _run_hiebs(block: TrialBlock):
    cb = _codebook_for(block.cfg)
    h = _channel_vectors(block)
    out = np.empty(block.phi.shape[0], dtype=int)
    for i in range(out.size):
        out[i] = hiebs_run(cb, _env_for(block, i, h[i]), block.cfg.num_frames)
    return out


def _run_hiepm_known(block: TrialBlock):
    cb = _codebook_for(block.cfg)
    h = _channel_vectors(block)
    out = np.empty(block.phi.shape[0], dtype=int)
    for i in range(out.size):
        out[i] = hiepm_run(cb, _env_for(block, i, h[i]),
                           block.cfg.num_frames, block.power,
                           block.alpha[i], block.steering)
    return out


def _run_omp(block: TrialBlock):
    flavor = ("gaussian" if block.cfg.constraint == "unit-norm"
              else "constant-modulus")
    h = _channel_vectors(block)
    sqrt_p = np.sqrt(block.power)
    out = np.empty(block.phi.shape[0], dtype=int)
    for i in range(out.size):
        w_mat = random_sensing_matrix(block.cfg.num_antennas,
                                      block.cfg.num_frames, flavor,
                                      block.rngs[i])
        ys = sqrt_p * (w_mat.conj().T @ h[i]) \
            + np.einsum("mt,tm->t", w_mat.conj(), block.noise[:, i, :])
        out[i] = omp_detect(w_mat, ys, block.steering)
    return out


def _run_random_posterior(block: TrialBlock):
    """Random unit-norm sensing + known-fading posterior + MAP detection."""
    flavor = ("gaussian" if block.cfg.constraint == "unit-norm"
              else "constant-modulus")
    h = _channel_vectors(block)
    sqrt_p = np.sqrt(block.power)
    out = np.empty(block.phi.shape[0], dtype=int)
    for i in range(out.size):
        w_mat = random_sensing_matrix(block.cfg.num_antennas,
                                      block.cfg.num_frames, flavor,
                                      block.rngs[i])
        probs = np.full(block.cfg.grid_size, 1.0 / block.cfg.grid_size)
        for t in range(block.cfg.num_frames):
            w = w_mat[:, t]
            y = sqrt_p * np.vdot(w, h[i]) + np.vdot(w, block.noise[t, i])
            probs = posterior_step(
                probs, loglik_known_alpha(
                    y, gains(w, block.steering, block.power), block.alpha[i]))
        out[i] = int(np.argmax(probs))
    return out


def _run_dnn(block: TrialBlock, fading: str, params=None, chunk=2048):
    cfg = block.cfg
    if params is None:
        params = load_policy(cfg.checkpoint)
    tcfg = _train_view(cfg, fading)
    ws = tr.build_workspace(tcfg)
    if params.input_dim != ws.feature_dim + 2:
        raise ValueError(
            f"checkpoint expects input dim {params.input_dim}, "
            f"scenario needs {ws.feature_dim + 2}")
    n = block.phi.shape[0]
    on_grid = cfg.scenario == "on-grid"
    out = np.empty(n, dtype=int if on_grid else float)
    power = np.full(n, block.power)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        ep = tr.Episode(block.phi[lo:hi],
                        None if block.phi_index is None
                        else block.phi_index[lo:hi],
                        block.alpha[lo:hi], block.noise[:, lo:hi, :],
                        power[lo:hi])
        res = tr.rollout(params, ep, tcfg, ws, train=False)
        if on_grid:
            out[lo:hi] = np.argmax(res.log_posterior, axis=1)
        else:
            out[lo:hi] = res.angle_estimate
    return out


METHODS = {
    "hiebs": _run_hiebs,
    "hiepm-known": _run_hiepm_known,
    "omp": _run_omp,
    "random-known": _run_random_posterior,
    "dnn-known": lambda b, **kw: _run_dnn(b, "known", **kw),
    "dnn-mmse": lambda b, **kw: _run_dnn(b, "mmse", **kw),
    "dnn-kalman": lambda b, **kw: _run_dnn(b, "kalman", **kw),
}


def register_method(name, runner):
    """Extension hook: runner(block) -> per-trial detections or estimates."""
    METHODS[name] = runner


def monte_carlo_eval(cfg: ExperimentConfig, params=None) -> list:
    """One ResultRow per SNR point, trials independent across points."""
    if cfg.method not in METHODS:
        raise ValueError(f"unknown method {cfg.method!r}; "
                         f"registered: {sorted(METHODS)}")
    runner = METHODS[cfg.method]
    if cfg.method in _DNN_METHODS and params is None:
        params = load_policy(cfg.checkpoint)
    rows = []
    for snr in cfg.snr_db:
        block = draw_trials(cfg, snr_to_power(snr))
        kwargs = {"params": params} if cfg.method in _DNN_METHODS else {}
        est = runner(block, **kwargs)
        if cfg.scenario == "on-grid":
            errors = (np.asarray(est) != block.phi_index).astype(float)
            value = float(errors.mean())
            stderr = float(np.sqrt(value * (1.0 - value) / cfg.trials))
            metric = "detect_error_prob"
        else:
            se = (np.asarray(est, dtype=float) - block.phi) ** 2
            value = float(se.mean())
            stderr = float(se.std(ddof=1) / np.sqrt(cfg.trials)) \
                if cfg.trials > 1 else 0.0
            metric = "mse_rad2"
        rows.append(ResultRow(cfg.method, float(snr), metric, value, stderr,
                              cfg.trials, cfg.seed))
    return rows


def single_trial_posterior(cfg: ExperimentConfig, trial=0, params=None):
    """Final posterior masses of one dnn trial, for diagnostic dumps."""
    if cfg.method not in _DNN_METHODS:
        raise ValueError("posterior dumps are available for dnn methods")
    if params is None:
        params = load_policy(cfg.checkpoint)
    fading = cfg.method.split("-", 1)[1]
    block = draw_trials(cfg, snr_to_power(cfg.snr_db[0]),
                        first=trial, count=1)
    tcfg = _train_view(cfg, fading)
    ws = tr.build_workspace(tcfg)
    ep = tr.Episode(block.phi, block.phi_index, block.alpha, block.noise,
                    np.full(1, block.power))
    res = tr.rollout(params, ep, tcfg, ws, train=False)
    return ws.angles, np.exp(res.log_posterior[0])


_REPORT_FIELDS = ["method", "snr_db", "metric", "value", "stderr",
                  "value_deg2", "stderr_deg2", "trials", "seed"]
_RAD2_TO_DEG2 = (180.0 / np.pi) ** 2


def write_report(path, rows):
    """Deterministic CSV: sorted by (method, snr_db), 10 significant digits,
    squared-degree columns filled for mse rows."""
    ordered = sorted(rows, key=lambda r: (r.method, r.snr_db))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        writer.writeheader()
        for r in ordered:
            rec = {"method": r.method, "snr_db": f"{r.snr_db:.10g}",
                   "metric": r.metric, "value": f"{r.value:.10g}",
                   "stderr": f"{r.stderr:.10g}", "value_deg2": "",
                   "stderr_deg2": "", "trials": r.trials, "seed": r.seed}
            if r.metric == "mse_rad2":
                rec["value_deg2"] = f"{r.value * _RAD2_TO_DEG2:.10g}"
                rec["stderr_deg2"] = f"{r.stderr * _RAD2_TO_DEG2:.10g}"
            writer.writerow(rec)


def parse_report(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(rec["method"], float(rec["snr_db"]),
                                  rec["metric"], float(rec["value"]),
                                  float(rec["stderr"]), int(rec["trials"]),
                                  int(rec["seed"])))
    return rows
