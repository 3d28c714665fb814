"""Bayesian posterior tracking over angle-of-departure hypotheses.

All updates are pure (old state in, new state out) and run in the log domain
with max-subtraction, so any constant added to a row of log-likelihoods leaves
the result unchanged.  A fully degenerate update (no finite log-weight, e.g.
every likelihood underflowed to zero against a zero prior entry) returns the
posterior unchanged and increments `degeneracy.count` instead of emitting NaN.

Three fading treatments share the same machinery:

  known alpha   exp(-|y - alpha g_i|^2),            g_i = sqrt(P) w^H a(phi_i)
  batch MMSE    alpha_hat_i = (c^H c + 1)^-1 c^H y, full-history recompute
  Kalman bank   per-hypothesis scalar recursion on (mu_i, gamma_i), exactly
                the recursive form of the batch MMSE estimate
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, array_response, steering_matrix

__all__ = [
    "degeneracy",
    "posterior_step",
    "gains",
    "loglik_known_alpha",
    "GridPosterior",
    "uniform_grid_posterior",
    "update_known_alpha",
    "MeasurementHistory",
    "mmse_alpha",
    "mmse_alpha_all",
    "update_mmse_posterior",
    "KalmanBank",
    "kalman_init",
    "kalman_step_arrays",
    "kalman_step",
    "kalman_loglik",
    "update_kalman_posterior",
    "GridlessPosterior",
    "uniform_gridless_posterior",
    "gridless_update",
    "gridless_update_kalman",
    "gridless_mmse_posterior",
    "interval_probs",
    "map_detect",
    "mmse_estimate",
    "write_posterior_csv",
]


class _DegeneracyCounter:
    """Counts fully-degenerate updates that were returned unchanged."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


degeneracy = _DegeneracyCounter()


def posterior_step(probs, loglik):
    """One Bayes update on the trailing hypothesis axis.

    probs (..., N) nonnegative rows summing to 1; loglik (..., N).  Returns
    renormalized probs * exp(loglik).  Rows whose max log-weight is not finite
    are returned unchanged (see `degeneracy`).
    """
    probs = np.asarray(probs, dtype=float)
    loglik = np.asarray(loglik, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(probs) + loglik
    peak = np.max(logw, axis=-1, keepdims=True)
    ok = np.isfinite(peak)
    w = np.exp(logw - np.where(ok, peak, 0.0))
    total = np.sum(w, axis=-1, keepdims=True)
    if ok.all():
        return w / total
    degeneracy.count += int(ok.size - np.count_nonzero(ok))
    return np.where(ok, w / np.where(total > 0.0, total, 1.0), probs)


def gains(w, steering, power):
    """Noiseless measurement map g_i = sqrt(P) w^H a(phi_i); w (..., M) -> (..., N)."""
    return np.sqrt(power) * (np.conj(w) @ steering)


def loglik_known_alpha(y, g, alpha):
    """-|y - alpha g_i|^2, broadcasting y and alpha against trailing axis of g."""
    resid = np.asarray(y)[..., None] - np.asarray(alpha)[..., None] * g
    return -(resid.real**2 + resid.imag**2)


@dataclass(frozen=True)
class GridPosterior:
    """Probability mass over a fixed grid of candidate angles (radians)."""

    angles: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.angles.shape != self.probs.shape or self.angles.ndim != 1:
            raise ValueError("angles and probs must be matching 1-d arrays")
        if np.any(self.probs < 0.0):
            raise ValueError("negative posterior mass")
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError("posterior mass does not sum to 1")


def uniform_grid_posterior(angles) -> GridPosterior:
    angles = np.asarray(angles, dtype=float)
    return GridPosterior(angles=angles, probs=np.full(angles.size, 1.0 / angles.size))


def update_known_alpha(p: GridPosterior, y, w, power, alpha, cfg: ArrayConfig,
                       steering=None) -> GridPosterior:
    """pi_i' proportional to pi_i exp(-|y - sqrt(P) alpha w^H a(phi_i)|^2)."""
    if steering is None:
        steering = steering_matrix(p.angles, cfg)
    g = gains(np.asarray(w), steering, power)
    return GridPosterior(p.angles, posterior_step(p.probs, loglik_known_alpha(y, g, alpha)))


class MeasurementHistory:
    """Append-only record of (beam, observation) pairs within one episode."""

    def __init__(self):
        self._ws = []
        self._ys = []

    def append(self, y, w):
        w = np.asarray(w)
        if abs(np.linalg.norm(w) - 1.0) > 1e-9:
            raise ValueError("beamforming vector must have unit norm")
        self._ws.append(w.astype(complex, copy=True))
        self._ys.append(complex(y))

    def __len__(self):
        return len(self._ys)

    def beams(self) -> np.ndarray:
        if not self._ws:
            return np.zeros((0, 0), dtype=complex)
        return np.stack(self._ws)

    def observations(self) -> np.ndarray:
        return np.asarray(self._ys, dtype=complex)


def mmse_alpha(hist: MeasurementHistory, phi: float, power, cfg: ArrayConfig) -> complex:
    """MMSE fading estimate under hypothesis phi: (c^H c + 1)^-1 c^H y."""
    if len(hist) == 0:
        return 0.0 + 0.0j
    c = np.sqrt(power) * (hist.beams().conj() @ array_response(phi, cfg))
    return complex(np.vdot(c, hist.observations()) / (np.vdot(c, c).real + 1.0))


def mmse_alpha_all(hist: MeasurementHistory, steering, power):
    """Vectorized `mmse_alpha` over the steering columns; returns (alpha_hat, c)."""
    c = np.sqrt(power) * (hist.beams().conj() @ steering)  # (t, N)
    y = hist.observations()
    denom = np.sum(c.real**2 + c.imag**2, axis=0) + 1.0
    return (np.conj(c) * y[:, None]).sum(axis=0) / denom, c


def update_mmse_posterior(hist: MeasurementHistory, power, angles, cfg: ArrayConfig,
                          prior=None) -> GridPosterior:
    """Full-history recompute: pi_i prop. to pi_i^(0) prod_t exp(-|y_t - alpha_hat_i c_ti|^2).

    Plugging the current MMSE estimate of alpha into every past frame breaks
    the recursive product, so the whole posterior is rebuilt from the initial
    prior each time (O(t M N) per frame).
    """
    angles = np.asarray(angles, dtype=float)
    base = np.full(angles.size, 1.0 / angles.size) if prior is None else prior.probs
    if len(hist) == 0:
        return GridPosterior(angles, base / base.sum())
    alpha_hat, c = mmse_alpha_all(hist, steering_matrix(angles, cfg), power)
    resid = hist.observations()[:, None] - alpha_hat[None, :] * c
    loglik = -np.sum(resid.real**2 + resid.imag**2, axis=0)
    return GridPosterior(angles, posterior_step(base, loglik))


@dataclass(frozen=True)
class KalmanBank:
    """Per-hypothesis Gaussian belief over alpha: mean mu, variance gamma."""

    mu: np.ndarray
    gamma: np.ndarray


def kalman_init(num_hypotheses: int, batch_shape=()) -> KalmanBank:
    """Prior CN(0, 1) for every hypothesis."""
    shape = tuple(batch_shape) + (num_hypotheses,)
    return KalmanBank(mu=np.zeros(shape, dtype=complex), gamma=np.ones(shape))


def kalman_step_arrays(mu, gamma, y, g):
    """Scalar-channel update per hypothesis.

    denom = gamma |g|^2 + 1
    mu'    = mu + gamma conj(g) (y - mu g) / denom
    gamma' = gamma / denom

    Measuring a static parameter with shrinking gain: gamma never increases.
    """
    denom = gamma * (g.real**2 + g.imag**2) + 1.0
    innov = np.asarray(y)[..., None] - mu * g
    return mu + gamma * np.conj(g) * innov / denom, gamma / denom


def kalman_step(bank: KalmanBank, y, w, power, steering) -> KalmanBank:
    g = gains(np.asarray(w), steering, power)
    mu, gamma = kalman_step_arrays(bank.mu, bank.gamma, y, g)
    return KalmanBank(mu=mu, gamma=gamma)


def kalman_loglik(mu, gamma, y, g):
    """Exponent of the per-hypothesis likelihood: -|y - mu g|^2 / (gamma |g|^2 + 1)."""
    resid = np.asarray(y)[..., None] - mu * g
    return -(resid.real**2 + resid.imag**2) / (gamma * (g.real**2 + g.imag**2) + 1.0)


def update_kalman_posterior(p: GridPosterior, bank: KalmanBank, y, w, power,
                            cfg: ArrayConfig, mode: str = "predictive",
                            steering=None):
    """Joint posterior/bank step for one frame; returns (posterior', bank').

    mode "predictive" scores the frame with the pre-update (mu, gamma);
    "paper-literal" first runs the bank update and scores with the post-update
    values.  Both use the current frame's g and collapse to the known-alpha
    rule as gamma -> 0 with mu fixed.
    """
    if mode not in ("predictive", "paper-literal"):
        raise ValueError(f"unknown kalman likelihood mode {mode!r}")
    if steering is None:
        steering = steering_matrix(p.angles, cfg)
    g = gains(np.asarray(w), steering, power)
    mu, gamma = kalman_step_arrays(bank.mu, bank.gamma, y, g)
    if mode == "predictive":
        loglik = kalman_loglik(bank.mu, bank.gamma, y, g)
    else:
        loglik = kalman_loglik(mu, gamma, y, g)
    return GridPosterior(p.angles, posterior_step(p.probs, loglik)), KalmanBank(mu, gamma)


@dataclass(frozen=True)
class GridlessPosterior:
    """Piecewise mass over N_c intervals, each sampled at N_s midpoints.

    Interval i (0-based) spans [phi_min + i dphi_c, phi_min + (i+1) dphi_c) and
    its j-th sample sits at the sub-interval midpoint
    phi_ij = phi_min + i dphi_c + (j + 1/2) dphi_s, with dphi_s = dphi_c / N_s.
    """

    phi_min: float
    phi_max: float
    masses: np.ndarray  # (N_c, N_s)

    def __post_init__(self):
        if self.masses.ndim != 2:
            raise ValueError("masses must be (num_intervals, samples_per_interval)")
        if np.any(self.masses < 0.0):
            raise ValueError("negative posterior mass")
        if abs(float(self.masses.sum()) - 1.0) > 1e-9:
            raise ValueError("posterior mass does not sum to 1")
        if not self.phi_max > self.phi_min:
            raise ValueError("empty angle interval")

    @property
    def num_intervals(self) -> int:
        return self.masses.shape[0]

    @property
    def samples_per_interval(self) -> int:
        return self.masses.shape[1]

    @property
    def interval_width(self) -> float:
        return (self.phi_max - self.phi_min) / self.num_intervals

    @property
    def sample_width(self) -> float:
        return (self.phi_max - self.phi_min) / (self.num_intervals * self.samples_per_interval)

    def midpoints(self) -> np.ndarray:
        i = np.arange(self.num_intervals)[:, None]
        j = np.arange(self.samples_per_interval)[None, :]
        return self.phi_min + i * self.interval_width + (j + 0.5) * self.sample_width

    def flat_midpoints(self) -> np.ndarray:
        return self.midpoints().ravel()


def uniform_gridless_posterior(num_intervals, samples_per_interval,
                               phi_min, phi_max) -> GridlessPosterior:
    n = num_intervals * samples_per_interval
    return GridlessPosterior(phi_min, phi_max,
                             np.full((num_intervals, samples_per_interval), 1.0 / n))


def gridless_update(gp: GridlessPosterior, y, w, power, cfg: ArrayConfig,
                    alpha) -> GridlessPosterior:
    """Known or externally-estimated alpha; accepts a scalar or per-midpoint array."""
    steering = steering_matrix(gp.flat_midpoints(), cfg)
    g = gains(np.asarray(w), steering, power)
    alpha = np.asarray(alpha).ravel() if np.ndim(alpha) else alpha
    flat = posterior_step(gp.masses.ravel(), loglik_known_alpha(y, g, alpha))
    return GridlessPosterior(gp.phi_min, gp.phi_max, flat.reshape(gp.masses.shape))


def gridless_update_kalman(gp: GridlessPosterior, bank: KalmanBank, y, w, power,
                           cfg: ArrayConfig, mode: str = "predictive"):
    """Per-midpoint Kalman fading trackers; returns (posterior', bank')."""
    if mode not in ("predictive", "paper-literal"):
        raise ValueError(f"unknown kalman likelihood mode {mode!r}")
    steering = steering_matrix(gp.flat_midpoints(), cfg)
    g = gains(np.asarray(w), steering, power)
    mu, gamma = kalman_step_arrays(bank.mu, bank.gamma, y, g)
    if mode == "predictive":
        loglik = kalman_loglik(bank.mu, bank.gamma, y, g)
    else:
        loglik = kalman_loglik(mu, gamma, y, g)
    flat = posterior_step(gp.masses.ravel(), loglik)
    return (GridlessPosterior(gp.phi_min, gp.phi_max, flat.reshape(gp.masses.shape)),
            KalmanBank(mu, gamma))


def gridless_mmse_posterior(hist: MeasurementHistory, power, prior: GridlessPosterior,
                            cfg: ArrayConfig) -> GridlessPosterior:
    """Full-history MMSE recompute on the midpoint set; `prior` is the time-zero prior."""
    if len(hist) == 0:
        return prior
    steering = steering_matrix(prior.flat_midpoints(), cfg)
    alpha_hat, c = mmse_alpha_all(hist, steering, power)
    resid = hist.observations()[:, None] - alpha_hat[None, :] * c
    loglik = -np.sum(resid.real**2 + resid.imag**2, axis=0)
    flat = posterior_step(prior.masses.ravel(), loglik)
    return GridlessPosterior(prior.phi_min, prior.phi_max, flat.reshape(prior.masses.shape))


def interval_probs(gp: GridlessPosterior) -> np.ndarray:
    return gp.masses.sum(axis=1)


def map_detect(p: GridPosterior) -> int:
    """Index of the largest mass; ties resolve to the lowest index."""
    return int(np.argmax(p.probs))


def mmse_estimate(gp: GridlessPosterior) -> float:
    """Posterior-mean angle over the midpoint set."""
    return float(np.sum(gp.midpoints() * gp.masses))


def write_posterior_csv(path, p):
    """Snapshot (angle_deg, mass) rows for debugging; accepts either posterior type."""
    if isinstance(p, GridlessPosterior):
        angles, masses = p.flat_midpoints(), p.masses.ravel()
    else:
        angles, masses = p.angles, p.probs
    with open(path, "w") as f:
        f.write("angle_deg,mass\n")
        for a, m in zip(np.rad2deg(angles), masses):
            f.write(f"{a:.10g},{m:.10g}\n")
