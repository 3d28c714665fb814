"""Array geometry, single-path channel, and pilot measurements.

The base station steers an M-antenna uniform linear array with a single RF
chain, so each pilot frame yields one complex scalar

    y_t = sqrt(P) * w_t^H h + w_t^H z_t,    z_t ~ CN(0, I_M),

with a frequency-flat single-path channel h = alpha * a(phi).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ArrayConfig",
    "ChannelRealization",
    "PilotConfig",
    "array_response",
    "steering_matrix",
    "grid_angles",
    "draw_channel",
    "draw_noise",
    "measure",
    "snr_to_power",
    "power_to_snr",
    "trial_rng",
]


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array seen from the base station."""

    num_antennas: int
    spacing_ratio: float = 0.5  # element spacing over carrier wavelength

    def __post_init__(self):
        if self.num_antennas < 1:
            raise ValueError("array needs at least one antenna")
        if not (self.spacing_ratio > 0.0):
            raise ValueError("spacing_ratio must be positive")


@dataclass(frozen=True)
class ChannelRealization:
    """One episode's ground truth: AoD phi (radians), fading alpha, h = alpha*a(phi)."""

    phi: float
    alpha: complex
    h: np.ndarray


@dataclass(frozen=True)
class PilotConfig:
    power: float  # transmit power P, linear scale
    num_frames: int  # pilot budget tau

    def __post_init__(self):
        if not (self.power > 0.0):
            raise ValueError("power must be positive")
        if self.num_frames < 1:
            raise ValueError("num_frames must be at least 1")


def array_response(phi, cfg: ArrayConfig) -> np.ndarray:
    """a(phi)_m = exp(j*2*pi*(d/lambda)*m*sin(phi)), m = 0..M-1 (element 0 is 1)."""
    m = np.arange(cfg.num_antennas)
    return np.exp(2j * np.pi * cfg.spacing_ratio * np.sin(phi) * m)


def steering_matrix(phis, cfg: ArrayConfig) -> np.ndarray:
    """Column-stacked array responses, shape (M, len(phis))."""
    phis = np.asarray(phis, dtype=float)
    m = np.arange(cfg.num_antennas)[:, None]
    return np.exp(2j * np.pi * cfg.spacing_ratio * m * np.sin(phis)[None, :])


def grid_angles(n: int, phi_min: float, phi_max: float) -> np.ndarray:
    """n equispaced hypothesis angles spanning [phi_min, phi_max] inclusive."""
    if n < 1:
        raise ValueError("grid size must be at least 1")
    if phi_max < phi_min:
        raise ValueError("empty angle interval")
    return np.linspace(phi_min, phi_max, n)


def _draw_fading(rng) -> complex:
    # CN(0, 1): each real channel N(0, 1/2)
    return complex(rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2.0)


def draw_channel(prior, rng, cfg: ArrayConfig) -> ChannelRealization:
    """Sample (phi, alpha, h) from the prior.

    `prior` is either a grid of candidate angles (uniform over entries) or an
    interval (phi_min, phi_max) (uniform density).  alpha ~ CN(0, 1) and is
    independent of phi.
    """
    if isinstance(prior, tuple):
        lo, hi = prior
        phi = float(rng.uniform(lo, hi))
    else:
        grid = np.asarray(prior, dtype=float)
        phi = float(grid[rng.integers(grid.size)])
    alpha = _draw_fading(rng)
    return ChannelRealization(phi=phi, alpha=alpha, h=alpha * array_response(phi, cfg))


def draw_noise(rng, num_antennas: int, count: int | None = None) -> np.ndarray:
    """Unit-variance complex Gaussian noise vectors, shape (M,) or (count, M)."""
    shape = (num_antennas,) if count is None else (count, num_antennas)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z / np.sqrt(2.0)


def measure(w: np.ndarray, ch: ChannelRealization, pilot: PilotConfig, rng=None,
            noise: np.ndarray | None = None) -> complex:
    """One pilot observation y = sqrt(P) w^H h + w^H z.

    The beamforming vector must carry unit power.  Pass `noise` to pin the
    noise realization (tests, common-random-number studies); otherwise it is
    drawn from `rng`.
    """
    w = np.asarray(w)
    nrm = np.linalg.norm(w)
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError(f"beamforming vector norm {nrm!r} is not 1 within 1e-9")
    if noise is None:
        if rng is None:
            raise ValueError("need an rng when noise is not supplied")
        noise = draw_noise(rng, w.size)
    return complex(np.sqrt(pilot.power) * np.vdot(w, ch.h) + np.vdot(w, noise))


def snr_to_power(snr_db):
    """Linear transmit power for a raw-SNR operating point, SNR_dB = 10*log10(P)."""
    out = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def power_to_snr(power):
    out = 10.0 * np.log10(np.asarray(power, dtype=float))
    return float(out) if out.ndim == 0 else out


def trial_rng(seed: int, trial_index: int):
    """Counter-based per-trial stream; trials are reproducible in any order."""
    return np.random.Generator(np.random.Philox(key=[seed, trial_index]))
