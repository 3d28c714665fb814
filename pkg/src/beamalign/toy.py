"""One-shot sensing design at toy scale: pick a single unit-norm beam that
minimizes the expected squared error of the MMSE angle estimate formed from
one noisy measurement, the fading gain pinned to 1.

The objective has no usable closed form, so it is estimated by Monte Carlo
over (true angle, noise) pairs.  The same frozen sample set scores every
candidate beam (common random numbers), which makes the coordinate-descent
acceptance rule meaningful: an accepted move lowers the estimate on the
shared samples, hence the recorded trajectory is non-increasing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, steering_matrix
from .posterior import GridPosterior

__all__ = [
    "ToySamples",
    "ToyResult",
    "draw_toy_samples",
    "g_estimate",
    "toy_one_step",
]

_MAX_ANTENNAS = 8
_MAX_GRID = 16

# proposal ladder for a single real coordinate, coarse to fine
_DELTAS = (0.4, -0.4, 0.1, -0.1, 0.025, -0.025)


@dataclass(frozen=True)
class ToySamples:
    """Frozen Monte Carlo draws shared across beam evaluations."""

    index: np.ndarray   # (S,) grid index of the true angle
    noise: np.ndarray   # (S, M) antenna noise, CN(0, 1) entries

    @property
    def size(self) -> int:
        return self.index.shape[0]


@dataclass(frozen=True)
class ToyResult:
    w: np.ndarray            # unit-norm beam found by coordinate descent
    g: float                 # its estimated expected squared error
    trajectory: np.ndarray   # estimate after every accepted move, g0 first
    accepted: int


def _guard(num_antennas: int, grid_size: int):
    if num_antennas > _MAX_ANTENNAS or grid_size > _MAX_GRID:
        raise ValueError(
            f"toy study is limited to M <= {_MAX_ANTENNAS} antennas and "
            f"{_MAX_GRID} grid points, got M={num_antennas}, N={grid_size}")


def draw_toy_samples(posterior: GridPosterior, mc_samples: int, rng,
                     num_antennas: int) -> ToySamples:
    _guard(num_antennas, posterior.angles.size)
    idx = rng.choice(posterior.angles.size, size=mc_samples,
                     p=posterior.probs)
    z = (rng.standard_normal((mc_samples, num_antennas))
         + 1j * rng.standard_normal((mc_samples, num_antennas))) / np.sqrt(2)
    return ToySamples(idx, z)


def g_estimate(w, posterior: GridPosterior, power, samples: ToySamples,
               steering=None) -> float:
    """Monte Carlo estimate of E[(phi_hat(y) - phi)^2] for one beam.

    phi_hat is the posterior mean after the single measurement
    y = sqrt(P) w^H a(phi) + w^H z, with unit fading.
    """
    w = np.asarray(w, dtype=complex)
    if steering is None:
        steering = steering_matrix(posterior.angles,
                                   ArrayConfig(w.shape[0]))
    g = np.conj(w) @ steering                       # (N,) beam gains
    y = np.sqrt(power) * g[samples.index] + samples.noise @ np.conj(w)
    ll = -np.abs(y[:, None] - np.sqrt(power) * g[None, :]) ** 2
    ll -= ll.max(axis=1, keepdims=True)
    post = posterior.probs[None, :] * np.exp(ll)
    post /= post.sum(axis=1, keepdims=True)
    phi_hat = post @ posterior.angles
    return float(np.mean((phi_hat - posterior.angles[samples.index]) ** 2))


def toy_one_step(posterior: GridPosterior, power, num_antennas: int,
                 mc_samples: int = 4000, rng=None, w0=None,
                 cd_steps: int = 600, samples: ToySamples = None) -> ToyResult:
    """Coordinate descent over the 2M real beam coordinates.

    Each step perturbs one randomly chosen coordinate by a ladder of step
    sizes, renormalizes, and keeps the best candidate only if it lowers the
    shared-sample estimate of the expected squared error.
    """
    _guard(num_antennas, posterior.angles.size)
    rng = np.random.default_rng(0) if rng is None else rng
    if samples is None:
        samples = draw_toy_samples(posterior, mc_samples, rng, num_antennas)
    steering = steering_matrix(posterior.angles, ArrayConfig(num_antennas))

    if w0 is None:
        w = rng.standard_normal(num_antennas) \
            + 1j * rng.standard_normal(num_antennas)
    else:
        w = np.asarray(w0, dtype=complex).copy()
    w /= np.linalg.norm(w)

    coords = np.empty(2 * num_antennas)
    coords[:num_antennas] = w.real
    coords[num_antennas:] = w.imag

    def beam(c):
        v = c[:num_antennas] + 1j * c[num_antennas:]
        nrm = np.linalg.norm(v)
        return None if nrm == 0.0 else v / nrm

    best = g_estimate(w, posterior, power, samples, steering)
    trajectory = [best]
    accepted = 0
    for _ in range(cd_steps):
        j = rng.integers(coords.size)
        best_cand, best_val = None, best
        for delta in _DELTAS:
            cand = coords.copy()
            cand[j] += delta
            v = beam(cand)
            if v is None:
                continue
            val = g_estimate(v, posterior, power, samples, steering)
            if val < best_val:
                best_cand, best_val = cand, val
        if best_cand is not None:
            coords = best_cand
            best = best_val
            trajectory.append(best)
            accepted += 1

    w = beam(coords)
    return ToyResult(w, best, np.asarray(trajectory), accepted)
