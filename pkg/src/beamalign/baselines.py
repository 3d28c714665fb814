"""Non-adaptive and hierarchical-search baselines.

All of them spend exactly the pilot budget: `env` is a closure mapping a
beamforming vector to one noisy observation, so tests can count calls.
"""
from __future__ import annotations

import numpy as np

from .codebook import HierCodebook
from .posterior import gains, loglik_known_alpha, posterior_step

__all__ = [
    "random_sensing_matrix",
    "omp_detect",
    "hiebs_run",
    "hiepm_select",
    "hiepm_run",
]


def random_sensing_matrix(num_antennas: int, num_frames: int, flavor: str, rng) -> np.ndarray:
    """(M, tau) block of unit-norm random beams.

    "gaussian": i.i.d. CN entries, columns normalized.  "constant-modulus":
    entries (1/sqrt(M)) e^{j theta}, theta uniform on [0, 2 pi).
    """
    shape = (num_antennas, num_frames)
    if flavor == "gaussian":
        w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        nrm = np.linalg.norm(w, axis=0)
        if np.any(nrm == 0.0):
            raise ValueError("degenerate all-zero sensing column")
        return w / nrm
    if flavor == "constant-modulus":
        return np.exp(2j * np.pi * rng.random(shape)) / np.sqrt(num_antennas)
    raise ValueError(f"unknown sensing flavor {flavor!r}")


def omp_detect(w_mat: np.ndarray, ys: np.ndarray, a_bs: np.ndarray) -> int:
    """Single-path orthogonal matching pursuit over the dictionary D = W^H A_BS.

    Returns argmax_i |d_i^H y| / ||d_i||; all-zero columns score -inf and the
    lowest index wins ties.
    """
    d = w_mat.conj().T @ a_bs  # (tau, N)
    norms = np.linalg.norm(d, axis=0)
    corr = np.abs(d.conj().T @ np.asarray(ys, dtype=complex))
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(norms > 0.0, corr / norms, -np.inf)
    return int(np.argmax(scores))


def hiebs_run(cb: HierCodebook, env, num_frames: int) -> int:
    """Greedy bisection: at each stage probe both children, descend into the
    larger |y| (ties to the lower-index child).  Returns the 0-based leaf sector."""
    if num_frames != 2 * cb.levels:
        raise ValueError(f"bisection needs exactly {2 * cb.levels} frames, got {num_frames}")
    k = 1
    for stage in range(1, cb.levels + 1):
        left, right = 2 * k - 1, 2 * k
        y_left = env(cb.codeword(stage, left))
        y_right = env(cb.codeword(stage, right))
        k = left if abs(y_left) >= abs(y_right) else right
    return k - 1


def hiepm_select(probs: np.ndarray, levels: int):
    """Codeword choice for posterior matching: walk down the heavier child while
    it still holds more than half the mass, then take whichever of the last
    node and that child is closer to mass 1/2 (ties and the root go to the
    child, so a flat posterior yields a stage-1 beam and a one-hot posterior
    the covering leaf)."""
    probs = np.asarray(probs)
    n = probs.size
    masses = [probs.reshape(2**s, n // 2**s).sum(axis=1) for s in range(1, levels + 1)]

    def heavier_child(stage, k):
        # children of node (stage, k) live at stage+1, whose masses sit in
        # masses[stage]; ties go to the lower index
        row = masses[stage]
        left = 2 * k - 1
        return left if row[left - 1] >= row[left] else left + 1

    node = (0, 1)  # virtual root holds all the mass
    child = (1, heavier_child(0, 1))
    while masses[child[0] - 1][child[1] - 1] > 0.5 and child[0] < levels:
        node = child
        child = (child[0] + 1, heavier_child(child[0], child[1]))
    if node[0] == 0:
        return child
    gap_node = abs(masses[node[0] - 1][node[1] - 1] - 0.5)
    gap_child = abs(masses[child[0] - 1][child[1] - 1] - 0.5)
    return node if gap_node < gap_child else child


def hiepm_run(cb: HierCodebook, env, num_frames: int, power: float, alpha,
              steering: np.ndarray, prior=None, select=hiepm_select) -> int:
    """Known-alpha hierarchical posterior matching; returns the MAP grid index.

    `steering` holds the array responses of the cb.grid_size hypothesis
    angles; `select` may be swapped for a different codeword-selection rule.
    """
    probs = np.full(cb.grid_size, 1.0 / cb.grid_size) if prior is None else np.asarray(prior)
    for _ in range(num_frames):
        stage, k = select(probs, cb.levels)
        w = cb.codeword(stage, k)
        y = env(w)
        probs = posterior_step(probs, loglik_known_alpha(y, gains(w, steering, power), alpha))
    return int(np.argmax(probs))
