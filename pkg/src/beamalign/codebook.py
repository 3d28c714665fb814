"""Hierarchical sector codebooks and constant-modulus refinement.

Level s of the hierarchy splits the hypothesis grid into 2^s contiguous
sectors.  The codeword for sector (s, k) fits the beam's response A_BS^H w to
the 0/1 indicator g_{s,k} of that sector (see design_operator for the loaded
least-squares solve and why plain pinv(A_BS^H) g collapses on partial-range
grids), is normalized to unit power, and is optionally pushed onto the
constant-modulus manifold |w_i| = 1/sqrt(M) by direct phase projection or by
cyclic coordinate descent on ||A^H w - g||^2.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .channel import ArrayConfig, steering_matrix

__all__ = [
    "CONSTRAINTS",
    "sector_indicator",
    "design_operator",
    "hier_codeword",
    "cm_project",
    "cm_refine",
    "HierCodebook",
    "build_codebook",
    "beam_pattern",
    "save_codebook",
    "load_codebook",
    "cached_codebook",
]

CONSTRAINTS = ("two-norm", "cm-project", "cm-refine")
_MAGIC = b"BACB1"


def sector_indicator(stage: int, k: int, n: int) -> np.ndarray:
    """0/1 target response g_{s,k}: ones on grid slots (k-1) n/2^s .. k n/2^s - 1."""
    width, rem = divmod(n, 2**stage)
    if stage < 1 or rem != 0 or width == 0:
        raise ValueError(f"stage {stage} does not partition a grid of {n}")
    if not 1 <= k <= 2**stage:
        raise ValueError(f"sector index {k} out of range at stage {stage}")
    g = np.zeros(n)
    g[(k - 1) * width : k * width] = 1.0
    return g


def design_operator(a_bs: np.ndarray, loading="auto") -> np.ndarray:
    """Map from target responses g to (unnormalized) sector beams.

    loading "auto" solves the diagonally loaded problem
    w = (A A^H + lam I)^{-1} A g with lam = tr(A A^H)/M, the mean eigenvalue.
    When the grid's spatial frequencies tile the whole band, A A^H is a scaled
    identity and this is exactly the normalized least-squares beam pinv(A^H) g;
    for partial-range grids in angle, A A^H has a cluster of near-zero
    eigenvalues and the raw least-squares solution hides almost all of its
    norm in those invisible directions, leaving no usable gain after power
    normalization.  The loading suppresses them.  loading=0.0 selects the
    plain pseudoinverse (SVD cutoff 1e-10 sigma_max); a float selects that
    loading value directly.
    """
    m = a_bs.shape[0]
    if loading == "auto":
        loading = float(np.sum(np.abs(a_bs) ** 2)) / m
    if loading == 0.0:
        return np.linalg.pinv(a_bs, rcond=1e-10).conj().T
    if loading < 0.0:
        raise ValueError("loading must be nonnegative")
    return np.linalg.solve(a_bs @ a_bs.conj().T + loading * np.eye(m), a_bs)


def hier_codeword(a_bs: np.ndarray, stage: int, k: int, loading="auto",
                  operator=None) -> np.ndarray:
    """Unit-norm sector beam for (stage, k); scale-invariant in the target g.

    `operator` takes a precomputed design_operator(a_bs, loading) so codebook
    builds factor the system once.
    """
    if operator is None:
        operator = design_operator(a_bs, loading)
    w = operator @ sector_indicator(stage, k, a_bs.shape[1])
    nrm = np.linalg.norm(w)
    if nrm < 1e-12:
        raise ValueError(f"degenerate grid: sector ({stage},{k}) maps to the zero beam")
    return w / nrm


def cm_project(w: np.ndarray) -> np.ndarray:
    """Nearest constant-modulus beam (1/sqrt(M)) e^{j angle(w)}; zero entries get phase 0."""
    return np.exp(1j * np.angle(w)) / np.sqrt(w.size)


def cm_refine(a_bs: np.ndarray, g: np.ndarray, w_init: np.ndarray,
              max_sweeps: int = 50, tol: float = 1e-8) -> np.ndarray:
    """Cyclic coordinate descent on ||A^H w - g||^2 over the phases of w.

    With every other coordinate held fixed the objective is
    const + 2 Re(conj(w_i) d_i^H c), d_i the i-th column of A^H and c the
    residual excluding coordinate i, so the optimal phase is
    angle(d_i^H c) + pi.  Each accepted update must not increase the
    objective; sweeps stop when one full pass improves it by less than tol.
    """
    m = a_bs.shape[0]
    rho = 1.0 / np.sqrt(m)
    w = np.asarray(w_init, dtype=complex).copy()
    if np.max(np.abs(np.abs(w) - rho)) > 1e-9:
        raise ValueError("w_init is not constant-modulus at 1/sqrt(M)")
    ah = a_bs.conj().T  # (N, M)
    for _ in range(max_sweeps):
        resid = ah @ w - g
        obj = float(np.vdot(resid, resid).real)
        start = obj
        for i in range(m):
            di = ah[:, i]
            c = resid - di * w[i]
            z = np.vdot(di, c)
            if abs(z) == 0.0:
                continue  # objective flat in this phase
            wi = -rho * z / abs(z)
            resid_new = c + di * wi
            obj_new = float(np.vdot(resid_new, resid_new).real)
            if obj_new > obj + 1e-12 * (1.0 + obj):
                raise AssertionError("coordinate update increased the objective")
            w[i], resid, obj = wi, resid_new, obj_new
        if start - obj < tol:
            break
    return w


@dataclass(frozen=True)
class HierCodebook:
    """Stacked codewords for stages 1..levels over an n-point grid."""

    num_antennas: int
    grid_size: int
    levels: int
    constraint: str
    vectors: np.ndarray  # (2^(levels+1) - 2, M), stages ascending, k ascending

    def __post_init__(self):
        expect = 2 ** (self.levels + 1) - 2
        if self.vectors.shape != (expect, self.num_antennas):
            raise ValueError("codebook vector block has the wrong shape")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")

    def flat_index(self, stage: int, k: int) -> int:
        if not (1 <= stage <= self.levels and 1 <= k <= 2**stage):
            raise ValueError(f"no codeword ({stage},{k}) in a {self.levels}-level book")
        return 2**stage - 2 + (k - 1)

    def codeword(self, stage: int, k: int) -> np.ndarray:
        return self.vectors[self.flat_index(stage, k)]

    def sector(self, stage: int, k: int):
        """Grid-index span [lo, hi) covered by codeword (stage, k)."""
        width = self.grid_size // 2**stage
        return (k - 1) * width, k * width


def build_codebook(angles, cfg: ArrayConfig, levels: int,
                   constraint: str = "two-norm", max_sweeps: int = 50,
                   tol: float = 1e-8) -> HierCodebook:
    angles = np.asarray(angles, dtype=float)
    n = angles.size
    if 2**levels > n:
        raise ValueError("more leaf sectors than grid points")
    if constraint not in CONSTRAINTS:
        raise ValueError(f"unknown constraint {constraint!r}")
    a_bs = steering_matrix(angles, cfg)
    operator = design_operator(a_bs)
    rows = []
    for stage in range(1, levels + 1):
        for k in range(1, 2**stage + 1):
            w = hier_codeword(a_bs, stage, k, operator=operator)
            if constraint != "two-norm":
                w = cm_project(w)
            if constraint == "cm-refine":
                w = cm_refine(a_bs, sector_indicator(stage, k, n), w,
                              max_sweeps=max_sweeps, tol=tol)
            rows.append(w)
    return HierCodebook(cfg.num_antennas, n, levels, constraint, np.stack(rows))


def beam_pattern(w: np.ndarray, phis, cfg: ArrayConfig) -> np.ndarray:
    """|w^H a(phi)| sampled at the given angles."""
    return np.abs(np.conj(w) @ steering_matrix(phis, cfg))


def save_codebook(path, cb: HierCodebook):
    """Binary cache: magic BACB1, uint32 (M, N, S, constraint tag), then each
    codeword row-major as little-endian float64 re/im pairs."""
    tag = CONSTRAINTS.index(cb.constraint)
    inter = np.empty((cb.vectors.shape[0], cb.num_antennas, 2))
    inter[:, :, 0] = cb.vectors.real
    inter[:, :, 1] = cb.vectors.imag
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<4I", cb.num_antennas, cb.grid_size, cb.levels, tag))
        f.write(inter.astype("<f8").tobytes())


def load_codebook(path) -> HierCodebook:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a codebook cache")
    m, n, levels, tag = struct.unpack_from("<4I", raw, len(_MAGIC))
    if tag >= len(CONSTRAINTS):
        raise ValueError(f"{path}: unknown constraint tag {tag}")
    count = 2 ** (levels + 1) - 2
    body = np.frombuffer(raw, dtype="<f8", offset=len(_MAGIC) + 16)
    if body.size != count * m * 2:
        raise ValueError(f"{path}: truncated codebook cache")
    inter = body.reshape(count, m, 2)
    return HierCodebook(m, n, levels, CONSTRAINTS[tag],
                        inter[:, :, 0] + 1j * inter[:, :, 1])


def cached_codebook(angles, cfg: ArrayConfig, levels: int, constraint: str,
                    cache_dir) -> HierCodebook:
    """Load the (M, N, S, constraint, span) codebook from disk, building on a miss."""
    angles = np.asarray(angles, dtype=float)
    lo, hi = np.rad2deg(angles[0]), np.rad2deg(angles[-1])
    name = (f"codebook_m{cfg.num_antennas}_n{angles.size}_s{levels}_{constraint}"
            f"_{lo:.6g}_{hi:.6g}.bacb")
    path = os.path.join(cache_dir, name)
    if os.path.exists(path):
        return load_codebook(path)
    cb = build_codebook(angles, cfg, levels, constraint)
    os.makedirs(cache_dir, exist_ok=True)
    save_codebook(path, cb)
    return cb
