"""Sensing policy network: maps the running posterior (plus power and frame
index) to the next beamforming vector.

Architecture: a shared-weight MLP applied at every time frame.  Each dense
layer is preceded by batch normalization; hidden layers use ReLU; the final
layer has width 2M (real/imaginary stacked) followed by a normalization that
enforces the beamforming constraint exactly:

  unit-norm          w = u / ||u||_2
  constant-modulus   w_i = (1/sqrt(M)) * u_i / |u_i|  per complex entry

A small guard (1e-12 squared, inside the square root) keeps both maps
differentiable at u = 0 without disturbing the constraint beyond 1e-12.

All forward math goes through :mod:`beamalign.autodiff` dispatchers, so the
same code runs taped (training) or on plain arrays (evaluation).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

__all__ = [
    "PolicyParams",
    "NORM_GUARD",
    "init_policy",
    "assemble_input",
    "forward",
    "to_complex",
    "policy_beamformer",
    "estimate_head",
    "bind_params",
    "save_policy",
    "load_policy",
]

NORM_GUARD = 1e-12

_MAGIC = b"BAPN1"
_MODES = ("on-grid", "gridless")
_CONSTRAINTS = ("unit-norm", "constant-modulus")


@dataclass
class PolicyParams:
    """All trainable arrays plus batch-norm running statistics.

    arrays is ordered: per layer ell = 1..L the keys
    ``w{ell}, b{ell}, bn{ell}_scale, bn{ell}_shift, bn{ell}_mean, bn{ell}_var``
    followed by ``head_w, head_b`` when mode == "gridless".  Running mean/var
    are not trainable; everything else is.

    Running stats have shape (bn_frames, dim).  bn_frames == 1 keeps one
    shared set updated from every time frame; bn_frames == num_frames keeps
    a separate set per frame position of the unrolled network, since the
    per-frame activation distributions drift apart as the posterior sharpens.
    """

    widths: tuple
    input_dim: int
    constraint: str
    mode: str
    scaled_input: bool
    bn_eps: float
    bn_momentum: float
    bn_frames: int = 1
    arrays: dict = field(default_factory=dict)

    @property
    def num_antennas(self) -> int:
        return self.widths[-1] // 2

    @property
    def num_layers(self) -> int:
        return len(self.widths)

    def trainable_names(self):
        return [n for n in self.arrays
                if not (n.endswith("_mean") or n.endswith("_var"))]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.widths, self.input_dim, self.constraint,
                            self.mode, self.scaled_input, self.bn_eps,
                            self.bn_momentum, self.bn_frames,
                            {k: v.copy() for k, v in self.arrays.items()})


def _layer_input_dims(input_dim, widths):
    return [input_dim] + list(widths[:-1])


def init_policy(input_dim, num_antennas, rng, hidden=(128, 128, 128),
                constraint="unit-norm", mode="on-grid", head_init=None,
                scaled_input=False, bn_eps=1e-5, bn_momentum=0.99,
                bn_frames=1):
    """Fan-in-scaled uniform weights, zero biases, identity batch norm.

    head_init: flattened angle grid for the gridless estimation head, so the
    untrained head reproduces the posterior-mean estimate.
    """
    if constraint not in _CONSTRAINTS:
        raise ValueError(f"constraint must be one of {_CONSTRAINTS}")
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    if bn_frames < 1:
        raise ValueError("bn_frames must be at least 1")
    widths = tuple(int(w) for w in hidden) + (2 * int(num_antennas),)
    if any(w <= 0 for w in widths):
        raise ValueError("layer widths must be positive")
    arrays = {}
    for ell, (fan_in, fan_out) in enumerate(
            zip(_layer_input_dims(input_dim, widths), widths), start=1):
        lim = np.sqrt(6.0 / fan_in)
        arrays[f"w{ell}"] = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        arrays[f"b{ell}"] = np.zeros(fan_out)
        arrays[f"bn{ell}_scale"] = np.ones(fan_in)
        arrays[f"bn{ell}_shift"] = np.zeros(fan_in)
        arrays[f"bn{ell}_mean"] = np.zeros((bn_frames, fan_in))
        arrays[f"bn{ell}_var"] = np.ones((bn_frames, fan_in))
    if mode == "gridless":
        if head_init is None:
            raise ValueError("gridless mode needs head_init (angle grid)")
        arrays["head_w"] = np.asarray(head_init, dtype=float).ravel().copy()
        arrays["head_b"] = np.zeros(1)
    return PolicyParams(widths, int(input_dim), constraint, mode,
                        bool(scaled_input), float(bn_eps),
                        float(bn_momentum), int(bn_frames), arrays)


def bind_params(params: PolicyParams, tape: ad.Tape):
    """Leaf tensors for every trainable array, keyed like params.arrays."""
    return {name: tape.leaf(params.arrays[name])
            for name in params.trainable_names()}


def assemble_input(features, power, t, num_frames=None, scaled=False):
    """Stack [posterior features; power; frame index] row-wise for a batch.

    scaled=True feeds log10(power) and t/num_frames instead of the raw
    values (better conditioned when sweeping wide SNR ranges).
    """
    fv = features.value if isinstance(features, ad.Tensor) else np.asarray(features)
    if fv.ndim != 2:
        raise ValueError("features must be 2-d (batch, feature_dim)")
    batch = fv.shape[0]
    pcol = np.broadcast_to(np.asarray(power, dtype=float).reshape(-1, 1),
                           (batch, 1)).copy()
    if scaled:
        if num_frames is None:
            raise ValueError("scaled input needs num_frames")
        pcol = np.log10(pcol)
        tcol = np.full((batch, 1), t / num_frames)
    else:
        tcol = np.full((batch, 1), float(t))
    return ad.concatenate([features, pcol, tcol], axis=1)


def _stat_row(params, frame):
    if params.bn_frames == 1:
        return 0
    if frame is None:
        raise ValueError("per-frame batch-norm stats need the frame index")
    if not 0 <= frame < params.bn_frames:
        raise ValueError(f"frame {frame} outside tracked range "
                         f"[0, {params.bn_frames})")
    return int(frame)


def _batch_norm(h, arrs, params, ell, train, update_stats, frame):
    scale = arrs[f"bn{ell}_scale"]
    shift = arrs[f"bn{ell}_shift"]
    if train:
        batch = (h.value if isinstance(h, ad.Tensor) else h).shape[0]
        mu = ad.vsum(h, axis=0) / batch
        centered = h - mu
        var = ad.vsum(ad.square(centered), axis=0) / batch
        xhat = centered / ad.sqrt(var + params.bn_eps)
        if update_stats:
            row = _stat_row(params, frame)
            m = params.bn_momentum
            stats_m = params.arrays[f"bn{ell}_mean"]
            stats_v = params.arrays[f"bn{ell}_var"]
            stats_m[row] = m * stats_m[row] + (1 - m) * ad.detach(mu)
            stats_v[row] = m * stats_v[row] + (1 - m) * ad.detach(var)
    else:
        row = _stat_row(params, frame)
        mean = params.arrays[f"bn{ell}_mean"][row]
        denom = np.sqrt(params.arrays[f"bn{ell}_var"][row] + params.bn_eps)
        xhat = (h - mean) / denom
    return xhat * scale + shift


def constrain_output(u, constraint, num_antennas):
    guard = NORM_GUARD ** 2
    if constraint == "unit-norm":
        nsq = ad.vsum(ad.square(u), axis=-1, keepdims=True) + guard
        return u / ad.sqrt(nsq)
    m = num_antennas
    u1 = u[:, :m]
    u2 = u[:, m:]
    r = ad.sqrt(ad.square(u1) + ad.square(u2) + guard)
    scale = 1.0 / np.sqrt(m)
    return ad.concatenate([u1 / r, u2 / r], axis=1) * scale


def forward(params: PolicyParams, x, *, train=False, arrays=None,
            update_stats=True, frame=None):
    """(batch, input_dim) -> constrained (batch, 2M) real-stacked beamformers.

    train=True normalizes with current-batch statistics (and by default folds
    them into the running stats); eval mode uses the stored running stats and
    is deterministic.  Pass ``arrays`` (e.g. from bind_params) to run on tape.
    frame selects the running-stat set when the policy tracks them per frame.
    """
    arrs = params.arrays if arrays is None else {**params.arrays, **arrays}
    xv = x.value if isinstance(x, ad.Tensor) else np.asarray(x)
    if xv.ndim != 2 or xv.shape[1] != params.input_dim:
        raise ValueError(f"expected input (*, {params.input_dim}), got {xv.shape}")
    h = x
    last = params.num_layers
    for ell in range(1, last + 1):
        h = _batch_norm(h, arrs, params, ell, train, update_stats, frame)
        h = ad.matmul(h, arrs[f"w{ell}"]) + arrs[f"b{ell}"]
        if ell < last:
            h = ad.relu(h)
    return constrain_output(h, params.constraint, params.num_antennas)


def to_complex(u):
    """Real-stacked (batch, 2M) -> complex (batch, M)."""
    u = np.asarray(u)
    m = u.shape[-1] // 2
    return u[..., :m] + 1j * u[..., m:]


def policy_beamformer(params: PolicyParams, features, power, t,
                      num_frames=None):
    """Evaluation-path convenience: posterior features -> complex beamformers."""
    v = assemble_input(np.asarray(features, dtype=float), power, t,
                       num_frames=num_frames, scaled=params.scaled_input)
    frame = t if params.bn_frames > 1 else None
    return to_complex(forward(params, v, train=False, frame=frame))


def estimate_head(params: PolicyParams, masses, arrays=None):
    """Linear readout of the flattened posterior masses -> angle estimate."""
    if params.mode != "gridless":
        raise ValueError("estimation head exists only in gridless mode")
    arrs = params.arrays if arrays is None else {**params.arrays, **arrays}
    return ad.matmul(masses, arrs["head_w"]) + arrs["head_b"]


def _declared_order(params: PolicyParams):
    names = []
    for ell in range(1, params.num_layers + 1):
        names += [f"w{ell}", f"b{ell}", f"bn{ell}_scale", f"bn{ell}_shift",
                  f"bn{ell}_mean", f"bn{ell}_var"]
    if params.mode == "gridless":
        names += ["head_w", "head_b"]
    return names


def save_policy(params: PolicyParams, path):
    head_size = params.arrays["head_w"].size if params.mode == "gridless" else 0
    header = struct.pack(
        "<5sBBBB", _MAGIC, 1, _MODES.index(params.mode),
        _CONSTRAINTS.index(params.constraint), int(params.scaled_input))
    header += struct.pack("<IIII", params.input_dim, params.num_layers,
                          head_size, params.bn_frames)
    header += struct.pack("<dd", params.bn_eps, params.bn_momentum)
    header += struct.pack(f"<{params.num_layers}I", *params.widths)
    with open(path, "wb") as fh:
        fh.write(header)
        for name in _declared_order(params):
            fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())


def load_policy(path) -> PolicyParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, mode_i, con_i, scaled = struct.unpack_from("<5sBBBB", raw, 0)
    if magic != _MAGIC:
        raise ValueError("not a policy checkpoint (bad magic)")
    if version != 1:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 9
    input_dim, num_layers, head_size, bn_frames = struct.unpack_from(
        "<IIII", raw, off)
    off += 16
    bn_eps, bn_momentum = struct.unpack_from("<dd", raw, off)
    off += 16
    widths = struct.unpack_from(f"<{num_layers}I", raw, off)
    off += 4 * num_layers
    params = PolicyParams(tuple(widths), input_dim, _CONSTRAINTS[con_i],
                          _MODES[mode_i], bool(scaled), bn_eps, bn_momentum,
                          bn_frames, {})
    dims = _layer_input_dims(input_dim, widths)
    shapes = {}
    for ell, (fan_in, fan_out) in enumerate(zip(dims, widths), start=1):
        shapes[f"w{ell}"] = (fan_in, fan_out)
        shapes[f"b{ell}"] = (fan_out,)
        shapes[f"bn{ell}_scale"] = (fan_in,)
        shapes[f"bn{ell}_shift"] = (fan_in,)
        shapes[f"bn{ell}_mean"] = (bn_frames, fan_in)
        shapes[f"bn{ell}_var"] = (bn_frames, fan_in)
    if params.mode == "gridless":
        shapes["head_w"] = (head_size,)
        shapes["head_b"] = (1,)
    for name in _declared_order(params):
        shape = shapes[name]
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off)
        params.arrays[name] = arr.reshape(shape).astype(float)
        off += 8 * count
    if off != len(raw):
        raise ValueError("checkpoint has trailing bytes; corrupt file")
    return params
