"""Command-line front end.

Subcommands: ``codebook`` (build, cache, pattern dump), ``train``, ``eval``,
``sweep`` (multi-SNR, multi-method), ``toy`` (one-shot beam design study).

Configuration is a flat ``key = value`` text file whose keys match the
relevant config dataclass fields; command-line ``--set key=value`` entries
and the common flags (``--seed``, ``--out``) override file values.  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import sys

import numpy as np

from .channel import ArrayConfig, grid_angles, snr_to_power, steering_matrix
from .codebook import beam_pattern, build_codebook, save_codebook
from .evaluate import (ExperimentConfig, monte_carlo_eval,
                       single_trial_posterior, write_report)
from .posterior import uniform_grid_posterior
from .toy import toy_one_step
from .training import TrainConfig, train

__all__ = ["main", "parse_config_text", "load_config"]


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict:
    """Flat key = value lines; '#' starts a comment; blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_NONE_WORDS = {"none", "null", ""}


def _coerce(key: str, text: str, cls) -> object:
    """Parse a raw string against the dataclass field's default type."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} for {cls.__name__}; "
                          f"valid keys: {', '.join(sorted(fields))}")
    field = fields[key]
    default = (field.default if field.default is not dataclasses.MISSING
               else field.default_factory())
    if text.lower() in _NONE_WORDS:
        return None
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple) or key in ("snr_range_db", "snr_db",
                                                 "hidden", "phi_span"):
            parts = [p for p in text.replace(",", " ").split() if p]
            if key == "hidden":
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from exc


def load_config(cls, path=None, overrides=(), seed=None):
    raw = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    if seed is not None:
        raw["seed"] = str(seed)
    kwargs = {k: _coerce(k, v, cls) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _add_common(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--seed", type=int, help="overrides the config seed")
    sub.add_argument("--out", help="output path (file or directory)")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a single config key (repeatable)")


def _cmd_codebook(args) -> int:
    opts = {}
    if args.config:
        with open(args.config) as fh:
            opts.update(parse_config_text(fh.read()))
    for item in args.set:
        key, _, value = item.partition("=")
        opts[key.strip()] = value.strip()
    try:
        m = int(opts.get("num_antennas", 64))
        n = int(opts.get("grid_size", 128))
        levels = int(opts.get("levels", int(np.log2(n))))
        constraint = opts.get("constraint", "two-norm")
        span = opts.get("phi_span", "")
        phi = (tuple(float(p) for p in span.replace(",", " ").split())
               if span else (-np.pi / 3, np.pi / 3))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    angles = grid_angles(n, *phi)
    cb = build_codebook(angles, ArrayConfig(m), levels, constraint)
    print(f"built {cb.vectors.shape[0]}-vector codebook "
          f"(M={m}, N={n}, levels={levels}, {constraint})")
    if args.out:
        save_codebook(args.out, cb)
        print(f"cached to {args.out}")
    if args.pattern_csv:
        dense = grid_angles(int(opts.get("pattern_points", 512)), *phi)
        with open(args.pattern_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "k", "phi_rad", "gain"])
            for stage in range(1, levels + 1):
                for k in range(1, 2 ** stage + 1):
                    pat = beam_pattern(cb.codeword(stage, k), dense,
                                       ArrayConfig(m))
                    for phi_i, gain in zip(dense, pat):
                        writer.writerow([stage, k, f"{phi_i:.10g}",
                                         f"{gain:.10g}"])
        print(f"patterns written to {args.pattern_csv}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(TrainConfig, args.config, args.set, args.seed)
    out = args.out or "."
    every = max(1, args.log_every)

    def progress(row):
        if row["epoch"] % every == 0:
            print(f"epoch {row['epoch']:4d}  train {row['train_loss']:.4f}  "
                  f"val {row['val_loss']:.4f}  best {row['best_val_loss']:.4f}  "
                  f"lr {row['lr']:.3g}", flush=True)

    params, rows = train(cfg, out_dir=out, progress=progress)
    print(f"done: {len(rows)} epochs, best val loss "
          f"{min(r['val_loss'] for r in rows):.6f}, artifacts in {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(ExperimentConfig, args.config, args.set, args.seed)
    rows = monte_carlo_eval(cfg)
    for r in rows:
        print(f"{r.method} @ {r.snr_db:g} dB: {r.metric} = {r.value:.6g} "
              f"+- {r.stderr:.3g} ({r.trials} trials)")
        if not np.isfinite(r.value):
            raise FloatingPointError(f"non-finite metric for {r.method}")
    out = args.out or "results.csv"
    write_report(out, rows)
    print(f"report written to {out}")
    if args.dump_posterior:
        angles, masses = single_trial_posterior(cfg, trial=args.dump_trial)
        with open(args.dump_posterior, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["phi_rad", "mass"])
            for a, p in zip(angles, masses):
                writer.writerow([f"{a:.10g}", f"{p:.10g}"])
        print(f"posterior of trial {args.dump_trial} written to "
              f"{args.dump_posterior}")
    return 0


def _cmd_sweep(args) -> int:
    opts = {}
    if args.config:
        with open(args.config) as fh:
            opts.update(parse_config_text(fh.read()))
    for item in args.set:
        key, _, value = item.partition("=")
        opts[key.strip()] = value.strip()
    methods = [m for m in opts.pop("methods", "hiebs").replace(",", " ").split()
               if m]
    rows = []
    for method in methods:
        raw = dict(opts, method=method)
        kwargs = {k: _coerce(k, v, ExperimentConfig) for k, v in raw.items()}
        if args.seed is not None:
            kwargs["seed"] = args.seed
        try:
            cfg = ExperimentConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"method {method}: {exc}") from exc
        rows.extend(monte_carlo_eval(cfg))
    for r in sorted(rows, key=lambda r: (r.method, r.snr_db)):
        print(f"{r.method} @ {r.snr_db:g} dB: {r.metric} = {r.value:.6g}")
        if not np.isfinite(r.value):
            raise FloatingPointError(f"non-finite metric for {r.method}")
    out = args.out or "sweep.csv"
    write_report(out, rows)
    print(f"report written to {out}")
    return 0


def _cmd_toy(args) -> int:
    opts = {}
    if args.config:
        with open(args.config) as fh:
            opts.update(parse_config_text(fh.read()))
    for item in args.set:
        key, _, value = item.partition("=")
        opts[key.strip()] = value.strip()
    try:
        m = int(opts.get("num_antennas", 8))
        n = int(opts.get("grid_size", 8))
        power = float(opts.get("power", 10.0))
        mc_samples = int(opts.get("mc_samples", 4000))
        cd_steps = int(opts.get("cd_steps", 600))
        seed = int(opts.get("seed", 0)) if args.seed is None else args.seed
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    prior = uniform_grid_posterior(grid_angles(n, -np.pi / 3, np.pi / 3))
    try:
        res = toy_one_step(prior, power, m, mc_samples=mc_samples,
                           rng=np.random.default_rng(seed), cd_steps=cd_steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not np.isfinite(res.g):
        raise FloatingPointError("non-finite expected-SE estimate")
    print(f"coordinate descent: g = {res.g:.6g} rad^2 after {res.accepted} "
          f"accepted moves (start {res.trajectory[0]:.6g})")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "index", "value_re", "value_im"])
            for i, wi in enumerate(res.w):
                writer.writerow(["beam", i, f"{wi.real:.10g}",
                                 f"{wi.imag:.10g}"])
            for i, g in enumerate(res.trajectory):
                writer.writerow(["trajectory", i, f"{g:.10g}", "0"])
        print(f"beam and trajectory written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamalign",
        description="adaptive beam alignment: codebooks, training, evaluation")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("codebook", help="build and cache a hierarchical "
                        "codebook, optionally dumping beam patterns")
    _add_common(p)
    p.add_argument("--pattern-csv", help="write |w^H a(phi)| samples here")
    p.set_defaults(func=_cmd_codebook)

    p = subs.add_parser("train", help="train a sensing policy")
    _add_common(p)
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("eval", help="Monte Carlo evaluation of one method")
    _add_common(p)
    p.add_argument("--dump-posterior", help="write one trial's final "
                   "posterior masses to this CSV (dnn methods)")
    p.add_argument("--dump-trial", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = subs.add_parser("sweep", help="evaluate several methods over an SNR "
                        "list into one report")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = subs.add_parser("toy", help="one-shot beam design study at toy scale")
    _add_common(p)
    p.set_defaults(func=_cmd_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
