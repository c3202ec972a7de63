"""Command line front end for the compression experiments.

Subcommands
-----------
hilbert     error-vs-rank curves for the Hilbert tensor, action-built vs SVD
synthetic   exact-recovery harness on a random tensor train
derivative  compress a whitened derivative tensor of the PDE map
taylor      surrogate accuracy statistics over Gaussian samples
info        environment and defaults as JSON on stdout

Every file-writing command drops a ``<command>_manifest.json`` next to its
outputs recording the configuration, library versions, and timestamps.  Data
files are deterministic for a fixed seed at any thread count; ``--no-timing``
zeroes their seconds columns so reruns compare byte for byte (manifests keep
real timestamps).  Exit codes: 0 success, 2 bad configuration, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .builder import BuildConfig, predicted_action_count, tt_from_actions
from .core import (
    DENSE_GUARD,
    TensorTrain,
    oracle_from_tt,
    tt_dense_error,
    tt_round,
    tt_save,
    tt_to_dense,
)
from .errors import (
    BacktrackingRequiredError,
    BuildStageError,
    CapacityError,
    DegenerateRangeError,
    FormatError,
    InterpolationError,
    NewtonError,
    ShapeError,
    ZeroNormError,
)
from .hilbert import DEFAULT_DIMS, hilbert_dense, hilbert_oracle, ttsvd_error_curve
from .hovd import (
    ReactionDiffusionModel,
    WhitenedMap,
    build_taylor_surrogate,
    compress_derivative,
    taylor_error_stats,
)

_NUMERICAL_ERRORS = (
    BacktrackingRequiredError,
    BuildStageError,
    CapacityError,
    DegenerateRangeError,
    InterpolationError,
    NewtonError,
    ZeroNormError,
    np.linalg.LinAlgError,
)


def _int_tuple(text):
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints: {text!r}") from exc


def _workers(args):
    if args.threads == 0:
        return os.cpu_count() or 1
    return max(1, args.threads)


def _subseed(seed, *tag):
    return int(np.random.SeedSequence((seed,) + tag).generate_state(1)[0])


def _fmt(value):
    # repr keeps full float round-trip precision with a '.' decimal point
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([_fmt(v) for v in row] for row in rows)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def _finish(args, command, outputs, started, t0):
    out_dir = Path(args.out_dir)
    config = {
        key: _jsonable(val)
        for key, val in sorted(vars(args).items())
        if key != "func"
    }
    manifest = {
        "command": command,
        "config": config,
        "seed": args.seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "ttaction": __version__,
        },
        "timestamps": {
            "start": started,
            "end": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "seconds": time.perf_counter() - t0,
        },
        "outputs": [Path(p).name for p in outputs],
    }
    _write_json(out_dir / f"{command}_manifest.json", manifest)


def _seconds(args, value):
    return 0.0 if args.no_timing else float(value)


def cmd_hilbert(args):
    if args.max_rank < 2:
        raise ShapeError(f"--max-rank must be >= 2, got {args.max_rank}")
    if len(args.dims) < 2 or min(args.dims) < 2:
        raise ShapeError(f"--dims must be at least 2 modes of size >= 2: {args.dims}")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dims = args.dims
    ranks = list(range(2, args.max_rank + 1))
    caps = [
        int(min(np.prod(dims[: i + 1], dtype=np.int64),
                np.prod(dims[i + 1:], dtype=np.int64)))
        for i in range(len(dims) - 1)
    ]
    dense = hilbert_dense(dims)
    curve, setup_seconds = ttsvd_error_curve(dense, ranks)
    shared = setup_seconds / len(ranks)
    by_rank = {}
    for rank, error, seconds in curve:
        by_rank[rank] = [("svd", error, 0, seconds + shared)]
    oracle = hilbert_oracle(dims)
    for rank in ranks:
        oracle.reset_count()
        t_build = time.perf_counter()
        train, report = tt_from_actions(
            oracle,
            BuildConfig(
                ranks=[min(rank, c) for c in caps],
                oversampling=args.p,
                tau_extra=args.tau_extra,
                seed=args.seed,
                workers=_workers(args),
            ),
        )
        error = tt_dense_error(dense, train)
        by_rank[rank].insert(
            0, ("rsvd", error, report.total_actions, time.perf_counter() - t_build)
        )
    rows = [
        (rank, method, error, actions, _seconds(args, seconds))
        for rank in ranks
        for method, error, actions, seconds in by_rank[rank]
    ]
    path = out_dir / "hilbert.csv"
    _write_csv(path, ("rank", "method", "rel_error", "actions", "seconds"), rows)
    _finish(args, "hilbert", [path], started, t0)
    return [path]


def cmd_synthetic(args):
    d = len(args.shape)
    if d < 2:
        raise ShapeError("--shape needs at least 2 modes")
    if len(args.true_ranks) != d - 1:
        raise ShapeError(f"--true-ranks needs {d - 1} entries, got {len(args.true_ranks)}")
    build_ranks = args.build_ranks or args.true_ranks
    if len(build_ranks) != d - 1:
        raise ShapeError(f"--build-ranks needs {d - 1} entries, got {len(build_ranks)}")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 7001)))
    bounds = (1,) + tuple(args.true_ranks) + (1,)
    cores = [
        rng.standard_normal((bounds[k], args.shape[k], bounds[k + 1]))
        for k in range(d)
    ]
    true_tt = TensorTrain(cores)
    norm = float(np.linalg.norm(tt_round(true_tt).cores[-1]))
    if norm == 0.0:
        raise ZeroNormError("degenerate random train")
    cores[0] = cores[0] / norm
    true_tt = TensorTrain(cores)

    oracle = oracle_from_tt(true_tt)
    train, report = tt_from_actions(
        oracle,
        BuildConfig(
            ranks=list(build_ranks),
            oversampling=args.p,
            tau_extra=args.tau_extra,
            seed=args.seed,
            workers=_workers(args),
        ),
    )
    if int(np.prod(args.shape, dtype=np.int64)) <= DENSE_GUARD:
        dense = tt_to_dense(true_tt)
        error = tt_dense_error(dense, train)
        error_method = "dense"
    else:
        probe_rng = np.random.default_rng(np.random.SeedSequence((args.seed, 7002)))
        num = den = 0.0
        built_oracle = oracle_from_tt(train)
        for _ in range(32):
            vectors = [probe_rng.standard_normal(n) for n in args.shape[:-1]]
            ref = oracle.action(d, vectors)
            err = built_oracle.action(d, vectors) - ref
            num += float(err @ err)
            den += float(ref @ ref)
        error = float(np.sqrt(num / den))
        error_method = "probes"
    predicted = predicted_action_count(
        args.shape, build_ranks, oversampling=args.p, tau_extra=args.tau_extra
    )
    payload = {
        "shape": list(args.shape),
        "true_ranks": list(args.true_ranks),
        "build_ranks": list(build_ranks),
        "ranks_built": list(train.ranks),
        "relative_error": error,
        "error_method": error_method,
        "pass": bool(error < 1e-6),
        "actions_observed": report.total_actions,
        "actions_predicted": predicted,
        "oversampling": args.p,
        "tau_extra": args.tau_extra,
        "seed": args.seed,
        "seconds": _seconds(args, time.perf_counter() - t0),
    }
    path = out_dir / "synthetic.json"
    _write_json(path, payload)
    _finish(args, "synthetic", [path], started, t0)
    return [path]


def cmd_derivative(args):
    if (args.rank is None) == (args.eps is None):
        raise ShapeError("give exactly one of --rank and --eps")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = ReactionDiffusionModel(args.n)
    train, info = compress_derivative(
        model,
        args.k,
        rank=args.rank,
        eps=args.eps,
        seed=args.seed,
        oversampling=args.p,
        tau_extra=args.tau_extra,
        workers=_workers(args),
        max_rank=args.max_rank,
    )
    info["ranks_built"] = list(train.ranks)
    info["seconds"] = _seconds(args, info["seconds"])
    tt_path = out_dir / "derivative_tt.bin"
    tt_save(train, tt_path)
    path = out_dir / "derivative.json"
    _write_json(path, info)
    _finish(args, "derivative", [path, tt_path], started, t0)
    return [path, tt_path]


def cmd_taylor(args):
    if args.max_order < 1:
        raise ShapeError(f"--max-order must be >= 1, got {args.max_order}")
    if args.samples < 1:
        raise ShapeError(f"--samples must be >= 1, got {args.samples}")
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = ReactionDiffusionModel(args.n)
    whitener = WhitenedMap(model)
    surrogate, _reports = build_taylor_surrogate(
        model,
        args.max_order,
        args.rank,
        seed=args.seed,
        oversampling=args.p,
        workers=_workers(args),
        whitener=whitener,
    )
    stats = taylor_error_stats(
        surrogate,
        whitener.evaluate,
        args.samples,
        seed=_subseed(args.seed, 9),
    )
    stats_rows = [
        (order, stats["means"][i], stats["stds"][i], args.samples)
        for i, order in enumerate(stats["orders"])
    ]
    stats_path = out_dir / "taylor_stats.csv"
    _write_csv(stats_path, ("order", "mean", "std", "n_samples"), stats_rows)
    sample_rows = [
        (order, j, float(stats["errors"][i, j]))
        for i, order in enumerate(stats["orders"])
        for j in range(args.samples)
    ]
    samples_path = out_dir / "taylor_samples.csv"
    _write_csv(samples_path, ("order", "sample", "error"), sample_rows)
    _finish(args, "taylor", [stats_path, samples_path], started, t0)
    return [stats_path, samples_path]


def cmd_info(args):
    payload = {
        "defaults": {
            "hilbert_dims": list(DEFAULT_DIMS),
            "oversampling": 5,
            "tau_extra": 1,
            "model_grid": 12,
        },
        "dense_guard_entries": DENSE_GUARD,
        "platform": platform.platform(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "ttaction": __version__,
        },
    }
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return []


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base random seed")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument(
        "--threads", type=int, default=1, help="worker threads; 0 = auto"
    )
    common.add_argument(
        "--p", type=int, default=5, help="range-finder oversampling"
    )
    common.add_argument(
        "--tau-extra", type=int, default=1,
        help="extra interpolation slices beyond ceil(rank / mode size)",
    )
    common.add_argument(
        "--no-timing", action="store_true",
        help="write 0.0 in seconds columns so reruns compare byte for byte",
    )

    parser = argparse.ArgumentParser(
        prog="ttaction",
        description="Tensor-train compression from actions: experiment front end.",
    )
    sub = parser.add_subparsers(dest="command")

    p_h = sub.add_parser(
        "hilbert", parents=[common],
        help="error-vs-rank curves on the Hilbert tensor",
    )
    p_h.add_argument("--dims", type=_int_tuple, default=DEFAULT_DIMS)
    p_h.add_argument("--max-rank", type=int, default=10)
    p_h.set_defaults(func=cmd_hilbert)

    p_s = sub.add_parser(
        "synthetic", parents=[common], help="exact-recovery harness"
    )
    p_s.add_argument("--shape", type=_int_tuple, default=(20, 20, 20, 20, 20))
    p_s.add_argument("--true-ranks", type=_int_tuple, default=(4, 5, 6, 4))
    p_s.add_argument("--build-ranks", type=_int_tuple, default=None)
    p_s.set_defaults(func=cmd_synthetic)

    p_d = sub.add_parser(
        "derivative", parents=[common],
        help="compress a whitened derivative tensor of the PDE map",
    )
    p_d.add_argument("--n", type=int, default=12, help="grid points per side")
    p_d.add_argument("--k", type=int, default=2, help="derivative order")
    p_d.add_argument("--rank", type=int, default=None)
    p_d.add_argument("--eps", type=float, default=None,
                     help="relative spectral-error target for the adaptive rank")
    p_d.add_argument("--max-rank", type=int, default=None)
    p_d.set_defaults(func=cmd_derivative)

    p_t = sub.add_parser(
        "taylor", parents=[common],
        help="surrogate error statistics over Gaussian samples",
    )
    p_t.add_argument("--n", type=int, default=12, help="grid points per side")
    p_t.add_argument("--max-order", type=int, default=3)
    p_t.add_argument("--rank", type=int, default=10)
    p_t.add_argument("--samples", type=int, default=200)
    p_t.set_defaults(func=cmd_taylor)

    p_i = sub.add_parser("info", parents=[common], help="environment report")
    p_i.set_defaults(func=cmd_info)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ShapeError, FormatError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
