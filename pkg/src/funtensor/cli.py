"""Command-line front end: synthesize, fit, predict, evaluate, export.

Outputs are plot-ready CSV/JSON only. Exit codes: 0 success, 2 usage error,
3 inference failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (Dataset, gen_synthetic, load_csv, save_csv, true_surface, write_rows)
from .kernels import MaternHyper
from .model import FitConfig, FittedModel, InferenceError, fit

MANIFEST_FORMAT = "funtensor-manifest/1"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFERENCE = 3


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_synth(args) -> int:
    data = gen_synthetic(args.n, args.noise_var, seed=args.seed,
                         noise_as_std=args.noise_as_std)
    save_csv(data, args.out)
    g = np.linspace(0.0, 1.0, args.grid)
    g1, g2 = np.meshgrid(g, g, indexing="ij")
    rows = np.column_stack([g1.ravel(), g2.ravel(),
                            true_surface(g1.ravel(), g2.ravel())])
    truth_out = args.truth_out or _derive_path(args.out, "_truth.csv")
    write_rows(truth_out, ["i_1", "i_2", "y"], rows)
    print(f"wrote {args.n} entries to {args.out}; truth grid to {truth_out}")
    return EXIT_OK


def _derive_path(base, suffix: str) -> Path:
    base = Path(base)
    return base.with_name(base.stem + suffix)


def cmd_fit(args) -> int:
    data = load_csv(args.data, args.modes)
    kernel = MaternHyper(nu=args.nu, lengthscale=args.lengthscale, variance=args.variance)
    ranks = args.rank[0] if len(args.rank) == 1 else tuple(args.rank)
    config = FitConfig(ranks=ranks, kernel=kernel, a0=args.a0, b0=args.b0,
                       max_iters=args.iters, tol=args.tol, damping=args.damping,
                       model_kind=args.model, moment_mode=args.moment_mode,
                       seed=args.seed)
    started = time.perf_counter()
    model = fit(data, config)
    elapsed = time.perf_counter() - started
    model.save(args.out)
    metrics = model.evaluate(data)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "config": config.as_dict(data.n_modes),
        "seed": args.seed,
        "threads": args.threads,
        "n_train": data.n_entries,
        "timings": {"fit_seconds": elapsed},
        "converged": model.converged,
        "iterations": len(model.trace),
        "beta_clamped": model.beta_clamped,
        "trace": model.trace,
        "metrics": {"train_rmse": metrics["rmse"], "train_mae": metrics["mae"]},
    }
    manifest_out = args.manifest or _derive_path(args.out, ".manifest.json")
    _write_json(manifest_out, manifest)
    print(f"fit {data.n_entries} entries in {elapsed:.2f}s "
          f"({len(model.trace)} iters, converged={model.converged}); "
          f"train rmse={metrics['rmse']:.6g}; model -> {args.out}")
    return EXIT_OK


def _load_points(path, n_modes: int) -> np.ndarray:
    """Index tuples from a CSV with K (or K+1, value ignored) columns."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        import csv as _csv

        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) not in (n_modes, n_modes + 1):
                raise ValueError(f"{path}:{lineno}: expected {n_modes} index columns")
            rows.append([float(c) for c in row[:n_modes]])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows)


def cmd_predict(args) -> int:
    model = FittedModel.load(args.model)
    points = _load_points(args.data, model.n_modes)
    header = [f"i_{k + 1}" for k in range(model.n_modes)] + ["mean"]
    if args.with_var:
        means, variances = model.predict(points, with_var=True)
        rows = np.column_stack([points, means, variances])
        header.append("var")
    else:
        rows = np.column_stack([points, model.predict(points)])
    write_rows(args.out, header, rows)
    print(f"wrote {len(points)} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = FittedModel.load(args.model)
    data = load_csv(args.data, model.n_modes)
    metrics = model.evaluate(data)
    _write_json(args.out, metrics)
    print(f"rmse={metrics['rmse']:.6g} mae={metrics['mae']:.6g} -> {args.out}")
    return EXIT_OK


def cmd_export_traj(args) -> int:
    model = FittedModel.load(args.model)
    modes = range(model.n_modes) if args.mode is None else [args.mode - 1]
    for k in modes:
        if not 0 <= k < model.n_modes:
            raise ValueError(f"mode {k + 1} out of range")
        lo, hi = model.rescale[k]
        grid, means, stds = model.export_trajectory(k, np.linspace(lo, hi, args.grid))
        r = model.ranks[k]
        header = (["index"] + [f"mean_{j + 1}" for j in range(r)]
                  + [f"std_{j + 1}" for j in range(r)])
        out = _derive_path(args.out, f"_mode{k + 1}.csv")
        write_rows(out, header, np.column_stack([grid, means, stds]))
        print(f"wrote mode {k + 1} trajectory ({args.grid} points) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funtensor",
        description="Functional Bayesian Tucker/CP decomposition for "
                    "continuous-indexed sparse tensors.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark dataset")
    p.add_argument("--n", type=int, default=650, help="number of sampled entries")
    p.add_argument("--noise-var", type=float, default=0.02, dest="noise_var")
    p.add_argument("--noise-as-std", action="store_true", dest="noise_as_std",
                   help="interpret --noise-var as a standard deviation")
    p.add_argument("--grid", type=int, default=50, help="truth grid resolution per mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", dest="truth_out", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit a model to a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--modes", type=int, default=2, help="number of tensor modes K")
    p.add_argument("--model", choices=("tucker", "cp"), default="tucker")
    p.add_argument("--rank", type=int, nargs="+", default=[1],
                   help="shared rank, or one rank per mode")
    p.add_argument("--nu", type=float, choices=(0.5, 1.5), default=1.5)
    p.add_argument("--lengthscale", type=float, default=0.1)
    p.add_argument("--variance", type=float, default=1.0)
    p.add_argument("--a0", type=float, default=1.0)
    p.add_argument("--b0", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--damping", type=float, default=0.7)
    p.add_argument("--moment-mode", choices=("exact", "plugin"), default="exact",
                   dest="moment_mode")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0,
                   help="worker hint for the message phase; results do not "
                        "depend on it (0 = all cores)")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at index tuples from a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV of index tuples")
    p.add_argument("--with-var", action="store_true", dest="with_var")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate RMSE/MAE on a labelled CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-traj", help="export per-mode factor trajectories")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--mode", type=int, default=None, help="1-based mode (default: all)")
    p.add_argument("--out", required=True, help="output path stem")
    p.set_defaults(func=cmd_export_traj)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InferenceError as exc:
        print(f"inference failure: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
