"""Command-line surface.

Subcommands: train, predict, gen-splits, benchmark, export-pca.  Model
configuration is a JSON file validated against the sequence grammar before
any computation; every diagnostic names the offending file or field.

Exit codes: 0 success, 2 validation error, 3 numerical abort.

The environment variable FINEMORPHS_THREADS caps intra-run BLAS
parallelism; it is applied before the numeric stack loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class ConfigError(ValueError):
    pass


_CONFIG_KEYS = {
    "sequence", "d_y", "s", "r", "lambda", "T", "h", "schedule", "inner_dim",
    "dims", "inner_affine_cost", "n_subset", "seed", "trainer", "optimizer",
}
_TRAINER_KEYS = {"max_sigma_loops", "sigma_decay", "verbose"}
_OPTIMIZER_KEYS = {
    "memory", "max_iters", "grad_tol", "obj_rel_tol", "wolfe_c1", "wolfe_c2",
    "max_linesearch",
}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key in cfg:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown config field {key!r}")
    for sub, allowed in (("trainer", _TRAINER_KEYS), ("optimizer", _OPTIMIZER_KEYS)):
        for key in cfg.get(sub, {}):
            if key not in allowed:
                raise ConfigError(f"{path}: unknown {sub} field {key!r}")
    if "sequence" not in cfg:
        raise ConfigError(f"{path}: missing required field 'sequence'")
    return cfg


def build_spec(cfg: dict, d_x: int):
    from .sequence import parse_sequence

    schedule = cfg.get("schedule")
    if schedule == "none":
        schedule = None
    n_subset = cfg.get("n_subset")
    if n_subset == "all":
        n_subset = None
    try:
        return parse_sequence(
            cfg["sequence"],
            d_x,
            int(cfg.get("d_y", 1)),
            s=int(cfg.get("s", 1)),
            r=int(cfg.get("r", 0)),
            lam=float(cfg.get("lambda", 1.0)),
            steps=cfg.get("T", 10),
            widths=cfg.get("h"),
            schedule=schedule,
            inner_dims=cfg.get("inner_dim", cfg.get("dims")),
            inner_affine_cost=cfg.get("inner_affine_cost"),
            n_subset=n_subset,
        )
    except ValueError as exc:
        raise ConfigError(f"config field error: {exc}") from exc


def build_train_config(cfg: dict):
    from .optimizer import OptimizerConfig
    from .trainer import TrainConfig

    try:
        opt = OptimizerConfig(**cfg.get("optimizer", {}))
        return TrainConfig(
            optimizer=opt,
            rng_seed=int(cfg.get("seed", 0)),
            n_subset=cfg.get("n_subset"),
            **cfg.get("trainer", {}),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field error: {exc}") from exc


def _cmd_train(args) -> int:
    from .dataio import read_dataset
    from .persist import save_model
    from .trainer import train

    cfg = load_config(args.config)
    x, y = read_dataset(args.data, int(cfg.get("d_y", 1)))
    spec = build_spec(cfg, x.shape[1])
    model = train(spec, x, y, build_train_config(cfg))
    save_model(model, args.out)
    print(f"model written to {args.out}")
    return 0


def _cmd_predict(args) -> int:
    from .dataio import read_matrix, write_predictions
    from .persist import load_model
    from .predictor import predict

    model = load_model(args.model)
    x = read_matrix(args.data)
    targets = read_matrix(args.targets) if args.targets else None
    result = predict(model, x, targets=targets)
    write_predictions(args.out, result.predictions)
    print(f"predictions written to {args.out}")
    if result.rmse is not None:
        print(f"rmse={result.rmse:.6g}")
    return 0


def _cmd_gen_splits(args) -> int:
    from .dataio import read_dataset, write_split_files
    from .preprocess import make_splits

    x, _ = read_dataset(args.data, args.d_y)
    splits = make_splits(
        x.shape[0], args.kind, count=args.count, x=x, rng_seed=args.seed
    )
    paths = write_split_files(args.out, splits)
    print(f"wrote {len(paths)} {args.kind} splits to {args.out}")
    return 0


def _cmd_benchmark(args) -> int:
    import glob

    from .benchmark import (
        format_summary_csv,
        run_ridge_splits,
        run_splits,
        summarize,
    )
    from .dataio import read_dataset, read_split_file

    cfg = load_config(args.config)
    x, y = read_dataset(args.data, int(cfg.get("d_y", 1)))
    spec = build_spec(cfg, x.shape[1])
    train_cfg = build_train_config(cfg)
    paths = sorted(glob.glob(os.path.join(args.splits, "*_split_*.txt")))
    if not paths:
        raise ConfigError(f"{args.splits}: no split files found")
    splits = [read_split_file(p) for p in paths]
    for tr, te in splits:
        bad = [i for i in list(tr) + list(te) if not 0 <= i < x.shape[0]]
        if bad:
            raise ConfigError(f"{args.splits}: split index {bad[0]} out of range")
    rows = [summarize(cfg["sequence"], run_splits(x, y, splits, spec, train_cfg,
                                                  parallel=args.parallel_splits))]
    if args.baseline == "ridge":
        rows.append(summarize("ridge", run_ridge_splits(x, y, splits, lam=float(cfg.get("lambda", 1.0)))))
    text = format_summary_csv(rows)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def _cmd_export_pca(args) -> int:
    from .dataio import read_dataset
    from .persist import load_model
    from .predictor import export_pca_snapshots

    model = load_model(args.model)
    x, y = read_dataset(args.data, model.spec.d_y)
    try:
        times = [float(t) for t in args.times.split(",") if t.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"--times: {exc}") from exc
    if not times:
        raise ConfigError("--times: need at least one time in [0, 1]")
    export_pca_snapshots(model, x, y, module=args.module, times=times, out_path=args.out)
    print(f"snapshots written to {args.out}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="finemorphs",
        description="Regression with affine and kernel-flow module sequences",
    )
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a dataset CSV")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_cmd_train)

    q = sub.add_parser("predict", help="apply a saved model to predictors")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--targets", help="optional response CSV; prints RMSE")
    q.set_defaults(fn=_cmd_predict)

    g = sub.add_parser("gen-splits", help="write train/test split files")
    g.add_argument("--data", required=True)
    g.add_argument("--kind", choices=["standard", "gap"], required=True)
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--d-y", type=int, default=1, dest="d_y")
    g.set_defaults(fn=_cmd_gen_splits)

    b = sub.add_parser("benchmark", help="average test RMSE over split files")
    b.add_argument("--data", required=True)
    b.add_argument("--splits", required=True)
    b.add_argument("--config", required=True)
    b.add_argument("--baseline", choices=["ridge"], default=None)
    b.add_argument("--parallel-splits", type=int, default=1, dest="parallel_splits")
    b.add_argument("--out")
    b.set_defaults(fn=_cmd_benchmark)

    e = sub.add_parser("export-pca", help="export principal-component snapshots")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--module", type=int, required=True,
                   help="1-based index among the diffeomorphic modules")
    e.add_argument("--times", required=True, help="comma-separated times in [0, 1]")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_export_pca)
    return p


def main(argv=None) -> int:
    threads = os.environ.get("FINEMORPHS_THREADS")
    if threads:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, threads)
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
