"""Split-averaged evaluation: train per split, report mean RMSE and SEM."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .baseline import fit_ridge, predict_ridge
from .predictor import predict, rmse
from .trainer import TrainConfig, train


def _split_worker(args):
    x, y, train_idx, test_idx, spec, cfg, split_index = args
    cfg = replace(cfg, rng_seed=cfg.rng_seed + 1000 * split_index, verbose=False)
    model = train(spec, x[train_idx], y[train_idx], cfg)
    return predict(model, x[test_idx], targets=y[test_idx]).rmse


def run_splits(
    x: np.ndarray,
    y: np.ndarray,
    splits: Sequence[Tuple[np.ndarray, np.ndarray]],
    spec,
    cfg: TrainConfig,
    parallel: int = 1,
) -> list:
    """Per-split test RMSE of the sequence model.

    Each split trains independently with its own derived seed, so results
    do not depend on the worker count.
    """
    jobs = [
        (x, y, tr, te, spec, cfg, i) for i, (tr, te) in enumerate(splits)
    ]
    if parallel > 1 and len(jobs) > 1:
        # Keep each worker single-threaded in BLAS so processes scale.
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_split_worker, jobs))
    return [_split_worker(j) for j in jobs]


def run_ridge_splits(x, y, splits, lam: float = 1.0) -> list:
    out = []
    for tr, te in splits:
        model = fit_ridge(x[tr], y[tr], lam)
        out.append(rmse(predict_ridge(model, x[te]), y[te]))
    return out


def summarize(name: str, rmses: Sequence[float]):
    """(name, mean, stderr, n); stderr is None for a single split."""
    vals = np.asarray(list(rmses), dtype=float)
    n = vals.shape[0]
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else None
    return name, mean, stderr, n


def format_summary_csv(rows) -> str:
    """Fixed `name,mean,stderr,n_splits` lines; stderr NA for one split."""
    lines = ["name,mean,stderr,n_splits"]
    for name, mean, stderr, n in rows:
        se = "NA" if stderr is None else f"{stderr:.6g}"
        lines.append(f"{name},{mean:.6g},{se},{n}")
    return "\n".join(lines) + "\n"
