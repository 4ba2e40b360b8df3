"""Full training driver.

Pipeline: standardize, estimate the endpoint weight from local linear
regressions, pick anchors (k-means++ seeding) and reorder them first,
initialize parameters, then repeatedly minimize the objective, halving
sigma^2 between loops, until the unstandardized training MSE beats
max(sigma^2_mse, 0.01) or the loop budget runs out.  A final minimize at
the last sigma completes training.  Every loop warm-starts from the
previous optimum.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import objective as obj
from .adjoint import backward_pass
from .flow import forward_pass
from .optimizer import MinimizeReport, OptimizerConfig, ParamLayout, minimize
from .preprocess import (
    Standardization,
    anchors_first_permutation,
    estimate_sigma,
    select_subset,
    standardize,
)
from .sequence import ModelParams, SequenceSpec, init_params


@dataclass(frozen=True)
class TrainConfig:
    max_sigma_loops: int = 20
    sigma_decay: float = 0.5       # multiplier applied to sigma^2 between loops
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    rng_seed: int = 0
    n_subset: Union[int, str, None] = None   # None or "all" trains on every point
    verbose: bool = True

    def __post_init__(self):
        if not 0.0 < self.sigma_decay < 1.0:
            raise ValueError(f"sigma_decay must lie in (0, 1), got {self.sigma_decay}")
        if self.max_sigma_loops < 1:
            raise ValueError("max_sigma_loops must be >= 1")


@dataclass
class LoopRecord:
    loop: int
    sigma_sq: float
    breakdown: obj.ObjectiveBreakdown
    train_mse: float
    minimize_report: MinimizeReport


@dataclass
class TrainReport:
    sigma_mse_sq: float
    sigma_sq_init: float
    target_mse: float
    sigma_decay: float
    loops: list
    final: Optional[LoopRecord] = None

    @property
    def final_train_mse(self) -> float:
        return self.final.train_mse

    @property
    def n_minimize_calls(self) -> int:
        return len(self.loops) + 1


@dataclass
class TrainedModel:
    """Everything prediction needs: spec, parameters, cached anchor
    trajectories, standardization, and the final endpoint weight."""

    spec: SequenceSpec
    params: ModelParams
    caches: list
    standardization: Standardization
    sigma_sq: float
    n_subset: int
    anchor_indices: np.ndarray
    report: TrainReport
    rng_seed: int = 0

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma_sq))


def warm_start(prev: ModelParams) -> ModelParams:
    """Copy of the previous optimum used to seed the next sigma loop."""
    return prev.copy()


def _progress(verbose: bool, **kv):
    if verbose:
        line = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in kv.items())
        print(line, file=sys.stderr, flush=True)


def train(spec: SequenceSpec, train_x_raw, train_y_raw, cfg: TrainConfig = TrainConfig()) -> TrainedModel:
    """Train the sequence on raw data and return the persistence unit."""
    ds, _ = standardize(
        train_x_raw, train_y_raw, None, s=spec.s, r=spec.r, rng_seed=cfg.rng_seed
    )
    n = ds.x.shape[0]
    if n < 10:
        raise ValueError(f"training needs at least 10 rows, got {n}")
    sigma_mse_sq, sigma_sq = estimate_sigma(ds)
    target = max(sigma_mse_sq, 0.01)

    n_subset = cfg.n_subset
    if n_subset in (None, "all"):
        n_subset = spec.n_subset if spec.n_subset is not None else n
    n_subset = int(n_subset)
    anchor_idx = select_subset(ds.x, n_subset, rng_seed=cfg.rng_seed + 1)
    perm = anchors_first_permutation(anchor_idx, n)
    ds = ds.reordered(perm)

    params = init_params(spec, n_subset, rng_seed=cfg.rng_seed + 2)
    layout = ParamLayout(spec, n_subset)

    def make_callback(sig_sq):
        def f(vec):
            p = layout.unflatten(vec)
            fwd = forward_pass(spec, p, ds.x, n_subset)
            breakdown = obj.evaluate(spec, p, fwd, ds.y, sig_sq)
            _, grads = backward_pass(spec, p, fwd, ds.y, sig_sq)
            return breakdown.total, layout.flatten_grads(grads)

        return f

    def run_loop(p, sig_sq):
        vec, _, rep = minimize(make_callback(sig_sq), layout.flatten(p), cfg.optimizer)
        p = layout.unflatten(vec)
        fwd = forward_pass(spec, p, ds.x, n_subset)
        breakdown = obj.evaluate(spec, p, fwd, ds.y, sig_sq)
        mse = obj.train_mse(fwd.outputs, ds.raw_y, ds.standardization)
        return p, fwd, breakdown, mse, rep

    report = TrainReport(
        sigma_mse_sq=sigma_mse_sq,
        sigma_sq_init=sigma_sq,
        target_mse=target,
        sigma_decay=cfg.sigma_decay,
        loops=[],
    )
    _progress(cfg.verbose, stage="setup", n=n, n_subset=n_subset,
              sigma_mse_sq=sigma_mse_sq, sigma_sq=sigma_sq, target_mse=target)

    for loop in range(1, cfg.max_sigma_loops + 1):
        params, fwd, breakdown, mse, rep = run_loop(params, sigma_sq)
        report.loops.append(LoopRecord(loop, sigma_sq, breakdown, mse, rep))
        _progress(cfg.verbose, loop=loop, sigma_sq=sigma_sq,
                  running=breakdown.running, affine=breakdown.affine,
                  endpoint=breakdown.endpoint, total=breakdown.total,
                  train_mse=mse, iters=rep.iterations, status=rep.status)
        if mse < target:
            break
        if loop < cfg.max_sigma_loops:
            sigma_sq *= cfg.sigma_decay
            params = warm_start(params)

    params, fwd, breakdown, mse, rep = run_loop(params, sigma_sq)
    report.final = LoopRecord(len(report.loops) + 1, sigma_sq, breakdown, mse, rep)
    _progress(cfg.verbose, loop="final", sigma_sq=sigma_sq,
              running=breakdown.running, affine=breakdown.affine,
              endpoint=breakdown.endpoint, total=breakdown.total,
              train_mse=mse, iters=rep.iterations, status=rep.status)

    return TrainedModel(
        spec=spec,
        params=params,
        caches=fwd.caches,
        standardization=ds.standardization,
        sigma_sq=sigma_sq,
        n_subset=n_subset,
        anchor_indices=anchor_idx,
        report=report,
        rng_seed=cfg.rng_seed,
    )
