"""Applying a trained model to new predictors, plus trajectory exports."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .flow import transport
from .preprocess import standardize_x, unstandardize_y
from .objective import trim
from .sequence import AffineSpec, DiffeoSpec


@dataclass
class PredictionResult:
    predictions: np.ndarray             # (N_test, d_Y) in original units
    rmse: Optional[float]
    squared_errors: Optional[np.ndarray]


def _check_caches(model):
    d_specs = model.spec.diffeo_specs
    if len(model.caches) != len(d_specs):
        raise ValueError("trajectory cache is corrupted: wrong module count")
    for mod, cache in zip(d_specs, model.caches):
        expected = (mod.steps + 1, model.n_subset, mod.dim)
        if cache.shape != expected:
            raise ValueError(
                f"trajectory cache is corrupted: shape {cache.shape}, expected {expected}"
            )
        if not np.isfinite(cache).all():
            raise ValueError("trajectory cache is corrupted: non-finite states")


def propagate(model, x_std: np.ndarray, capture_module: Optional[int] = None):
    """Push standardized padded points through the chain as passengers.

    Anchors are never re-evolved: each diffeo module replays its cached
    anchor trajectory.  With capture_module = q (1-based index among the D
    modules) the full passenger trajectory through that module is returned
    instead of the chain output.
    """
    _check_caches(model)
    z = np.asarray(x_std, dtype=float)
    a_idx = d_idx = 0
    for mod in model.spec.modules:
        if isinstance(mod, AffineSpec):
            p = model.params.affines[a_idx]
            z = z @ p.M.T + p.b
            a_idx += 1
        else:
            capture = capture_module is not None and d_idx + 1 == capture_module
            out = transport(
                mod.kernel,
                model.params.controls[d_idx],
                model.caches[d_idx],
                z,
                return_all=capture,
                label=f"D{d_idx + 1}",
            )
            if capture:
                return out
            z = out
            d_idx += 1
    if capture_module is not None:
        raise ValueError(
            f"capture_module={capture_module} does not name a diffeo module "
            f"(model has {d_idx})"
        )
    return z


def predict(model, test_x_raw, targets=None) -> PredictionResult:
    """Standardize, pad with zeros, transport through the model, and map
    the trimmed output back to original response units."""
    xs = standardize_x(model.standardization, test_x_raw)
    out = propagate(model, xs)
    pred = unstandardize_y(model.standardization, trim(out, model.spec.r))
    r, se = None, None
    if targets is not None:
        t = np.asarray(targets, dtype=float)
        if t.ndim == 1:
            t = t[:, None]
        se = ((t - pred) ** 2).sum(axis=1)
        r = rmse(pred, t)
    return PredictionResult(predictions=pred, rmse=r, squared_errors=se)


def rmse(predictions, targets) -> float:
    """Root of the mean (over points) squared Euclidean error."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: predictions {p.shape}, targets {t.shape}")
    if p.shape[0] == 0:
        raise ValueError("empty test set")
    return float(np.sqrt(((t - p) ** 2).sum(axis=1).mean()))


def pca_snapshot(states: np.ndarray, n_components: int = 3):
    """Center the states and project on the top principal components.

    The sign of each component is fixed by making its largest-magnitude
    loading positive, so exports are reproducible.  Returns (scores,
    components).
    """
    z = np.asarray(states, dtype=float)
    k = min(n_components, z.shape[1])
    centered = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:k]
    for i in range(k):
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T, comps


def export_pca_snapshots(model, x_raw, y_raw, module: int, times, out_path=None):
    """Tabulate top-3 principal components of the module states over time.

    For each requested time (snapped to the nearest discrete step of the
    named D module) the provided points are transported to that time, a
    fresh PCA is fitted on the centered states, and one row per point is
    emitted: t, index, pc1..pck, response columns.  Returns (header, rows);
    when out_path is given the table is also written as CSV.
    """
    xs = standardize_x(model.standardization, x_raw)
    traj = propagate(model, xs, capture_module=module)
    steps = traj.shape[0] - 1
    d = traj.shape[2]
    k = min(3, d)
    if k < 3:
        warnings.warn(
            f"module states are {d}-dimensional; emitting {k} principal components",
            stacklevel=2,
        )
    y = np.asarray(y_raw, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    header = ["t", "index"] + [f"pc{i + 1}" for i in range(k)]
    header += ["y"] if y.shape[1] == 1 else [f"y{j}" for j in range(y.shape[1])]
    rows = []
    for t in times:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"snapshot time {t} outside [0, 1]")
        i = int(round(t * steps))
        scores, _ = pca_snapshot(traj[i], 3)
        for idx in range(scores.shape[0]):
            rows.append([i / steps, idx] + list(scores[idx]) + list(y[idx]))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    return header, rows
