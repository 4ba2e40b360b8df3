"""Data preparation: standardization, dummy dimensions, the endpoint-weight
estimate from local linear regression, anchor selection, and split
generation.

Standardization uses the population convention (divide by N); the active
convention is recorded on the dataset as std_ddof so downstream code and
tests never have to guess.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

STD_DDOF = 0  # population standard deviation


@dataclass(frozen=True)
class Standardization:
    """Train-set statistics needed to map data in and predictions out."""

    mu_x: np.ndarray
    sigma_x: np.ndarray
    mu_y: np.ndarray
    sigma_y: np.ndarray
    s: int
    r: int
    std_ddof: int = STD_DDOF


@dataclass
class StandardizedDataset:
    x: np.ndarray          # (N, d_X + s) standardized predictors + pad columns
    y: np.ndarray          # (N, d_Y) standardized responses
    raw_y: np.ndarray      # (N, d_Y) original responses, for MSE reporting
    standardization: Standardization

    @property
    def d_x(self) -> int:
        return self.standardization.mu_x.shape[0]

    @property
    def unpadded_x(self) -> np.ndarray:
        return self.x[:, : self.d_x]

    def reordered(self, perm: np.ndarray) -> "StandardizedDataset":
        return StandardizedDataset(
            x=self.x[perm], y=self.y[perm], raw_y=self.raw_y[perm],
            standardization=self.standardization,
        )


def _as_2d(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def standardize(
    train_x,
    train_y,
    test_x=None,
    s: int = 1,
    r: int = 0,
    rng_seed: int = 0,
) -> Tuple[StandardizedDataset, Optional[np.ndarray]]:
    """Standardize by train statistics and append s dummy dimensions.

    Train pad columns are i.i.d. N(0, 0.01^2) draws (seeded); test pads are
    exactly zero.  Constant predictor columns are mapped to zeros with
    their scale recorded as 1.  A constant response column aborts: the
    targets are degenerate.
    """
    x = _as_2d(train_x, "train_x")
    y = _as_2d(train_y, "train_y")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"x/y row mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 training rows to standardize")
    mu_x = x.mean(axis=0)
    sigma_x = x.std(axis=0, ddof=STD_DDOF)
    constant = sigma_x == 0.0
    sigma_x = np.where(constant, 1.0, sigma_x)
    mu_y = y.mean(axis=0)
    sigma_y = y.std(axis=0, ddof=STD_DDOF)
    if np.any(sigma_y == 0.0):
        raise ValueError("a response column has zero variance; targets are degenerate")

    xs = (x - mu_x) / sigma_x
    ys = (y - mu_y) / sigma_y
    if s > 0:
        rng = np.random.default_rng(rng_seed)
        pads = rng.normal(0.0, 0.01, size=(x.shape[0], s))
        xs = np.hstack([xs, pads])

    test_out = None
    if test_x is not None:
        xt = _as_2d(test_x, "test_x")
        if xt.shape[1] != x.shape[1]:
            raise ValueError(
                f"test predictors have {xt.shape[1]} columns, train has {x.shape[1]}"
            )
        xts = (xt - mu_x) / sigma_x
        if s > 0:
            xts = np.hstack([xts, np.zeros((xt.shape[0], s))])
        test_out = xts

    ds = StandardizedDataset(
        x=xs,
        y=ys,
        raw_y=y.copy(),
        standardization=Standardization(
            mu_x=mu_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y, s=s, r=r
        ),
    )
    return ds, test_out


def standardize_x(st: Standardization, x_raw) -> np.ndarray:
    """Map raw predictors into model space (standardize + zero pads)."""
    x = _as_2d(x_raw, "x")
    if x.shape[1] != st.mu_x.shape[0]:
        raise ValueError(
            f"predictors have {x.shape[1]} columns, model expects {st.mu_x.shape[0]}"
        )
    xs = (x - st.mu_x) / st.sigma_x
    if st.s > 0:
        xs = np.hstack([xs, np.zeros((x.shape[0], st.s))])
    return xs


def unstandardize_y(st: Standardization, y_std) -> np.ndarray:
    return np.asarray(y_std, dtype=float) * st.sigma_y + st.mu_y


def estimate_sigma(ds: StandardizedDataset) -> Tuple[float, float]:
    """Residual variance of local linear fits, and the initial sigma^2.

    For every point, the response differences to its k nearest neighbours
    (Euclidean distance on the unpadded standardized predictors, ties
    broken by ascending index, the point itself excluded) are regressed
    without intercept on the predictor differences; sigma^2_mse averages
    the squared residuals over N * k * d_Y.  The initial endpoint weight is
    sigma^2 = sqrt(N) * max(sqrt(sigma^2_mse) / 2, 0.01).
    """
    x = ds.unpadded_x
    y = ds.y
    n, d_x = x.shape
    d_y = y.shape[1]
    k = min(2 * d_x + 1, n // 5)
    if k < 1:
        raise ValueError(f"dataset too small for the local regressions (N={n})")
    dist = cdist(x, x)
    total = 0.0
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        neighbors = order[order != i][:k]
        dx = x[neighbors] - x[i]
        dy = y[neighbors] - y[i]
        g_t, *_ = np.linalg.lstsq(dx, dy, rcond=None)
        resid = dy - dx @ g_t
        total += float((resid * resid).sum())
    sigma_mse_sq = total / (n * k * d_y)
    sigma_sq_init = np.sqrt(n) * max(np.sqrt(sigma_mse_sq) / 2.0, 0.01)
    return sigma_mse_sq, float(sigma_sq_init)


def select_subset(x, n_subset: int, rng_seed: int = 0) -> np.ndarray:
    """Anchor indices by k-means++ seeding (no Lloyd iterations).

    The first index is uniform; each next index is drawn with probability
    proportional to the squared distance to the nearest already-chosen
    anchor.  Deterministic for a fixed seed; never repeats an index.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not 1 <= n_subset <= n:
        raise ValueError(f"n_subset must be in [1, {n}], got {n_subset}")
    rng = np.random.default_rng(rng_seed)
    chosen = np.empty(n_subset, dtype=int)
    chosen[0] = rng.integers(n)
    diff = x - x[chosen[0]]
    d2 = (diff * diff).sum(axis=1)
    for j in range(1, n_subset):
        mass = d2.sum()
        if mass > 0:
            idx = int(rng.choice(n, p=d2 / mass))
        else:
            # All remaining mass is on duplicates of chosen points; fall
            # back to a uniform draw over the not-yet-chosen indices.
            remaining = np.setdiff1d(np.arange(n), chosen[:j])
            idx = int(rng.choice(remaining))
        chosen[j] = idx
        diff = x - x[idx]
        d2 = np.minimum(d2, (diff * diff).sum(axis=1))
    return chosen


def anchors_first_permutation(anchor_indices: np.ndarray, n: int) -> np.ndarray:
    """Row permutation putting the anchors first (selection order), then
    the remaining rows in their original order."""
    anchor_indices = np.asarray(anchor_indices, dtype=int)
    mask = np.ones(n, dtype=bool)
    mask[anchor_indices] = False
    return np.concatenate([anchor_indices, np.nonzero(mask)[0]])


@dataclass(frozen=True)
class SplitSet:
    kind: str                      # "standard" or "gap"
    splits: tuple                  # of (train_indices, test_indices)
    seed: int


def make_splits(
    n: int,
    kind: str,
    count: Optional[int] = None,
    x=None,
    rng_seed: int = 0,
) -> SplitSet:
    """Generate train/test index partitions.

    standard: `count` independent uniform shuffles with |test| =
    round(N/10).  gap: one split per predictor dimension, sorting by that
    dimension and holding out the middle third (ranks [floor(N/3),
    floor(2N/3))).
    """
    if kind == "standard":
        if count is None:
            count = 20
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = np.random.default_rng(rng_seed)
        n_test = int(np.floor(n / 10.0 + 0.5))
        splits = []
        for _ in range(count):
            perm = rng.permutation(n)
            splits.append((np.sort(perm[n_test:]), np.sort(perm[:n_test])))
        return SplitSet(kind="standard", splits=tuple(splits), seed=rng_seed)
    if kind == "gap":
        if n < 3:
            raise ValueError("gap splits need at least 3 rows")
        if x is None:
            raise ValueError("gap splits need the predictor matrix for sorting")
        x = _as_2d(x, "x")
        if x.shape[0] != n:
            raise ValueError(f"x has {x.shape[0]} rows, expected {n}")
        d_x = x.shape[1]
        if count is not None and count != d_x:
            raise ValueError(
                f"gap splits are one per predictor dimension ({d_x}), got count={count}"
            )
        lo, hi = n // 3, (2 * n) // 3
        splits = []
        for j in range(d_x):
            order = np.argsort(x[:, j], kind="stable")
            test = np.sort(order[lo:hi])
            train = np.sort(np.concatenate([order[:lo], order[hi:]]))
            splits.append((train, test))
        return SplitSet(kind="gap", splits=tuple(splits), seed=rng_seed)
    raise ValueError(f"unknown split kind {kind!r}")
