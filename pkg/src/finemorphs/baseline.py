"""Closed-form ridge regression baseline.

Fit on standardized data with an unpenalized intercept (the weight penalty
matches the sequence model's affine cost, which ignores b); predictions
are mapped back to original units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preprocess import Standardization, standardize


@dataclass
class RidgeModel:
    M: np.ndarray                  # (d_Y, d_X), standardized space
    b: np.ndarray                  # (d_Y,)
    lam: float
    standardization: Standardization


def fit_ridge(train_x, train_y, lam: float = 1.0) -> RidgeModel:
    """Solve min |Y - X M^T - 1 b^T|^2 + lam |M|^2 on standardized data."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    ds, _ = standardize(train_x, train_y, None, s=0, rng_seed=0)
    x, y = ds.x, ds.y
    xm = x.mean(axis=0)
    ym = y.mean(axis=0)
    xc = x - xm
    yc = y - ym
    gram = xc.T @ xc + lam * np.eye(x.shape[1])
    rhs = xc.T @ yc
    if lam > 0:
        m_t = np.linalg.solve(gram, rhs)
    else:
        m_t, *_ = np.linalg.lstsq(xc, yc, rcond=None)
    M = m_t.T
    b = ym - M @ xm
    return RidgeModel(M=M, b=b, lam=lam, standardization=ds.standardization)


def predict_ridge(model: RidgeModel, test_x) -> np.ndarray:
    """Standardize, apply the linear map, and undo the standardization."""
    st = model.standardization
    x = np.asarray(test_x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] != st.mu_x.shape[0]:
        raise ValueError(
            f"predictors have {x.shape[1]} columns, model expects {st.mu_x.shape[0]}"
        )
    xs = (x - st.mu_x) / st.sigma_x
    ys = xs @ model.M.T + model.b
    return ys * st.sigma_y + st.mu_y
