"""Matern radial kernel: scalar profile, spatial gradient, and Gram products.

The matrix-valued kernel used by the diffeomorphic modules is the scalar
profile times the identity, so it is never materialized: every operation
works with the scalar profile

    k(u) = (1 + u + 0.4 u^2 + u^3/15) exp(-u),      u = |y - x| / h.

The gradient helper returns the factor g(u) = k'(u)/u implemented directly
(not as a quotient) so it stays accurate near u = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass(frozen=True)
class KernelConfig:
    """Radial kernel width and state dimension for one diffeomorphic module.

    width is in the same units as the state coordinates.
    """

    width: float
    dim: int

    def __post_init__(self):
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValueError(f"kernel width must be finite and > 0, got {self.width}")
        if self.dim < 1:
            raise ValueError(f"kernel dim must be >= 1, got {self.dim}")


def profile(u):
    """Scalar profile k(u) evaluated elementwise on an array of u >= 0."""
    u = np.asarray(u, dtype=float)
    e = np.exp(-u)
    return (1.0 + u + 0.4 * u * u + u * u * u / 15.0) * e


def profile_with_grad_factor(u):
    """Return (k(u), g(u)) sharing one exp evaluation.

    g(u) = k'(u)/u = -(0.2 + 0.2 u + u^2/15) exp(-u); g is finite at u = 0,
    which makes nabla_x k = (x - y) g(u) / h^2 free of 0/0 at coincident
    points.
    """
    u = np.asarray(u, dtype=float)
    e = np.exp(-u)
    k = (1.0 + u + 0.4 * u * u + u * u * u / 15.0) * e
    g = -(0.2 + 0.2 * u + u * u / 15.0) * e
    return k, g


def matern_scalar(u: float) -> float:
    """Profile k(u) for a single nonnegative scalar argument.

    Strictly decreasing with k(0) = 1 and k(u) -> 0 as u -> infinity.
    """
    u = float(u)
    if not math.isfinite(u) or u < 0:
        raise ValueError(f"matern_scalar requires finite u >= 0, got {u}")
    return float(profile(u))


def _check_pair(cfg: KernelConfig, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (cfg.dim,) or y.shape != (cfg.dim,):
        raise ValueError(
            f"expected two vectors of length {cfg.dim}, got shapes {x.shape} and {y.shape}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("kernel arguments must be finite")
    return x, y


def kernel_eval(cfg: KernelConfig, x, y) -> float:
    """k(|y - x| / h): symmetric, translation invariant, equals 1 at x = y."""
    x, y = _check_pair(cfg, x, y)
    u = np.linalg.norm(y - x) / cfg.width
    return float(profile(u))


def kernel_grad1(cfg: KernelConfig, x, y) -> np.ndarray:
    """Gradient of kernel_eval with respect to its first argument x.

    Equals (x - y) g(u) / h^2 with u = |y - x|/h; exactly the zero vector
    at x = y.
    """
    x, y = _check_pair(cfg, x, y)
    diff = x - y
    u = np.linalg.norm(diff) / cfg.width
    _, g = profile_with_grad_factor(u)
    return diff * (g / (cfg.width * cfg.width))


def pairwise_u(cfg: KernelConfig, targets: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Scaled distance matrix u[i, j] = |targets[i] - anchors[j]| / h."""
    return cdist(targets, anchors) / cfg.width


def gram_apply(cfg: KernelConfig, targets, anchors, coeffs) -> np.ndarray:
    """Evaluate the kernel vector field at each target.

    out[k] = sum_l k(|anchors[l] - targets[k]| / h) * coeffs[l], with the
    reduction taken in ascending anchor order (row-wise dot products), so
    results are reproducible.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if anchors.shape[0] == 0:
        raise ValueError("gram_apply requires at least one anchor")
    if anchors.shape[0] != coeffs.shape[0]:
        raise ValueError(
            f"anchors/coeffs count mismatch: {anchors.shape[0]} vs {coeffs.shape[0]}"
        )
    d = cfg.dim
    if targets.shape[1] != d or anchors.shape[1] != d or coeffs.shape[1] != d:
        raise ValueError(f"all vectors must have dimension {d}")
    k = profile(pairwise_u(cfg, targets, anchors))
    return k @ coeffs
