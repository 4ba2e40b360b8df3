"""Training objective: deformation energy + affine cost + endpoint cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import ForwardPassResult
from .sequence import ModelParams, SequenceSpec, affine_cost


@dataclass(frozen=True)
class ObjectiveBreakdown:
    running: float
    affine: float
    endpoint: float

    @property
    def total(self) -> float:
        return self.running + self.affine + self.endpoint

    def __str__(self):
        return (
            f"running={self.running:.6g} affine={self.affine:.6g} "
            f"endpoint={self.endpoint:.6g} total={self.total:.6g}"
        )


def trim(outputs: np.ndarray, r: int) -> np.ndarray:
    """Drop the last r coordinates of the raw chain output."""
    return outputs[:, : outputs.shape[1] - r] if r > 0 else outputs


def endpoint_cost(outputs: np.ndarray, targets: np.ndarray, sigma_sq: float, r: int) -> float:
    """(1/sigma^2) sum_k |y_k - trimmed output_k|^2 over all N points."""
    if sigma_sq <= 0:
        raise ValueError(f"sigma^2 must be > 0, got {sigma_sq}")
    resid = np.asarray(targets, dtype=float) - trim(outputs, r)
    return float((resid * resid).sum()) / sigma_sq


def evaluate(
    spec: SequenceSpec,
    params: ModelParams,
    forward: ForwardPassResult,
    targets: np.ndarray,
    sigma_sq: float,
) -> ObjectiveBreakdown:
    """Assemble the objective from a completed forward pass.

    The deformation energy was accumulated during integration from the same
    Gram values that drove the Euler updates; only anchor pairs contribute
    to it, while the endpoint cost sums over all N points.
    """
    return ObjectiveBreakdown(
        running=float(sum(forward.running_costs)),
        affine=affine_cost(spec, params),
        endpoint=endpoint_cost(forward.outputs, targets, sigma_sq, spec.r),
    )


def train_mse(outputs: np.ndarray, raw_targets: np.ndarray, standardization) -> float:
    """Mean squared error in original response units.

    The standardized chain output is trimmed, mapped back through the
    response standardization, and compared against the raw responses; each
    point contributes its squared Euclidean error.
    """
    pred = trim(outputs, standardization.r) * standardization.sigma_y + standardization.mu_y
    resid = np.asarray(raw_targets, dtype=float) - pred
    return float((resid * resid).sum()) / resid.shape[0]
