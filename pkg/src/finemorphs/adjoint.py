"""Exact reverse-mode gradients of the discretized objective.

The backward pass is the discrete adjoint of the forward Euler scheme, not
a discretization of the continuous costate equations: gradients therefore
match finite differences of the objective to machine precision, and line
searches see a coherent function/gradient pair.

Sign convention: the carried states rho / eta / p are the costates (they
equal minus the objective sensitivity with respect to the forward states);
the assembled GradientBundle holds dG/dtheta directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flow import ForwardPassResult, transport
from .objective import trim
from .sequence import (
    AffineSpec,
    ModelParams,
    SequenceSpec,
    affine_cost_grads,
)
from .kernels import pairwise_u, profile_with_grad_factor, profile


@dataclass
class CostateBundle:
    """Backpropagation states of one backward sweep.

    boundary[j] is the costate at the input of module j (boundary[-1] is
    the endpoint costate at the chain output).  module_costates, filled
    only when requested, holds per diffeo module the full costate
    trajectory p with shape (steps + 1, N, dim), p[steps] being the
    costate at the module output.
    """

    boundary: list
    module_costates: list = field(default_factory=list)


@dataclass
class GradientBundle:
    """dG/dtheta for every trainable value, shape-matched to ModelParams."""

    d_controls: list
    d_affines: list  # (dM, db) per affine module

    def check_finite(self):
        for c in self.d_controls:
            if not np.isfinite(c).all():
                raise FloatingPointError("non-finite control gradient")
        for dm, db in self.d_affines:
            if not (np.isfinite(dm).all() and np.isfinite(db).all()):
                raise FloatingPointError("non-finite affine gradient")


def endpoint_costate(outputs: np.ndarray, targets: np.ndarray, sigma_sq: float, r: int) -> np.ndarray:
    """Costate at the chain output: (2/sigma^2) * pad_r(y - trimmed output).

    Zero for perfect predictions; the r padded coordinates are always zero.
    """
    if sigma_sq <= 0:
        raise ValueError(f"sigma^2 must be > 0, got {sigma_sq}")
    outputs = np.asarray(outputs, dtype=float)
    resid = np.asarray(targets, dtype=float) - trim(outputs, r)
    rho = np.zeros_like(outputs)
    rho[:, : outputs.shape[1] - r] = (2.0 / sigma_sq) * resid
    return rho


def _diffeo_backward(kernel, steps, controls, full_traj, p_end, keep_costates):
    """Sweep the costate through one diffeo module, accumulating dG/da.

    full_traj: (steps + 1, N, dim) states of all points (anchors first);
    p_end: costate at the module output for all N points.  Returns
    (p_start, d_controls, costate trajectory or None).
    """
    n_s = controls.shape[1]
    inv_t = 1.0 / steps
    h2 = kernel.width * kernel.width
    p = p_end
    d_controls = np.empty_like(controls)
    traj_p = None
    if keep_costates:
        traj_p = np.empty((steps + 1,) + p_end.shape)
        traj_p[steps] = p_end
    for i in range(steps - 1, -1, -1):
        z = full_traj[i]
        a = controls[i]
        u = pairwise_u(kernel, z, z[:n_s])          # (N, S)
        k, g = profile_with_grad_factor(u)
        g /= h2

        # dG/da at step i: the running cost contributes 2 K_SS a, the
        # dynamics contribute -K p through the step-(i+1) costate.
        d_controls[i] = inv_t * (2.0 * (k[:n_s] @ a) - k.T @ p)

        # Costate step.  Anchor rows combine the transport weight p_j.a_l,
        # the field sensitivity a_j.p_l over all points, and the running
        # cost term -2 a_j.a_l, elementwise before contracting against the
        # position differences; passenger rows carry only the transport
        # weight.
        w_transport = p @ a.T                        # (N, S): p_j . a_l
        w_anchor = a @ p.T                           # (S, N): a_j . p_l
        w_anchor[:, :n_s] += w_transport[:n_s] - 2.0 * (a @ a.T)
        gm_anchor = g.T * w_anchor                   # (S, N)
        inc = np.empty_like(p)
        inc[:n_s] = gm_anchor.sum(axis=1)[:, None] * z[:n_s] - gm_anchor @ z
        if n_s < p.shape[0]:
            gm_pass = g[n_s:] * w_transport[n_s:]    # (N - S, S)
            inc[n_s:] = gm_pass.sum(axis=1)[:, None] * z[n_s:] - gm_pass @ z[:n_s]
        p = p + inv_t * inc
        if keep_costates:
            traj_p[i] = p
    return p, d_controls, traj_p


def backward_pass(
    spec: SequenceSpec,
    params: ModelParams,
    forward: ForwardPassResult,
    targets: np.ndarray,
    sigma_sq: float,
    keep_costates: bool = False,
):
    """Reverse sweep over the whole chain.

    Returns (CostateBundle, GradientBundle).  Per-module costate
    trajectories are O(steps * N * dim) each and only retained when
    keep_costates is set; the boundary costates are always kept.
    """
    n_s = forward.n_subset
    rho = endpoint_costate(forward.outputs, targets, sigma_sq, spec.r)
    boundary = [rho]
    module_costates = []
    aff_grads = affine_cost_grads(spec, params)
    d_affines = [None] * len(params.affines)
    d_controls = [None] * len(params.controls)
    a_idx = len(params.affines)
    d_idx = len(params.controls)
    for j in range(len(spec.modules) - 1, -1, -1):
        mod = spec.modules[j]
        if isinstance(mod, AffineSpec):
            a_idx -= 1
            xi = forward.states[j]
            d_m = aff_grads[a_idx][0] - rho.T @ xi
            d_b = -rho.sum(axis=0)
            d_affines[a_idx] = (d_m, d_b)
            rho = rho @ params.affines[a_idx].M
        else:
            d_idx -= 1
            anchors_traj = forward.caches[d_idx]
            if n_s < rho.shape[0]:
                pass_traj = transport(
                    mod.kernel,
                    params.controls[d_idx],
                    anchors_traj,
                    forward.states[j][n_s:],
                    return_all=True,
                )
                full_traj = np.concatenate([anchors_traj, pass_traj], axis=1)
            else:
                full_traj = anchors_traj
            rho, d_c, traj_p = _diffeo_backward(
                mod.kernel, mod.steps, params.controls[d_idx], full_traj, rho, keep_costates
            )
            d_controls[d_idx] = d_c
            if keep_costates:
                module_costates.append(traj_p)
        boundary.append(rho)
    boundary.reverse()
    module_costates.reverse()
    grads = GradientBundle(d_controls=d_controls, d_affines=d_affines)
    grads.check_finite()
    return CostateBundle(boundary=boundary, module_costates=module_costates), grads


def full_gradient(
    spec: SequenceSpec,
    params: ModelParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    sigma_sq: float,
    n_subset: Optional[int] = None,
):
    """One forward + objective + backward, sharing the trajectory cache.

    Returns (ObjectiveBreakdown, GradientBundle).
    """
    from .flow import forward_pass
    from .objective import evaluate

    forward = forward_pass(spec, params, inputs, n_subset)
    breakdown = evaluate(spec, params, forward, targets, sigma_sq)
    _, grads = backward_pass(spec, params, forward, targets, sigma_sq)
    return breakdown, grads
