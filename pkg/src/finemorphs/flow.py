"""Forward Euler flows through the module chain.

Each diffeomorphic module integrates T uniform Euler steps of the kernel
vector field spanned by the anchor points (the first n_subset rows of the
training data).  Anchors drive the field and their full trajectory is
cached; passengers (remaining training rows and any test points) are
transported by the same field without contributing to it, so they are
re-playable from the cached anchor states alone and are not cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import KernelConfig, pairwise_u, profile
from .sequence import AffineSpec, ModelParams, SequenceSpec


class FlowDivergenceError(RuntimeError):
    """A state became non-finite during integration."""


def _check_finite(z: np.ndarray, where: str):
    if not np.isfinite(z).all():
        raise FlowDivergenceError(f"non-finite state encountered at {where}")


@dataclass
class FlowResult:
    """Output of one diffeomorphic module pass.

    trajectory has shape (steps + 1, n_anchors, dim): the cached anchor
    states at every discrete time.  running_cost is the module's
    deformation energy (1/T) sum_i sum_{k,l} K_kl a_k.a_l, accumulated from
    the same Gram values that drive the Euler updates.
    """

    trajectory: np.ndarray
    anchors_out: np.ndarray
    passengers_out: Optional[np.ndarray]
    running_cost: float


def flow_module(
    kernel: KernelConfig,
    steps: int,
    controls: np.ndarray,
    anchors_in: np.ndarray,
    passengers_in: Optional[np.ndarray] = None,
    label: str = "D",
) -> FlowResult:
    """Integrate anchors (and optionally passengers) through one module.

    controls has shape (steps, n_anchors, dim).  With all controls zero
    every point is returned unchanged.
    """
    anchors = np.asarray(anchors_in, dtype=float)
    n_s = anchors.shape[0]
    if controls.shape != (steps, n_s, kernel.dim):
        raise ValueError(
            f"controls shape {controls.shape} does not match "
            f"(steps={steps}, anchors={n_s}, dim={kernel.dim})"
        )
    traj = np.empty((steps + 1, n_s, kernel.dim))
    traj[0] = anchors
    z = anchors
    running = 0.0
    inv_t = 1.0 / steps
    for i in range(steps):
        a = controls[i]
        k = profile(pairwise_u(kernel, z, z))
        f = k @ a
        running += inv_t * float((a * f).sum())
        z = z + inv_t * f
        _check_finite(z, f"module {label}, step {i + 1}/{steps}")
        traj[i + 1] = z

    passengers_out = None
    if passengers_in is not None and len(passengers_in) > 0:
        passengers_out = transport(kernel, controls, traj, passengers_in, label=label)
    return FlowResult(
        trajectory=traj, anchors_out=z, passengers_out=passengers_out, running_cost=running
    )


def transport(
    kernel: KernelConfig,
    controls: np.ndarray,
    trajectory: np.ndarray,
    points: np.ndarray,
    return_all: bool = False,
    label: str = "D",
) -> np.ndarray:
    """Carry passenger points through a module using cached anchor states.

    The field at step i is evaluated at the passengers' own positions using
    only the anchors, so a passenger sitting exactly on an anchor follows
    that anchor's trajectory.  With return_all the whole passenger
    trajectory (steps + 1, n_points, dim) is returned instead of the
    endpoint.
    """
    steps = controls.shape[0]
    if trajectory.shape[0] != steps + 1:
        raise ValueError(
            f"trajectory has {trajectory.shape[0]} time slices, expected {steps + 1}"
        )
    p = np.asarray(points, dtype=float)
    inv_t = 1.0 / steps
    if return_all:
        out = np.empty((steps + 1,) + p.shape)
        out[0] = p
    for i in range(steps):
        k = profile(pairwise_u(kernel, p, trajectory[i]))
        p = p + inv_t * (k @ controls[i])
        _check_finite(p, f"module {label}, passenger step {i + 1}/{steps}")
        if return_all:
            out[i + 1] = p
    return out if return_all else p


@dataclass
class ForwardPassResult:
    """All forward states of one pass through the chain.

    states[j] holds the N points entering module j (states[0] is the padded
    model input); states[-1] is the model output before coordinate
    trimming.  caches and running_costs are per diffeomorphic module, in
    chain order.
    """

    states: list
    caches: list
    running_costs: list
    outputs: np.ndarray
    n_subset: int


def forward_pass(
    spec: SequenceSpec,
    params: ModelParams,
    inputs: np.ndarray,
    n_subset: Optional[int] = None,
) -> ForwardPassResult:
    """Run all N inputs through the chain, caching anchor trajectories.

    inputs must already be standardized and padded to d_X + s columns, with
    the anchors occupying the first n_subset rows.
    """
    x = np.asarray(inputs, dtype=float)
    n = x.shape[0]
    n_s = n if n_subset is None else int(n_subset)
    if not 1 <= n_s <= n:
        raise ValueError(f"n_subset must be in [1, {n}], got {n_s}")
    if x.shape[1] != spec.d_x + spec.s:
        raise ValueError(
            f"inputs have {x.shape[1]} columns, expected d_X + s = {spec.d_x + spec.s}"
        )
    states = [x]
    caches = []
    running_costs = []
    a_idx = 0
    d_idx = 0
    z = x
    for mod in spec.modules:
        if isinstance(mod, AffineSpec):
            p = params.affines[a_idx]
            z = z @ p.M.T + p.b
            a_idx += 1
        else:
            res = flow_module(
                mod.kernel,
                mod.steps,
                params.controls[d_idx],
                z[:n_s],
                z[n_s:],
                label=f"D{d_idx + 1}",
            )
            caches.append(res.trajectory)
            running_costs.append(res.running_cost)
            if res.passengers_out is None:
                z = res.anchors_out
            else:
                z = np.vstack([res.anchors_out, res.passengers_out])
            d_idx += 1
        states.append(z)
    return ForwardPassResult(
        states=states,
        caches=caches,
        running_costs=running_costs,
        outputs=z,
        n_subset=n_s,
    )
