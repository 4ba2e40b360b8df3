"""Model sequence description and trainable parameter container.

A model is an ordered chain of affine modules (x -> Mx + b) and
diffeomorphic modules (time-1 kernel flows), written with a compact naming
grammar: ``A``, ``D``, repeat counts (``AD4A`` means A DDDD A), and grouped
pairs (``(AD)3A`` means ADADADA).  Identity modules are never stored.

Input padding (s dummy coordinates) and output trimming (r dropped
coordinates) wire the chain between the data dimensions: the first module
consumes d_X + s coordinates and the last produces d_Y + r.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .kernels import KernelConfig

RIDGE = "ridge"
RIDGE_TO_IDENTITY = "ridge_to_identity"

_TOKEN = re.compile(r"\(AD\)(\d+)|([AD])(\d*)")


@dataclass(frozen=True)
class AffineSpec:
    in_dim: int
    out_dim: int
    cost_kind: str = RIDGE

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"affine module dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.cost_kind not in (RIDGE, RIDGE_TO_IDENTITY):
            raise ValueError(f"unknown affine cost kind {self.cost_kind!r}")
        if self.cost_kind == RIDGE_TO_IDENTITY and self.in_dim != self.out_dim:
            raise ValueError("ridge_to_identity cost requires a square affine module")


@dataclass(frozen=True)
class DiffeoSpec:
    dim: int
    kernel: KernelConfig
    steps: int = 10

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"diffeomorphic module needs steps >= 1, got {self.steps}")
        if self.kernel.dim != self.dim:
            raise ValueError(
                f"kernel dim {self.kernel.dim} does not match module dim {self.dim}"
            )


ModuleSpec = Union[AffineSpec, DiffeoSpec]


@dataclass(frozen=True)
class SequenceSpec:
    """Declarative model description: module chain, dims, costs, kernels."""

    modules: tuple
    s: int
    r: int
    lam: float
    d_x: int
    d_y: int
    n_subset: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        if len(self.modules) == 0:
            raise ValueError("sequence must contain at least one module")
        if self.s < 0 or self.r < 0:
            raise ValueError("pad count s and drop count r must be >= 0")
        if self.lam < 0:
            raise ValueError("affine cost weight lambda must be >= 0")
        dims = self.boundary_dims()
        if dims[0] != self.d_x + self.s:
            raise ValueError(
                f"first module consumes {dims[0]} dims but d_X + s = {self.d_x + self.s}"
            )
        if dims[-1] != self.d_y + self.r:
            raise ValueError(
                f"last module produces {dims[-1]} dims but d_Y + r = {self.d_y + self.r}"
            )

    def boundary_dims(self) -> list:
        """Dims at every boundary (length n_modules + 1); raises on mismatch."""
        dims = [_in_dim(self.modules[0])]
        for j, mod in enumerate(self.modules):
            if _in_dim(mod) != dims[-1]:
                raise ValueError(
                    f"module {j} expects input dim {_in_dim(mod)} but receives {dims[-1]}"
                )
            dims.append(_out_dim(mod))
        return dims

    @property
    def affine_specs(self) -> list:
        return [m for m in self.modules if isinstance(m, AffineSpec)]

    @property
    def diffeo_specs(self) -> list:
        return [m for m in self.modules if isinstance(m, DiffeoSpec)]


def _in_dim(mod: ModuleSpec) -> int:
    return mod.in_dim if isinstance(mod, AffineSpec) else mod.dim


def _out_dim(mod: ModuleSpec) -> int:
    return mod.out_dim if isinstance(mod, AffineSpec) else mod.dim


@dataclass
class AffineParams:
    M: np.ndarray
    b: np.ndarray


@dataclass
class ModelParams:
    """One (M, b) per affine module and one control array per diffeo module.

    Controls are indexed [step][anchor][coordinate] with shape
    (steps, n_subset, dim).
    """

    affines: list
    controls: list

    def copy(self) -> "ModelParams":
        return ModelParams(
            affines=[AffineParams(a.M.copy(), a.b.copy()) for a in self.affines],
            controls=[c.copy() for c in self.controls],
        )


def _expand_name(name: str) -> list:
    """Expand a sequence name into a list of 'A'/'D' letters."""
    letters = []
    pos = 0
    while pos < len(name):
        m = _TOKEN.match(name, pos)
        if m is None:
            raise ValueError(f"malformed sequence name {name!r} at position {pos}")
        if m.group(1) is not None:
            letters.extend(["A", "D"] * int(m.group(1)))
        else:
            count = int(m.group(3)) if m.group(3) else 1
            if count < 1:
                raise ValueError(f"zero repeat count in sequence name {name!r}")
            letters.extend([m.group(2)] * count)
        pos = m.end()
    if not letters:
        raise ValueError("empty sequence name")
    return letters


def _grouped_pair_form(name: str) -> bool:
    m = re.fullmatch(r"\(AD\)(\d+)A", name)
    return m is not None and int(m.group(1)) >= 1


def parse_sequence(
    name: str,
    d_x: int,
    d_y: int,
    *,
    s: int = 1,
    r: int = 0,
    lam: float = 1.0,
    steps: Union[int, Sequence[int]] = 10,
    widths: Union[float, Sequence[float], None] = None,
    schedule: Optional[str] = None,
    inner_dims: Union[int, Sequence[int], None] = None,
    inner_affine_cost: Optional[str] = None,
    n_subset: Optional[int] = None,
) -> SequenceSpec:
    """Build a SequenceSpec from a sequence name plus overrides.

    Defaults: every inner boundary has dim d_X + s, every D module runs
    steps=10 Euler steps with width 0.5.  ``schedule`` ("up"/"down") assigns
    the width ladder q/(m+1) or (m+1-q)/(m+1) across the m D modules and
    cannot be combined with explicit ``widths``.  Names written in the
    grouped form ``(AD)xA`` give the inner (square) affine modules the
    identity-anchored cost; ``inner_affine_cost`` overrides that choice.

    AD and DA parse fine but are flagged with a warning: AD offers no
    trailing affine read-out and DA requires hand-tuning the kernel width
    to the raw input scale.
    """
    letters = _expand_name(name)
    if letters in (["A", "D"], ["D", "A"]):
        warnings.warn(
            f"sequence {name!r} is accepted but rarely practical; consider ADA",
            stacklevel=2,
        )

    n_mod = len(letters)
    m_diff = sum(1 for c in letters if c == "D")

    # Boundary dims: index 0 is the model input, index n_mod the output.
    dims = [d_x + s] + [d_x + s] * (n_mod - 1) + [d_y + r]
    if inner_dims is not None:
        if isinstance(inner_dims, int):
            inner = [inner_dims] * (n_mod - 1)
        else:
            inner = list(inner_dims)
            if len(inner) != n_mod - 1:
                raise ValueError(
                    f"inner_dims must list {n_mod - 1} boundary dims, got {len(inner)}"
                )
        dims[1:n_mod] = inner

    # Per-D-module steps and widths.
    if isinstance(steps, int):
        steps_list = [steps] * m_diff
    else:
        steps_list = list(steps)
        if len(steps_list) != m_diff:
            raise ValueError(f"steps must list {m_diff} values, got {len(steps_list)}")
    if schedule is not None and schedule not in ("none", "up", "down"):
        raise ValueError(f"schedule must be 'none', 'up' or 'down', got {schedule!r}")
    if schedule in ("up", "down") and widths is not None:
        raise ValueError("give either an explicit width override or a schedule, not both")
    if schedule == "up":
        widths_list = [q / (m_diff + 1) for q in range(1, m_diff + 1)]
    elif schedule == "down":
        widths_list = [(m_diff + 1 - q) / (m_diff + 1) for q in range(1, m_diff + 1)]
    elif widths is None:
        widths_list = [0.5] * m_diff
    elif isinstance(widths, (int, float)):
        widths_list = [float(widths)] * m_diff
    else:
        widths_list = [float(w) for w in widths]
        if len(widths_list) != m_diff:
            raise ValueError(f"widths must list {m_diff} values, got {len(widths_list)}")

    identity_anchored = _grouped_pair_form(name)
    if inner_affine_cost is not None:
        if inner_affine_cost not in (RIDGE, RIDGE_TO_IDENTITY):
            raise ValueError(f"unknown inner affine cost {inner_affine_cost!r}")
        identity_anchored = inner_affine_cost == RIDGE_TO_IDENTITY

    affine_positions = [j for j, c in enumerate(letters) if c == "A"]
    modules = []
    d_idx = 0
    for j, c in enumerate(letters):
        if c == "A":
            inner_a = affine_positions[0] != j and affine_positions[-1] != j
            cost = RIDGE_TO_IDENTITY if (identity_anchored and inner_a) else RIDGE
            modules.append(AffineSpec(dims[j], dims[j + 1], cost))
        else:
            if dims[j] != dims[j + 1]:
                raise ValueError(
                    f"diffeomorphic module {j} requires equal boundary dims, "
                    f"got {dims[j]} and {dims[j + 1]}"
                )
            modules.append(
                DiffeoSpec(
                    dim=dims[j],
                    kernel=KernelConfig(width=widths_list[d_idx], dim=dims[j]),
                    steps=steps_list[d_idx],
                )
            )
            d_idx += 1
    return SequenceSpec(
        modules=tuple(modules),
        s=s,
        r=r,
        lam=lam,
        d_x=d_x,
        d_y=d_y,
        n_subset=n_subset,
        name=name,
    )


def init_params(spec: SequenceSpec, n_subset: int, rng_seed: int = 0) -> ModelParams:
    """Initial parameters: zero controls, small random affine weights.

    Ridge affines draw every entry of M from N(0, 0.01^2) with b = 0;
    identity-anchored affines start at M = I + diag(w), w ~ N(0, 0.01^2).
    Deterministic for a fixed (spec, n_subset, rng_seed).
    """
    if n_subset < 1:
        raise ValueError(f"n_subset must be >= 1, got {n_subset}")
    rng = np.random.default_rng(rng_seed)
    affines = []
    controls = []
    for mod in spec.modules:
        if isinstance(mod, AffineSpec):
            if mod.cost_kind == RIDGE_TO_IDENTITY:
                w = rng.normal(0.0, 0.01, size=mod.in_dim)
                M = np.eye(mod.in_dim) + np.diag(w)
            else:
                M = rng.normal(0.0, 0.01, size=(mod.out_dim, mod.in_dim))
            affines.append(AffineParams(M=M, b=np.zeros(mod.out_dim)))
        else:
            controls.append(np.zeros((mod.steps, n_subset, mod.dim)))
    return ModelParams(affines=affines, controls=controls)


def affine_cost(spec: SequenceSpec, params: ModelParams) -> float:
    """lambda-weighted sum of the affine regularizers over all A modules."""
    total = 0.0
    for mod, p in zip(spec.affine_specs, params.affines):
        if mod.cost_kind == RIDGE_TO_IDENTITY:
            delta = p.M - np.eye(mod.in_dim)
        else:
            delta = p.M
        total += float((delta * delta).sum())
    return spec.lam * total


def affine_cost_grads(spec: SequenceSpec, params: ModelParams) -> list:
    """Per-affine (dM, db) of the weighted cost; db is always zero."""
    grads = []
    for mod, p in zip(spec.affine_specs, params.affines):
        if mod.cost_kind == RIDGE_TO_IDENTITY:
            dM = 2.0 * spec.lam * (p.M - np.eye(mod.in_dim))
        else:
            dM = 2.0 * spec.lam * p.M
        grads.append((dM, np.zeros_like(p.b)))
    return grads
