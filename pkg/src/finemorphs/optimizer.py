"""Limited-memory BFGS with a strong Wolfe line search.

The minimizer drives a callback f(x) -> (value, gradient) over a flat
parameter vector; ParamLayout maps ModelParams to and from that vector
with a layout that is stable for a fixed sequence spec.

Every accepted step satisfies both strong Wolfe conditions (sufficient
decrease with c1, curvature with c2); this is asserted at the accept site.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .sequence import AffineParams, AffineSpec, ModelParams, SequenceSpec


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 5000
    grad_tol: float = 1e-6
    obj_rel_tol: float = 1e-10
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_linesearch: int = 40

    def __post_init__(self):
        if not 0.0 < self.wolfe_c1 < self.wolfe_c2 < 1.0:
            raise ValueError(
                f"need 0 < c1 < c2 < 1, got c1={self.wolfe_c1}, c2={self.wolfe_c2}"
            )
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.grad_tol <= 0 or self.obj_rel_tol <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iters < 0 or self.max_linesearch < 1:
            raise ValueError("iteration limits out of range")


@dataclass
class MinimizeReport:
    status: str
    iterations: int
    n_evals: int
    fun: float
    grad_sup: float
    message: str = ""


class _LineSearchError(Exception):
    pass


def _cubic_step(a_lo, f_lo, df_lo, a_hi, f_hi, df_hi):
    """Minimizer of the Hermite cubic through two (alpha, f, f') samples."""
    d1 = df_lo + df_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    disc = d1 * d1 - df_lo * df_hi
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), a_hi - a_lo)
    denom = df_hi - df_lo + 2.0 * d2
    if denom == 0:
        return None
    return a_hi - (a_hi - a_lo) * (df_hi + d2 - d1) / denom


def _strong_wolfe(eval_phi, f0, df0, c1, c2, max_trials, alpha0=1.0):
    """Find alpha satisfying the strong Wolfe conditions.

    eval_phi(alpha) -> (f, df) along the current ray.  Returns
    (alpha, f, df, trials).  Raises _LineSearchError when the budget is
    exhausted.
    """
    if df0 >= 0:
        raise _LineSearchError("not a descent direction")
    trials = 0

    def accept(alpha, f_a, df_a):
        assert f_a <= f0 + c1 * alpha * df0, "sufficient decrease violated at accept"
        assert abs(df_a) <= c2 * abs(df0), "curvature condition violated at accept"
        return alpha, f_a, df_a, trials

    def zoom(a_lo, f_lo, df_lo, a_hi, f_hi, df_hi):
        nonlocal trials
        while trials < max_trials:
            width = a_hi - a_lo
            alpha = _cubic_step(a_lo, f_lo, df_lo, a_hi, f_hi, df_hi)
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            margin = 0.1 * abs(width)
            if alpha is None or not (lo + margin <= alpha <= hi - margin):
                alpha = 0.5 * (a_lo + a_hi)
            f_a, df_a = eval_phi(alpha)
            trials += 1
            if f_a > f0 + c1 * alpha * df0 or f_a >= f_lo:
                a_hi, f_hi, df_hi = alpha, f_a, df_a
            else:
                if abs(df_a) <= -c2 * df0:
                    return accept(alpha, f_a, df_a)
                if df_a * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, df_hi = a_lo, f_lo, df_lo
                a_lo, f_lo, df_lo = alpha, f_a, df_a
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        raise _LineSearchError("zoom exhausted the line search budget")

    a_prev, f_prev, df_prev = 0.0, f0, df0
    alpha = alpha0
    first = True
    while trials < max_trials:
        f_a, df_a = eval_phi(alpha)
        trials += 1
        if f_a > f0 + c1 * alpha * df0 or (not first and f_a >= f_prev):
            return zoom(a_prev, f_prev, df_prev, alpha, f_a, df_a)
        if abs(df_a) <= -c2 * df0:
            return accept(alpha, f_a, df_a)
        if df_a >= 0:
            return zoom(alpha, f_a, df_a, a_prev, f_prev, df_prev)
        a_prev, f_prev, df_prev = alpha, f_a, df_a
        alpha *= 2.0
        first = False
    raise _LineSearchError("bracketing exhausted the line search budget")


def minimize(
    f: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    x0: np.ndarray,
    cfg: OptimizerConfig = OptimizerConfig(),
    callback: Callable[[np.ndarray, float, np.ndarray], None] = None,
) -> Tuple[np.ndarray, float, MinimizeReport]:
    """Minimize f from x0; f returns (value, gradient) for a flat vector.

    Termination: gradient sup-norm below grad_tol, relative objective
    decrease below obj_rel_tol over one iteration, or max_iters.  A failed
    line search returns the best iterate with a warning status.  callback,
    when given, is invoked as callback(x, fx, g) at every accepted iterate.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not np.isfinite(x).all():
        raise ValueError("x0 must be finite")
    n_evals = 0

    def evaluate(xv):
        nonlocal n_evals
        val, grad = f(xv)
        n_evals += 1
        if not (np.isfinite(val) and np.isfinite(grad).all()):
            raise FloatingPointError("objective or gradient became non-finite")
        return float(val), np.asarray(grad, dtype=float)

    fx, g = evaluate(x)
    grad_sup = float(np.abs(g).max()) if g.size else 0.0
    if grad_sup < cfg.grad_tol:
        return x, fx, MinimizeReport("gradient_tolerance", 0, n_evals, fx, grad_sup)

    s_hist, y_hist, rho_hist = [], [], []
    status, message = "max_iterations", ""
    iters = 0
    while iters < cfg.max_iters:
        # Two-loop recursion for d = -H g.
        if s_hist:
            q = g.copy()
            alphas = []
            for s_i, y_i, rho_i in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
                a_i = rho_i * (s_i @ q)
                alphas.append(a_i)
                q -= a_i * y_i
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
            q *= gamma
            for (s_i, y_i, rho_i), a_i in zip(
                zip(s_hist, y_hist, rho_hist), reversed(alphas)
            ):
                b_i = rho_i * (y_i @ q)
                q += (a_i - b_i) * s_i
            d = -q
        else:
            # First iteration: steepest descent scaled to unit length so
            # the unit trial step cannot fling the flow states far out.
            d = -g / np.linalg.norm(g)

        df0 = float(d @ g)
        if df0 >= 0:
            s_hist, y_hist, rho_hist = [], [], []
            d = -g / np.linalg.norm(g)
            df0 = float(d @ g)

        last = {}

        def eval_phi(alpha):
            xa = x + alpha * d
            fa, ga = evaluate(xa)
            last[alpha] = (xa, ga)
            return fa, float(ga @ d)

        try:
            alpha, f_new, _ = _strong_wolfe(
                eval_phi, fx, df0, cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_linesearch
            )[:3]
        except _LineSearchError as exc:
            status, message = "line_search_failed", str(exc)
            break
        x_new, g_new = last[alpha]
        iters += 1

        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)

        decrease = fx - f_new
        denom = max(abs(fx), abs(f_new), 1.0)
        x, fx, g = x_new, f_new, g_new
        if callback is not None:
            callback(x, fx, g)
        grad_sup = float(np.abs(g).max())
        if grad_sup < cfg.grad_tol:
            status = "gradient_tolerance"
            break
        if decrease <= cfg.obj_rel_tol * denom:
            status = "objective_tolerance"
            break
    else:
        status = "max_iterations"

    return x, fx, MinimizeReport(status, iters, n_evals, fx, grad_sup, message)


class ParamLayout:
    """Stable mapping between ModelParams and one flat vector.

    Slot order follows the module chain: affine modules contribute M
    (row-major) then b, diffeo modules contribute their control array
    (step-major).  flatten/unflatten round-trip bit-exactly.
    """

    def __init__(self, spec: SequenceSpec, n_subset: int):
        self.spec = spec
        self.n_subset = int(n_subset)
        self._slots = []  # (kind, param_index, shape, offset)
        offset = 0
        a_idx = d_idx = 0
        for mod in spec.modules:
            if isinstance(mod, AffineSpec):
                shape = (mod.out_dim, mod.in_dim)
                self._slots.append(("M", a_idx, shape, offset))
                offset += shape[0] * shape[1]
                self._slots.append(("b", a_idx, (mod.out_dim,), offset))
                offset += mod.out_dim
                a_idx += 1
            else:
                shape = (mod.steps, self.n_subset, mod.dim)
                self._slots.append(("a", d_idx, shape, offset))
                offset += shape[0] * shape[1] * shape[2]
                d_idx += 1
        self.size = offset
        self.n_affines = a_idx
        self.n_diffeos = d_idx

    def _pieces(self, getter):
        vec = np.empty(self.size)
        for kind, idx, shape, offset in self._slots:
            block = getter(kind, idx)
            if block.shape != shape:
                raise ValueError(
                    f"slot {kind}[{idx}] has shape {block.shape}, layout expects {shape}"
                )
            n = block.size
            vec[offset : offset + n] = block.reshape(-1)
        return vec

    def flatten(self, params: ModelParams) -> np.ndarray:
        def getter(kind, idx):
            if kind == "M":
                return params.affines[idx].M
            if kind == "b":
                return params.affines[idx].b
            return params.controls[idx]

        return self._pieces(getter)

    def flatten_grads(self, grads) -> np.ndarray:
        def getter(kind, idx):
            if kind == "M":
                return grads.d_affines[idx][0]
            if kind == "b":
                return grads.d_affines[idx][1]
            return grads.d_controls[idx]

        return self._pieces(getter)

    def unflatten(self, vec: np.ndarray) -> ModelParams:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"flat vector has shape {vec.shape}, layout expects ({self.size},)")
        affines = [None] * self.n_affines
        controls = [None] * self.n_diffeos
        ms = {}
        bs = {}
        for kind, idx, shape, offset in self._slots:
            n = int(np.prod(shape))
            block = vec[offset : offset + n].reshape(shape).copy()
            if kind == "M":
                ms[idx] = block
            elif kind == "b":
                bs[idx] = block
            else:
                controls[idx] = block
        for idx in ms:
            affines[idx] = AffineParams(M=ms[idx], b=bs[idx])
        return ModelParams(affines=affines, controls=controls)
