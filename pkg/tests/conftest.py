import numpy as np
import pytest

from finemorphs import AffineSpec, DiffeoSpec, KernelConfig, SequenceSpec, init_params
from finemorphs.optimizer import ParamLayout


def central_difference(f, x, eps=1e-5):
    """Dense central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        g[i] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum.reduce([np.abs(a), np.abs(b), np.full_like(a, floor)])
    return np.abs(a - b) / denom


def chain_spec(d, m, steps, width=0.7, lam=1.0, d_y=None, cost="ridge"):
    """A(d->d) [D A]*m chain used by the small random instances."""
    d_y = d if d_y is None else d_y
    mods = []
    for q in range(m):
        mods.append(AffineSpec(d, d, cost))
        mods.append(DiffeoSpec(d, KernelConfig(width, d), steps))
    mods.append(AffineSpec(d, d_y))
    return SequenceSpec(tuple(mods), s=0, r=0, lam=lam, d_x=d, d_y=d_y)


def random_instance(rng, n, n_subset, d, m, steps, scale=0.4):
    """Random spec/params/data tuple with non-trivial controls."""
    spec = chain_spec(d, m, steps)
    layout = ParamLayout(spec, n_subset)
    params = layout.unflatten(
        layout.flatten(init_params(spec, n_subset, 0)) + rng.normal(0, scale, layout.size)
    )
    x = rng.normal(size=(n, d))
    y = rng.normal(size=(n, d))
    return spec, layout, params, x, y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
