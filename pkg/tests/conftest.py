"""Shared instance builders for the test suite.

Bounded LPs are built dual-first: c = s_pos + A @ y with s_pos > 0, which
guarantees a strictly feasible dual point, a bounded objective, and a
central path for every t. Centered states are built by choosing s to be
exactly -t * grad Phi(x) at the anchor point, which makes every block
centrality measure vanish and lets short-step invariants be tested
without running the homotopy.
"""

import numpy as np
import pytest

from ermipm import (
    BlockLayout,
    ErmInstance,
    IpmState,
    anchor_point,
    ball,
    barrier_eval,
    box,
    epigraph_square,
    gram,
    make_context,
    nonneg_orthant,
)


def barrier_grad(barriers, layout, x):
    g = np.empty(layout.n)
    for i, bar in enumerate(barriers):
        sl = layout.block_slice(i)
        g[sl] = barrier_eval(bar, x[sl])[1]
    return g


def block_family(kind, m, rng):
    if kind == "orthant":
        return tuple(nonneg_orthant(1) for _ in range(m))
    if kind == "mixed":
        out = []
        for i in range(m):
            r = i % 4
            if r == 0:
                out.append(nonneg_orthant(2))
            elif r == 1:
                out.append(box([-1.0, -0.5], [1.0, 2.0]))
            elif r == 2:
                out.append(ball(1.5, 2))
            else:
                out.append(epigraph_square(0.5))
        return tuple(out)
    raise ValueError(kind)


def instance_kappa(A):
    lam_min = float(np.linalg.eigvalsh(gram(A)).min())
    return max(1.0, float(np.abs(A).max()), 1.0 / lam_min) * (1.0 + 1e-9)


def make_bounded_lp(m=12, d=3, seed=0, *, kind="orthant", scale=0.6):
    """Instance with a strictly feasible dual point, hence a bounded LP."""
    rng = np.random.default_rng(seed)
    barriers = block_family(kind, m, rng)
    layout = BlockLayout(tuple(b.dim for b in barriers))
    n = layout.n
    A = rng.standard_normal((n, d)) * scale
    x_feas = np.concatenate([anchor_point(b) for b in barriers])
    x_feas = x_feas + rng.uniform(-0.05, 0.05, size=n) * (x_feas != 0)
    b = A.T @ x_feas
    y = rng.standard_normal(d) * 0.4
    s_pos = -barrier_grad(barriers, layout, x_feas)
    s_pos *= rng.uniform(0.5, 1.5, size=n)
    c = s_pos + A @ y
    inst = ErmInstance(A, b, c, layout, barriers, instance_kappa(A))
    inst.validate()
    return inst


def centered_setup(cfg, m=10, d=3, seed=0, *, t=8.0, kind="orthant", jitter=0.0):
    """Instance plus a state sitting exactly on the central path at t.

    jitter > 0 multiplies the slack by (1 + jitter * u) elementwise to get
    small nonzero centrality; callers must keep it inside the cfg budget.
    """
    rng = np.random.default_rng(seed)
    barriers = block_family(kind, m, rng)
    layout = BlockLayout(tuple(b.dim for b in barriers))
    n = layout.n
    A = rng.standard_normal((n, d)) * 0.5
    x = np.concatenate([anchor_point(b) for b in barriers])
    b = A.T @ x
    y = rng.standard_normal(d) * 0.3
    s = -t * barrier_grad(barriers, layout, x)
    if jitter:
        s = s * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=n))
    c = s + A @ y
    inst = ErmInstance(A, b, c, layout, barriers, instance_kappa(A))
    inst.validate()
    ctx = make_context(inst, cfg)
    state = IpmState(
        x=x.copy(),
        s=s.copy(),
        y=y.copy(),
        t=float(t),
        xbar=x.copy(),
        sbar=s.copy(),
        r=np.zeros(d),
        t0_main=float(t),
        tbar=np.full(layout.m, float(t)),
    )
    return inst, ctx, state


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)
