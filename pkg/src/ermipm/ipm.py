"""Robust short-step interior point solver over block-separable domains.

The problem is min c.T x over x in K_1 x ... x K_m subject to A.T x = b,
with each K_i carrying a self-concordant barrier phi_i. The solver follows
the central path t -> 0 with a potential-guided step: per-block centrality
errors mu_i = s_i / t + grad phi_i(x_i) are aggregated through soft-max
weights exp(lam * gamma_i), and one step moves the primal against that
gradient while projecting out the equality-constraint residual through the
scaled Gram matrix A.T hess(Phi)^{-1} A.

Two execution modes share the loop. "exact-oracle" recomputes everything
from the exact iterate: it is the semantic reference. "sketched" runs the
maintained pipeline: lagged copies xbar/sbar refreshed per block when
accumulated drift crosses thresholds, a subsampled Gram matrix built from
leverage overestimates, and a random block-diagonal reweighting R applied
to the correction term so that only expected work scales with the step.
Every randomized ingredient keeps the relevant quantity inside explicit
bands, and those bands are asserted at runtime rather than trusted.

The cost homotopy used for initialization anneals an out-of-range(A) offset
on the cost vector to zero while centering; the main phase then decays t
geometrically until n * t clears the target gap, and a final least-squares
rounding lands the iterate on the equality subspace exactly.

Parameter profiles: "faithful" keeps the step size alpha coupled to the
potential sharpness lam (tiny steps; used to exercise invariants), while
"aggressive" decouples alpha = eps / c_k so full solves finish in tens of
thousands of iterations. Both satisfy beta = 10 alpha and the eta relation,
and both run under the same runtime assertions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import BarrierDescriptor, BlockLayout, NotInteriorError, barrier_eval
from .config import ln, rng_stream
from .levscore import sample_gram
from .linalg import NotPositiveDefiniteError, SpdFactorization, gram, spd_factor
from .maintenance import PrimalTracker, SampleMatrix, SlackMaintainer, build_valid_R

__all__ = [
    "IpmError",
    "CentralityError",
    "StepRejectedError",
    "InitializationError",
    "IpmConfig",
    "Schedule",
    "IpmState",
    "SolveContext",
    "SolveReport",
    "mu_block",
    "gamma_block",
    "psi",
    "gradient_dir",
    "make_context",
    "initialize",
    "short_step",
    "finalize",
    "solve",
]

DIAG_FIELDS = ("iter", "t", "gamma_max", "psi", "feas_norm", "g_norm", "h_mode", "r_support")


class IpmError(RuntimeError):
    """Solver-level failure."""


class CentralityError(IpmError):
    """A runtime centrality/feasibility invariant failed."""


class StepRejectedError(IpmError):
    """A step left the domain interior and was rejected."""


class InitializationError(IpmError):
    """No interior feasible start could be constructed."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Schedule:
    """Derived step quantities for one (n, nu) instance size."""

    lam: float
    alpha: float
    beta: float
    eta: float


@dataclass(frozen=True)
class IpmConfig:
    """Solver parameters.

    eps is the centrality radius (per-block gamma_i <= eps^2 is enforced).
    The faithful profile requires eps < 1/80 and couples the step size to
    the potential sharpness (alpha = eps / (c_k * lam)); the aggressive
    profile uses alpha = eps / c_k, which is what makes full solves
    affordable, and accordingly allows the larger default eps.
    """

    eps: float = 0.01
    c_center: float = 2.0
    c_var: float = 4.0
    c_k: float = 4.0
    mode: str = "exact-oracle"
    profile: str = "faithful"
    seed: int = 0
    r_gamma: float | None = None  # second factor in the R sample size; eps when None
    sparsifier_eps: float | None = None  # subsampled-Gram accuracy; derived when None
    sparsifier_const: float = 1.0
    c_gap: float | None = None  # stopping constant; 8 * nu when None
    max_iters: int | None = None
    psi_ceiling: float | None = None
    instrument: bool = True
    resync_every: int = 4096
    tbar_drift: float | None = None  # forced scaling-refresh ratio; e^{beta/4} when None

    def __post_init__(self):
        if self.mode not in ("exact-oracle", "sketched"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.profile not in ("faithful", "aggressive"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if not (0.0 < self.eps < 0.5):
            raise ValueError("eps must lie in (0, 0.5)")
        if self.profile == "faithful" and not (self.eps < 1.0 / 80.0):
            raise ValueError("faithful profile requires eps < 1/80")
        if min(self.c_center, self.c_var, self.c_k) <= 0:
            raise ValueError("constants must be positive")

    @classmethod
    def faithful(cls, **kw) -> "IpmConfig":
        kw.setdefault("profile", "faithful")
        return cls(**kw)

    @classmethod
    def aggressive(cls, **kw) -> "IpmConfig":
        kw.setdefault("profile", "aggressive")
        kw.setdefault("eps", 0.25)
        kw.setdefault("c_k", 10.0)
        return cls(**kw)

    def schedule(self, n: int, nu: float) -> Schedule:
        lam = self.c_center * ln(max(n, 2)) / self.eps**2
        if self.profile == "faithful":
            alpha = self.eps / (self.c_k * lam)
        else:
            alpha = self.eps / self.c_k
        beta = 10.0 * alpha
        eta = self.eps * alpha / (self.c_center * math.sqrt(max(nu, 1.0)))
        return Schedule(lam, alpha, beta, eta)


# ---------------------------------------------------------------------------
# block kernels: grads, Hessians, local-metric products

_SEPARABLE_KINDS = ("nonneg-orthant", "box")


class _Blocks:
    """Vectorized barrier evaluations over the whole layout.

    Coordinates belonging to orthant/box blocks (diagonal Hessians in
    closed form) are handled by array expressions; other blocks go through
    barrier_eval one block at a time. gamma aggregation works for the mixed
    case by writing each dense block's contribution at its first coordinate
    and reducing per block.
    """

    def __init__(self, barriers: list[BarrierDescriptor], layout: BlockLayout):
        self.barriers = list(barriers)
        self.layout = layout
        self.n = layout.n
        self.nu = float(sum(b.nu for b in barriers))
        self.sep = np.zeros(self.n, dtype=bool)
        self.lower = np.full(self.n, -np.inf)
        self.upper = np.full(self.n, np.inf)
        self._orth = np.zeros(self.n, dtype=bool)
        self.dense_blocks: list[int] = []
        for i, b in enumerate(barriers):
            sl = layout.block_slice(i)
            if b.kind == "nonneg-orthant":
                self.sep[sl] = True
                self._orth[sl] = True
                self.lower[sl] = 0.0
            elif b.kind == "box":
                self.sep[sl] = True
                self.lower[sl] = b.params["lower"]
                self.upper[sl] = b.params["upper"]
            else:
                self.dense_blocks.append(i)
        self._offsets = np.asarray(layout.offsets[:-1])

    def interior(self, x: np.ndarray) -> bool:
        if np.any(x[self.sep] <= self.lower[self.sep]) or np.any(
            x[self.sep] >= self.upper[self.sep]
        ):
            return False
        for i in self.dense_blocks:
            try:
                barrier_eval(self.barriers[i], x[self.layout.block_slice(i)])
            except NotInteriorError:
                return False
        return True

    def grad(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros(self.n)
        s = self.sep
        orth = self._orth
        g[orth] = -1.0 / x[orth]
        bx = s & ~orth
        g[bx] = -1.0 / (x[bx] - self.lower[bx]) + 1.0 / (self.upper[bx] - x[bx])
        for i in self.dense_blocks:
            sl = self.layout.block_slice(i)
            _, gi, _ = barrier_eval(self.barriers[i], x[sl])
            g[sl] = gi
        return g

    def metric(self, x: np.ndarray) -> "_Metric":
        return self.metric_grad(x)[0]

    def metric_grad(self, x: np.ndarray) -> tuple["_Metric", np.ndarray]:
        """Metric and barrier gradient at x in one pass over the blocks."""
        hd = np.zeros(self.n)
        g = np.zeros(self.n)
        orth = self._orth
        hd[orth] = 1.0 / x[orth] ** 2
        g[orth] = -1.0 / x[orth]
        bx = self.sep & ~orth
        lo = x[bx] - self.lower[bx]
        hi = self.upper[bx] - x[bx]
        hd[bx] = 1.0 / lo**2 + 1.0 / hi**2
        g[bx] = -1.0 / lo + 1.0 / hi
        factors: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for i in self.dense_blocks:
            sl = self.layout.block_slice(i)
            _, gi, H = barrier_eval(self.barriers[i], x[sl])
            g[sl] = gi
            vals, Q = np.linalg.eigh(0.5 * (H + H.T))
            if vals[0] <= 0:
                raise NotPositiveDefiniteError(f"block {i} Hessian not positive definite")
            factors[i] = (Q, np.sqrt(vals))
        return _Metric(self, hd, factors), g


class _Metric:
    """Products with hess(Phi)^{+-1/2} captured at one point."""

    def __init__(self, blocks: _Blocks, hess_diag, factors):
        self.blocks = blocks
        self.layout = blocks.layout
        self.hd = hess_diag  # valid on separable coords only
        self.factors = factors  # dense blocks: (Q, sqrt eigenvalues)
        with np.errstate(divide="ignore"):
            self._whalf = np.where(blocks.sep, 1.0 / np.sqrt(np.maximum(self.hd, 1e-300)), 0.0)

    def w_half(self, v: np.ndarray) -> np.ndarray:
        """hess^{-1/2} v."""
        out = v * self._whalf
        for i, (Q, s) in self.factors.items():
            sl = self.layout.block_slice(i)
            out[sl] = Q @ ((Q.T @ v[sl]) / s)
        return out

    def w_neg_half(self, v: np.ndarray) -> np.ndarray:
        """hess^{1/2} v."""
        out = np.where(self.blocks.sep, v / np.where(self._whalf > 0, self._whalf, 1.0), 0.0)
        for i, (Q, s) in self.factors.items():
            sl = self.layout.block_slice(i)
            out[sl] = Q @ ((Q.T @ v[sl]) * s)
        return out

    def w_half_rows(self, A: np.ndarray) -> np.ndarray:
        """hess^{-1/2} A, row-scaled."""
        out = A * self._whalf[:, None]
        for i, (Q, s) in self.factors.items():
            sl = self.layout.block_slice(i)
            out[sl] = Q @ ((Q.T @ A[sl]) / s[:, None])
        return out

    def gammas(self, mu: np.ndarray) -> np.ndarray:
        """Per-block ||mu_i||^2 in the inverse-Hessian norm."""
        contrib = np.where(self.blocks.sep, mu * mu * self._whalf**2, 0.0)
        for i, (Q, s) in self.factors.items():
            sl = self.layout.block_slice(i)
            z = (Q.T @ mu[sl]) / s
            contrib[sl] = 0.0
            contrib[sl.start] = float(z @ z)
        return np.add.reduceat(contrib, self.blocks._offsets)

    def scaling_block(self, i: int, tbar: float) -> np.ndarray:
        """The matrix hess_i^{-1/2} / tbar for the slack maintainer."""
        sl = self.layout.block_slice(i)
        if i in self.factors:
            Q, s = self.factors[i]
            return (Q @ np.diag(1.0 / s) @ Q.T) / tbar
        return np.diag(self._whalf[sl]) / tbar


# ---------------------------------------------------------------------------
# centrality quantities (reference forms, one block at a time)


def mu_block(b: BarrierDescriptor, x_i, s_i, t: float) -> np.ndarray:
    """Centrality error s_i / t + grad phi_i(x_i) for one block."""
    if t <= 0:
        raise ValueError("t must be positive")
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    s_i = np.atleast_1d(np.asarray(s_i, dtype=float))
    _, g, _ = barrier_eval(b, x_i)
    return s_i / t + g


def gamma_block(b: BarrierDescriptor, x_i, s_i, t: float) -> float:
    """Squared inverse-Hessian norm of the block centrality error."""
    mu = mu_block(b, x_i, s_i, t)
    _, _, H = barrier_eval(b, np.atleast_1d(np.asarray(x_i, dtype=float)))
    return float(mu @ np.linalg.solve(H, mu))


def _psi_from_gammas(gammas: np.ndarray, lam: float) -> float:
    a = lam * np.asarray(gammas, dtype=float)
    hi = float(a.max()) if a.size else 0.0
    if hi <= 500.0:
        return float(np.exp(a).sum())
    # log-sum-exp guard: return exp(logsumexp) which may itself be inf
    with np.errstate(over="ignore"):
        return float(np.exp(hi + np.log(np.exp(a - hi).sum())))


def psi(barriers, layout: BlockLayout, x, s, t: float, *, lam: float) -> float:
    """Centrality potential sum_i exp(lam * gamma_i); m iff perfectly centered."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    gams = np.array(
        [
            gamma_block(b, x[layout.block_slice(i)], s[layout.block_slice(i)], t)
            for i, b in enumerate(barriers)
        ]
    )
    return _psi_from_gammas(gams, lam)


def _soft_weights(gammas: np.ndarray, lam: float) -> np.ndarray:
    """w_i = exp(lam g_i) / sqrt(sum exp(2 lam g_j)), overflow-stable."""
    a = lam * np.asarray(gammas, dtype=float)
    hi = float(a.max()) if a.size else 0.0
    e = np.exp(a - hi)
    return e / math.sqrt(float((e * e).sum()))


def gradient_dir(barriers, layout: BlockLayout, x, s, t: float, *, lam: float) -> np.ndarray:
    """Soft-max-weighted direction; block i is w_i * hess_i^{-1/2} mu_i.

    ||result||_2 <= max_i gamma_i^{1/2} since the weights have unit 2-norm.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    kern = _Blocks(list(barriers), layout)
    met = kern.metric(x)
    mu = s / t + kern.grad(x)
    gams = met.gammas(mu)
    w = _soft_weights(gams, lam)
    g = met.w_half(mu)
    return g * np.repeat(w, layout.sizes)


# ---------------------------------------------------------------------------
# state and context


@dataclass
class IpmState:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    t: float
    xbar: np.ndarray
    sbar: np.ndarray
    r: np.ndarray
    k: int = 0
    k_decay: int = 0
    t0_main: float = 0.0
    theta: float = 0.0
    offset: np.ndarray | None = None
    tbar: np.ndarray | None = None  # per-block frozen t inside D_i


class SolveContext:
    """Everything a step needs besides the state: instance, kernels, handles."""

    def __init__(self, instance, cfg: IpmConfig):
        self.cfg = cfg
        self.A = np.asarray(instance.A, dtype=float)
        self.b = np.asarray(instance.b, dtype=float)
        self.c = np.asarray(instance.c, dtype=float)
        self.layout: BlockLayout = instance.layout
        self.barriers: list[BarrierDescriptor] = list(instance.barriers)
        self.kappa = float(getattr(instance, "kappa", 1.0))
        self.anchors = getattr(instance, "anchors", None)
        self.n, self.d = self.A.shape
        self.kern = _Blocks(self.barriers, self.layout)
        self.nu = self.kern.nu
        self.sched = cfg.schedule(self.n, self.nu)
        self.c_gap = cfg.c_gap if cfg.c_gap is not None else 8.0 * self.nu
        # the homotopy shifts the cost along one persistent direction, so the
        # blocks aligned with it hold the potential a growing-in-n factor
        # above the centered level set until theta hits zero; 4n headroom
        # covers the transient while still catching true divergence, which
        # compounds exponentially past any fixed multiple
        self.psi_ceiling = (
            cfg.psi_ceiling
            if cfg.psi_ceiling is not None
            else 4.0 * self.n * self.layout.m * math.exp(self.sched.lam * cfg.eps**2)
            + 50.0 * self.n**2
        )
        self.r_gamma = cfg.r_gamma if cfg.r_gamma is not None else cfg.eps
        self.b_norm = float(np.linalg.norm(self.b))
        if cfg.sparsifier_eps is not None:
            self.sp_eps = cfg.sparsifier_eps
        else:
            # feasibility contraction to alpha^2 needs roughly alpha/(2 eps)
            self.sp_eps = min(0.25, max(0.8 * self.sched.alpha / (2.0 * cfg.eps), 1e-3))
        self.slack_m: SlackMaintainer | None = None
        self.tracker: PrimalTracker | None = None
        self.h_prev: SpdFactorization | None = None
        self.diag_rows: list[tuple] = []
        self.stats = {
            "gamma_max": 0.0,
            "psi_max": 0.0,
            "feas_pre_max": 0.0,
            "feas_post_max": 0.0,
            "g_norm_max": 0.0,
            "delta1_max": 0.0,
            "delta2_max": 0.0,
            "dual_drift_max": 0.0,
            "hess_hi": 0.0,
            "hess_lo": np.inf,
        }

    def c_theta(self, state: IpmState) -> np.ndarray:
        if state.theta == 0.0 or state.offset is None:
            return self.c
        return self.c - state.theta * state.offset


def make_context(instance, cfg: IpmConfig) -> SolveContext:
    """Build the per-solve dependency bundle (kernels, schedule, handles)."""
    return SolveContext(instance, cfg)


# ---------------------------------------------------------------------------
# initialization


def initialize(instance, cfg: IpmConfig, ctx: SolveContext | None = None) -> IpmState:
    """Interior feasible start, exactly centered for a homotopy-shifted cost.

    Anchor points per block give a strictly interior x0; damped Newton
    projection onto A.T x = b keeps interiority while killing the residual.
    s0 = -t0 grad Phi(x0) is exactly central at t0; the least-squares gap
    between c and s0 + A y0 (orthogonal to range(A)) becomes the annealed
    cost offset, so gamma = 0 and Psi = m hold exactly at the start.
    """
    if ctx is None:
        ctx = make_context(instance, cfg)
    kern, layout, A, b = ctx.kern, ctx.layout, ctx.A, ctx.b
    if ctx.anchors is not None:
        x = np.array(ctx.anchors, dtype=float, copy=True)
        if not kern.interior(x):
            raise InitializationError("provided anchors are not strictly interior")
    else:
        from .barrier import anchor_point

        x = np.concatenate([anchor_point(bi) for bi in ctx.barriers])
    scale_b = max(1.0, float(np.linalg.norm(b)))
    for _ in range(100):
        r = A.T @ x - b
        if np.linalg.norm(r) <= 1e-12 * scale_b:
            break
        met = kern.metric(x)
        B = met.w_half_rows(A)
        H = spd_factor(gram(B))
        dx = met.w_half(B @ H.solve(r))
        tau = 1.0
        for _ in range(60):
            cand = x - tau * dx
            if kern.interior(cand):
                break
            tau *= 0.5
        else:
            raise InitializationError("projection step cannot stay interior")
        x = x - tau * dx
    else:
        raise InitializationError("could not reach A^T x = b from the anchors")

    t0 = max(1.0, float(np.linalg.norm(ctx.c)) * ctx.kappa)
    grad0 = kern.grad(x)
    s0 = -t0 * grad0
    y0, *_ = np.linalg.lstsq(A, ctx.c - s0, rcond=None)
    o = ctx.c - s0 - A @ y0
    onorm = float(np.linalg.norm(o))
    state = IpmState(
        x=x,
        s=s0.copy(),
        y=np.asarray(y0, dtype=float),
        t=t0,
        xbar=x.copy(),
        sbar=s0.copy(),
        r=A.T @ x - b,
        t0_main=t0,
        tbar=np.full(layout.m, t0),
    )
    if onorm > 1e-12 * max(1.0, float(np.linalg.norm(ctx.c))):
        state.theta = 1.0
        state.offset = o
    else:
        # cost already reachable: drop the offset, absorb the rounding into s
        state.theta = 0.0
        state.offset = None
        state.s = ctx.c - A @ y0
        state.sbar = state.s.copy()
    return state


def _attach_maintenance(state: IpmState, ctx: SolveContext) -> None:
    """Sketched mode: wire the lagged-copy structures to the fresh state."""
    cfg, sched = ctx.cfg, ctx.sched
    met = ctx.kern.metric(state.x)
    scalings = [met.scaling_block(i, state.t) for i in range(ctx.layout.m)]
    ctx.slack_m = SlackMaintainer(
        ctx.A,
        state.s,
        ctx.layout,
        sched.beta / 2.0,
        cfg.seed ^ 0x5AC6,
        scalings,
        instrument=cfg.instrument,
    )
    ctx.tracker = PrimalTracker(state.x, ctx.layout, sched.beta)
    state.x = ctx.tracker.x  # single owner: tracker mutates in place
    state.xbar = ctx.tracker.xbar
    state.sbar = ctx.slack_m.sbar
    B0 = met.w_half_rows(ctx.A)
    ctx.h_prev = spd_factor(gram(B0))


# ---------------------------------------------------------------------------
# one step


def _assert_le(value: float, bound: float, what: str, instrument: bool) -> None:
    if instrument and value > bound * (1.0 + 1e-9) + 1e-14:
        raise CentralityError(f"{what} = {value:.6g} exceeds bound {bound:.6g}")


def _build_h(ctx: SolveContext, B: np.ndarray, state: IpmState):
    """The (mode-dependent) approximation H of B.T B, factored."""
    cfg = ctx.cfg
    if cfg.mode == "exact-oracle":
        return spd_factor(gram(B)), 0, None
    # leverage of row b_i against the previous step's H; metric drift between
    # consecutive xbar states stays under e^{2 beta}, folded into the 3.5
    lev = np.einsum("ij,ji->i", B, ctx.h_prev.solve(B.T))
    tau_rows = np.minimum(1.0, 3.5 * np.maximum(lev, 0.0) + ctx.d / ctx.n)
    G, t_rows = sample_gram(
        B,
        tau_rows,
        ctx.sp_eps,
        cfg.seed,
        c_sample=cfg.sparsifier_const,
        stream=f"ipm.h.iter{state.k}",
    )
    try:
        fact = spd_factor(G)
    except NotPositiveDefiniteError as exc:
        raise IpmError(f"subsampled Gram factorization failed at iter {state.k}: {exc}") from exc
    return fact, t_rows, tau_rows


def short_step(
    state: IpmState, cfg: IpmConfig, ctx: SolveContext, *, decay: bool = True
) -> IpmState:
    """One accepted step of the path follower; mutates and returns state.

    `decay=False` runs a pure centering step (the path parameter stays put;
    used while the initialization homotopy anneals the cost offset).
    """
    sched = ctx.sched
    A, layout = ctx.A, ctx.layout
    if cfg.mode == "exact-oracle":
        state.xbar, state.sbar = state.x, state.s
    elif ctx.slack_m is None:
        _attach_maintenance(state, ctx)

    met, grad_bar = ctx.kern.metric_grad(state.xbar)
    mu_bar = state.sbar / state.t + grad_bar
    gam_bar = met.gammas(mu_bar)
    w = _soft_weights(gam_bar, sched.lam)
    g = sched.alpha * met.w_half(mu_bar) * np.repeat(w, layout.sizes)
    g_norm = math.sqrt(float(g @ g))
    # the weights have unit 2-norm, so on the committed state ||g|| <=
    # alpha * sqrt(max gamma) <= alpha * eps. Arrival states see more: the
    # anneal shift / t-decay moves each sqrt(gamma) by <= alpha*eps/2, and in
    # sketched mode gamma is measured at the lagged copies, whose contracts
    # allow beta/2 of slack lag and beta/3 of xbar drift (the 1.25 covers the
    # self-concordance distortion at radius beta/3 and the tbar-drift factor)
    g_slack = 0.5 * sched.alpha * cfg.eps
    if cfg.mode == "sketched":
        g_slack += 1.25 * (sched.beta / 2.0 + sched.beta / 3.0) + 0.1 * cfg.eps
    g_bound = sched.alpha * (cfg.eps + g_slack)
    _assert_le(g_norm, g_bound, "||g||", cfg.instrument)

    B = met.w_half_rows(A)
    h_fact, h_rows, tau_rows = _build_h(ctx, B, state)

    u = B.T @ g
    w12 = h_fact.solve(np.column_stack((u, state.r)))
    w1, w2 = w12[:, 0], w12[:, 1]
    feas_pre = math.sqrt(max(float(state.r @ w2), 0.0))
    _assert_le(feas_pre, sched.alpha * cfg.eps, "pre-step feasibility", cfg.instrument)

    delta1 = B @ w1
    delta2 = B @ w2
    d1 = math.sqrt(float(delta1 @ delta1))
    d2 = math.sqrt(float(delta2 @ delta2))
    _assert_le(d1, g_bound * math.exp(cfg.eps), "||delta1||", cfg.instrument)
    _assert_le(d2, sched.alpha * cfg.eps * math.exp(1.5 * cfg.eps), "||delta2||", cfg.instrument)
    delta_r = delta1 - delta2

    if cfg.mode == "exact-oracle":
        R = SampleMatrix(
            np.arange(layout.m), np.ones(layout.m), np.full(layout.m, 1.0 / layout.m),
            0, layout, is_identity=True,
        )
        r_dr = delta_r.copy()
    else:
        tau_blocks = np.add.reduceat(tau_rows, np.asarray(layout.offsets[:-1]))
        if float(delta_r @ delta_r) > 0.0:
            R = build_valid_R(
                delta_r,
                tau_blocks,
                layout,
                sched.alpha,
                ctx.r_gamma,
                rng_stream(cfg.seed, f"ipm.R.iter{state.k}"),
            )
        else:
            R = SampleMatrix(
                np.arange(layout.m), np.ones(layout.m), np.full(layout.m, 1.0 / layout.m),
                0, layout, is_identity=True,
            )
        r_dr = R.apply(delta_r)

    step_local = g - r_dr
    dx = met.w_half(step_local)
    if not ctx.kern.interior(state.x - dx):
        raise StepRejectedError(f"iter {state.k}: step leaves the domain interior")

    h_y = state.t * w1
    state.y = state.y + h_y
    state.s = state.s - A @ h_y
    state.r = state.r - u + B.T @ r_dr
    if cfg.resync_every and (state.k + 1) % cfg.resync_every == 0:
        state.r = A.T @ (state.x - dx) - ctx.b

    if decay:
        state.k_decay += 1
        state.t = state.t0_main * (1.0 - sched.eta) ** state.k_decay

    if cfg.mode == "exact-oracle":
        state.x = state.x - dx
        state.xbar, state.sbar = state.x, state.s
    else:
        ctx.slack_m.update_slack(-h_y)
        refreshed = ctx.tracker.update(dx, step_local)
        if refreshed.size:
            met_new = ctx.kern.metric(state.xbar)
            offs = np.asarray(layout.offsets[:-1])
            hit_blocks = np.unique(np.searchsorted(offs, refreshed, side="right") - 1)
            for i in hit_blocks:
                state.tbar[i] = state.t
                ctx.slack_m.update_scaling(int(i), met_new.scaling_block(int(i), state.t))
        drift = cfg.tbar_drift if cfg.tbar_drift is not None else math.exp(sched.beta / 4.0)
        stale = np.flatnonzero(state.tbar / state.t > drift)
        if stale.size:
            met_new = ctx.kern.metric(state.xbar)
            for i in stale:
                state.tbar[i] = state.t
                ctx.slack_m.update_scaling(int(i), met_new.scaling_block(int(i), state.t))
        state.sbar = ctx.slack_m.sbar
    ctx.h_prev = h_fact
    state.k += 1

    # committed-state diagnostics and invariant checks
    met_x, grad_x = ctx.kern.metric_grad(state.x)
    mu = state.s / state.t + grad_x
    gams = met_x.gammas(mu)
    gmax = float(gams.max())
    psi_val = _psi_from_gammas(gams, sched.lam)
    feas_post = math.sqrt(max(float(state.r @ h_fact.solve(state.r)), 0.0))
    # exact mode contracts deterministically to the per-block radius; sketched
    # mode only enforces the potential ceiling, which caps lam * max gamma by
    # ln(psi) (a single block may hold the whole slack)
    if cfg.mode == "exact-oracle" or not math.isfinite(ctx.psi_ceiling):
        gamma_cap = cfg.eps**2
    else:
        gamma_cap = max(cfg.eps**2, math.log(ctx.psi_ceiling) / sched.lam)
    _assert_le(gmax, gamma_cap, "max gamma", cfg.instrument)
    _assert_le(psi_val, ctx.psi_ceiling, "psi", cfg.instrument)
    post_bound = sched.alpha**2 + 1e-10 * (1.0 + ctx.b_norm)
    _assert_le(feas_post, post_bound, "post-step feasibility", cfg.instrument)
    hz = ctx.c_theta(state) - A @ state.y
    dual_scale = max(1.0, float(np.abs(state.s).max()), float(np.abs(hz).max()))
    dual_drift = float(np.abs(state.s - hz).max())
    if cfg.instrument and dual_drift > 1e-9 * dual_scale:
        raise CentralityError(f"dual feasibility drift {dual_drift:.3g} at iter {state.k}")

    st = ctx.stats
    st["gamma_max"] = max(st["gamma_max"], gmax)
    st["psi_max"] = max(st["psi_max"], psi_val)
    st["feas_pre_max"] = max(st["feas_pre_max"], feas_pre)
    st["feas_post_max"] = max(st["feas_post_max"], feas_post)
    st["g_norm_max"] = max(st["g_norm_max"], g_norm)
    st["delta1_max"] = max(st["delta1_max"], d1)
    st["delta2_max"] = max(st["delta2_max"], d2)
    st["dual_drift_max"] = max(st["dual_drift_max"], dual_drift)
    hsep = met_x.hd[ctx.kern.sep]
    if hsep.size:
        st["hess_hi"] = max(st["hess_hi"], float(hsep.max()))
        st["hess_lo"] = min(st["hess_lo"], float(hsep.min()))
    ctx.diag_rows.append(
        (
            state.k,
            state.t,
            gmax,
            psi_val,
            feas_post,
            g_norm,
            "exact" if cfg.mode == "exact-oracle" else f"sampled[{h_rows}]",
            R.support_size,
        )
    )
    return state


def _anneal_step(state: IpmState, cfg: IpmConfig, ctx: SolveContext) -> None:
    """Shrink the cost offset by the largest centering-safe decrement."""
    met = ctx.kern.metric(state.xbar)
    won = float(np.linalg.norm(met.w_half(state.offset)))
    dtheta = min(
        state.theta, ctx.sched.alpha * cfg.eps * state.t / (2.0 * max(won, 1e-300))
    )
    if state.theta - dtheta <= 1e-14:
        dtheta = state.theta
    ds = dtheta * state.offset
    state.s = state.s + ds
    state.theta -= dtheta
    if state.theta == 0.0:
        state.offset = None
    if cfg.mode == "sketched":
        ctx.slack_m.shift_base(ds)
        state.sbar = ctx.slack_m.sbar
    short_step(state, cfg, ctx, decay=False)


# ---------------------------------------------------------------------------
# rounding and the driver


def finalize(state: IpmState, ctx: SolveContext) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project x onto A.T x = b through the exact local metric.

    Refuses when the scaled residual exceeds the centrality radius (the
    correction bound would be meaningless); asserts exact feasibility and
    interiority of the result.
    """
    A, b = ctx.A, ctx.b
    met = ctx.kern.metric(state.x)
    B = met.w_half_rows(A)
    h_fact = spd_factor(gram(B))
    r = A.T @ state.x - b
    rnorm = math.sqrt(max(float(r @ h_fact.solve(r)), 0.0))
    if rnorm > ctx.cfg.eps:
        raise IpmError(f"residual {rnorm:.3g} too large to round; state is not centered")
    corr = B @ h_fact.solve(r)
    x_final = state.x - met.w_half(corr)
    res = float(np.linalg.norm(A.T @ x_final - b))
    if res > 1e-8 * max(1.0, float(np.linalg.norm(b))):
        raise IpmError(f"rounding left residual {res:.3g}")
    if not ctx.kern.interior(x_final):
        raise IpmError("rounding left the domain interior")
    move = float(np.linalg.norm(corr))
    _assert_le(move, ctx.sched.alpha * ctx.cfg.eps, "rounding move", ctx.cfg.instrument)
    return x_final, state.s.copy(), state.y.copy()


@dataclass
class SolveReport:
    x: np.ndarray | None
    s: np.ndarray | None
    y: np.ndarray | None
    objective: float
    gap_bound: float
    t_final: float
    iterations: int
    anneal_iterations: int
    converged: bool
    failure: str | None
    mode: str
    profile: str
    diag_rows: list
    stats: dict
    cond_ratio: float

    @property
    def diag_fields(self) -> tuple:
        return DIAG_FIELDS


def solve(instance, eps_target: float, cfg: IpmConfig | None = None) -> SolveReport:
    """Follow the central path until the gap bound clears eps_target.

    Runs the homotopy (cost-offset annealing at fixed t), then geometric
    t-decay until n * t <= eps_target / c_gap, then least-squares rounding.
    An iteration-cap overrun returns a partial report with converged=False
    instead of raising.
    """
    if cfg is None:
        cfg = IpmConfig.aggressive()
    if eps_target <= 0:
        raise ValueError("eps_target must be positive")
    ctx = make_context(instance, cfg)
    evals = np.linalg.eigvalsh(gram(ctx.A))
    if evals[0] < (1.0 / ctx.kappa) * (1.0 - 1e-9):
        raise ValueError(
            f"A^T A has smallest eigenvalue {evals[0]:.3g} < 1/kappa = {1.0 / ctx.kappa:.3g}"
        )
    state = initialize(instance, cfg, ctx)
    if cfg.mode == "sketched":
        _attach_maintenance(state, ctx)

    sched = ctx.sched
    t_stop = eps_target / (ctx.c_gap * ctx.n)
    est_anneal = 64
    if state.theta > 0:
        met0 = ctx.kern.metric(state.x)
        won0 = float(np.linalg.norm(met0.w_half(state.offset)))
        est_anneal = int(2.2 * won0 / (sched.alpha * cfg.eps * state.t)) + 64
    est_decay = int(math.log(max(state.t / t_stop, 1.0)) / max(sched.eta, 1e-300)) + 64
    cap = cfg.max_iters if cfg.max_iters is not None else 3 * (est_anneal + est_decay)

    failure = None
    anneal_iters = 0
    while state.theta > 0.0:
        if state.k >= cap:
            failure = f"iteration cap {cap} hit during homotopy"
            break
        _anneal_step(state, cfg, ctx)
        anneal_iters += 1
    if failure is None:
        while ctx.n * state.t > eps_target / ctx.c_gap:
            if state.k >= cap:
                failure = f"iteration cap {cap} hit at t = {state.t:.3g}"
                break
            short_step(state, cfg, ctx)

    st = ctx.stats
    if ctx.tracker is not None:
        st["xbar_refreshes"] = ctx.tracker.refresh_events
        st["xbar_refreshed_coords"] = ctx.tracker.refreshed_coords
    if ctx.slack_m is not None:
        st["sbar_refreshes"] = ctx.slack_m.refresh_events
        st["sbar_refreshed_coords"] = ctx.slack_m.refreshed_coords
    cond_ratio = (
        st["hess_hi"] / st["hess_lo"] if st["hess_lo"] not in (0.0, np.inf) else float("inf")
    )
    if failure is not None:
        return SolveReport(
            x=state.x.copy(), s=state.s.copy(), y=state.y.copy(),
            objective=float(ctx.c @ state.x), gap_bound=ctx.c_gap * ctx.n * state.t,
            t_final=state.t, iterations=state.k, anneal_iterations=anneal_iters,
            converged=False, failure=failure, mode=cfg.mode, profile=cfg.profile,
            diag_rows=ctx.diag_rows, stats=dict(st), cond_ratio=cond_ratio,
        )
    x_f, s_f, y_f = finalize(state, ctx)
    return SolveReport(
        x=x_f, s=s_f, y=y_f,
        objective=float(ctx.c @ x_f), gap_bound=ctx.c_gap * ctx.n * state.t,
        t_final=state.t, iterations=state.k, anneal_iterations=anneal_iters,
        converged=True, failure=None, mode=cfg.mode, profile=cfg.profile,
        diag_rows=ctx.diag_rows, stats=dict(st), cond_ratio=cond_ratio,
    )
