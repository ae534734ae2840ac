"""Maintained approximations that let the solver avoid dense per-step work.

Four structures, all owned by the solver loop:

- `SlackMaintainer`: tracks s = s0 + A (h_1 + ... + h_t) and keeps a lagged
  copy sbar with per-block error ||D_i (s_i - sbar_i)||_2 <= eps. Detection
  runs over dyadic time windows: level k checks the last 2^k steps whenever
  2^k divides t, so slow drift is caught by long windows and bursts by short
  ones. A per-level count-sketch of the scaled rows proposes candidate
  blocks when it is coarser than the coordinate space; below that scale the
  sketch degenerates and an exact window scan is cheaper, so the structure
  switches honestly. A full since-refresh sweep at the top-level cadence
  caps the drift that per-window thresholds can never see (each window
  individually under threshold), making the contract deterministic rather
  than merely high-probability.
- `L2SampleTree`: samples a block index with probability exactly
  ||D_i A_i h||^2 / ||D A h||^2 by walking a binary tree of sketched masses
  and correcting at the leaf with a rejection step whose acceptance stays in
  (1/4, 1). Node sketches fall back to exact row storage when the JL row
  count required for the (1/4, 1) band exceeds the row count being
  sketched, which is always the case at tested sizes.
- `build_valid_R` / `SampleMatrix`: block-constant diagonal reweighting from
  K' categorical draws mixing l2-mass, uniform, and leverage-overestimate
  components; unbiased with variance, maximum, and spectral guarantees.
- `PrimalTracker`: exact x plus a lagged xbar, refreshed per block when the
  accumulated local-norm step mass crosses beta/3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .barrier import BlockLayout
from .config import ln, rng_stream

__all__ = [
    "SlackMaintainer",
    "sm_update_scaling",
    "sm_update_slack",
    "L2SampleTree",
    "lt_sample_block",
    "lt_sample_many",
    "SampleMatrix",
    "build_valid_R",
    "PrimalTracker",
    "primal_tracker_update",
]


def _check_block_spd(M: np.ndarray, dim: int) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.shape != (dim, dim):
        raise ValueError(f"scaling block must be {dim}x{dim}, got {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise ValueError("scaling block must be symmetric")
    try:
        np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError:
        raise ValueError("scaling block must be positive definite") from None
    return 0.5 * (M + M.T)


class _SlackLevel:
    """One dyadic window length 2^k: sketch (optional), product, mask."""

    def __init__(self, k: int, sk, prod, n_blocks: int):
        self.k = k
        self.span = 1 << k
        self.sk = sk  # HhSketch or None (exact scan)
        self.prod = prod  # sk.apply(masked DA), (out_dim, d), or None
        self.masked = np.zeros(n_blocks, dtype=bool)


class SlackMaintainer:
    """Lagged slack vector with per-block scaled-error contract.

    Parameters
    ----------
    A : (n, d) array
    s0 : (n,) array
        Slack at time zero; sbar starts equal to it.
    layout : BlockLayout
    scalings : sequence of (n_i, n_i) SPD arrays, optional
        Initial D blocks; identity when omitted.
    eps : float
        Contract tolerance: ||D_i (s_i - sbar_i)||_2 <= eps for all i,
        after every operation.
    seed : int
    instrument : bool
        Assert the ||D A h|| <= 1 precondition and the contract against an
        exact shadow state after every update (test builds).
    force_sketch : bool
        Use the count-sketch candidate path even where an exact window scan
        is cheaper (the sketch is degenerate there; tests only).
    """

    def __init__(
        self,
        A,
        s0,
        layout: BlockLayout,
        eps: float,
        seed: int,
        scalings=None,
        *,
        instrument: bool = False,
        force_sketch: bool = False,
        reps: int | None = None,
        c_hh: float = 8.0,
    ):
        from .sketch import hh_build  # local import to avoid cycles at module load

        self.A = np.array(np.asarray(A, dtype=float), copy=True)
        self.n, self.d = self.A.shape
        self.layout = layout
        if layout.n != self.n:
            raise ValueError("layout does not match A")
        s0 = np.asarray(s0, dtype=float)
        if s0.shape != (self.n,):
            raise ValueError(f"s0 must have shape ({self.n},)")
        self.s0 = s0.copy()
        self.sbar = s0.copy()
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)
        self.seed = int(seed)
        self.instrument = bool(instrument)
        self.ln_n = max(ln(max(self.n, 2)), 1.0)
        self.eps_bar = self.eps / (2.0 * self.ln_n)
        m = layout.m
        M = layout.max_block
        self.D_blocks: list[np.ndarray] = []
        for i in range(m):
            n_i = layout.sizes[i]
            if scalings is None:
                self.D_blocks.append(np.eye(n_i))
            else:
                self.D_blocks.append(_check_block_spd(scalings[i], n_i))
        self.DA = np.empty_like(self.A)
        for i in range(m):
            sl = layout.block_slice(i)
            self.DA[sl] = self.D_blocks[i] @ self.A[sl]

        self.t = 0
        self._cums: list[np.ndarray] = [np.zeros(self.d)]
        self.cum = np.zeros(self.d)
        # stamp of each block's last scaling update, as a step fraction
        self._scaled_at = np.full(m, -1.0)
        # per-coordinate D_i A_i cum(refresh time of block i)
        self._u_ref = np.zeros(self.n)

        k_max = 0
        while (1 << (k_max + 1)) ** 2 <= self.n:
            k_max += 1
        self.k_max = k_max
        self.levels: list[_SlackLevel] = []
        reps_eff = reps if reps is not None else int(np.ceil(2.0 * self.ln_n)) + 2
        for k in range(k_max + 1):
            eps_k = self.eps_bar / (5.0 * M * (1 << k))
            buckets_req = int(np.ceil(c_hh / eps_k**2))
            if buckets_req < self.n or force_sketch:
                sk = hh_build(
                    eps_k,
                    self.n,
                    self.seed,
                    c_hh=c_hh,
                    reps=reps_eff,
                    stream=f"slack.lvl{k}",
                )
                prod = sk.apply(self.DA)
            else:
                sk, prod = None, None
            self.levels.append(_SlackLevel(k, sk, prod, m))

        self.refresh_events = 0
        self.refreshed_coords = 0
        if self.instrument:
            self._shadow = s0.copy()

    # -- internals ----------------------------------------------------------

    def _refresh_block(self, i: int) -> None:
        sl = self.layout.block_slice(i)
        self.sbar[sl] = self.s0[sl] + self.A[sl] @ self.cum
        self._u_ref[sl] = self.DA[sl] @ self.cum
        self.refresh_events += 1
        self.refreshed_coords += sl.stop - sl.start

    def _rows_delta(self, lvl: _SlackLevel, sl: slice, rows: np.ndarray, sign: float) -> None:
        """Add sign * (sketch of given rows at coords sl) into lvl.prod."""
        sk = lvl.sk
        idx = np.arange(sl.start, sl.stop)
        flat = sk.bucket_of[:, idx] + (np.arange(sk.reps) * sk.buckets)[:, None]
        contrib = sk.sign_of[:, idx][:, :, None] * rows[None, :, :]
        np.add.at(lvl.prod, flat.ravel(), sign * contrib.reshape(-1, self.d))

    def _window_scan_exact(self, H: np.ndarray, skip: np.ndarray) -> np.ndarray:
        v = self.DA @ H
        norms = np.sqrt(self.layout.block_sq_norms(v))
        cand = np.flatnonzero((norms >= self.eps_bar) & ~skip)
        return cand

    def _window_scan_sketch(self, lvl: _SlackLevel, H: np.ndarray, skip: np.ndarray) -> np.ndarray:
        y = lvl.prod @ H
        sk = lvl.sk
        per_rep = y.reshape(sk.reps, sk.buckets)
        norm_sq_est = max(float(np.mean(np.sum(per_rep**2, axis=1))), 0.0)
        est = np.abs(sk.estimates(y))
        thresh = sk.eps_hh * np.sqrt(norm_sq_est)
        coords = np.flatnonzero(est >= thresh)
        if coords.size == 0:
            return coords
        offsets = np.asarray(self.layout.offsets[:-1])
        blocks = np.unique(np.searchsorted(offsets, coords, side="right") - 1)
        blocks = blocks[~skip[blocks]]
        keep = []
        for i in blocks:
            sl = self.layout.block_slice(int(i))
            if np.linalg.norm(self.DA[sl] @ H) >= self.eps_bar:
                keep.append(int(i))
        return np.asarray(keep, dtype=int)

    # -- operations ---------------------------------------------------------

    def update_scaling(self, i: int, M_block) -> np.ndarray:
        """Replace D_i; forces sbar_i onto the exact slack. Returns coords."""
        i = int(i)
        if not (0 <= i < self.layout.m):
            raise IndexError(f"block {i} out of range")
        sl = self.layout.block_slice(i)
        new_block = _check_block_spd(M_block, sl.stop - sl.start)
        for lvl in self.levels:
            if lvl.sk is not None and not lvl.masked[i]:
                self._rows_delta(lvl, sl, self.DA[sl], -1.0)
            lvl.masked[i] = True
        self.D_blocks[i] = new_block
        self.DA[sl] = new_block @ self.A[sl]
        self._scaled_at[i] = self.t + 0.5
        self._refresh_block(i)
        if self.instrument:
            self._verify()
        return np.arange(sl.start, sl.stop)

    def update_slack(self, h) -> np.ndarray:
        """Record s <- s + A h; returns the coordinates of sbar that changed."""
        h = np.asarray(h, dtype=float)
        if h.shape != (self.d,):
            raise ValueError(f"h must have shape ({self.d},)")
        if self.instrument:
            step_norm = np.linalg.norm(self.DA @ h)
            if step_norm > 1.0 + 1e-9:
                raise ValueError(f"||D A h||_2 = {step_norm:.6g} violates the <= 1 contract")
        self.t += 1
        t = self.t
        self.cum = self.cum + h
        self._cums.append(self.cum.copy())
        changed_blocks: list[int] = []
        for lvl in self.levels:
            if t % lvl.span != 0:
                continue
            # boundary: reset the level's mask (re-include current D rows)
            if lvl.sk is not None:
                for i in np.flatnonzero(lvl.masked):
                    sl = self.layout.block_slice(int(i))
                    self._rows_delta(lvl, sl, self.DA[sl], +1.0)
            lvl.masked[:] = False
            H = self.cum - self._cums[t - lvl.span]
            # blocks rescaled inside the window refreshed then; skip them here
            skip = self._scaled_at > t - lvl.span
            if lvl.sk is None:
                cand = self._window_scan_exact(H, skip)
            else:
                cand = self._window_scan_sketch(lvl, H, skip)
            for i in cand:
                self._refresh_block(int(i))
                changed_blocks.append(int(i))
        if t % (1 << self.k_max) == 0:
            # since-refresh sweep: catches drift split across window boundaries
            dev = self.DA @ self.cum - self._u_ref
            norms = np.sqrt(self.layout.block_sq_norms(dev))
            for i in np.flatnonzero(norms >= self.eps_bar):
                self._refresh_block(int(i))
                changed_blocks.append(int(i))
        if self.instrument:
            self._verify()
        if not changed_blocks:
            return np.zeros(0, dtype=int)
        coords = np.concatenate(
            [np.arange(self.layout.block_slice(i).start, self.layout.block_slice(i).stop)
             for i in sorted(set(changed_blocks))]
        )
        return coords

    def shift_base(self, delta_s) -> None:
        """Shift s and sbar by the same exact vector (base change, not A h).

        The difference s - sbar is unchanged, so the contract and all window
        state survive as-is; used by callers whose slack moves partly outside
        range(A) (cost homotopies).
        """
        delta_s = np.asarray(delta_s, dtype=float)
        if delta_s.shape != (self.n,):
            raise ValueError(f"delta_s must have shape ({self.n},)")
        self.s0 += delta_s
        self.sbar += delta_s  # in place: callers may hold views
        if self.instrument:
            self._verify()

    def exact_slack(self) -> np.ndarray:
        """Recomputed s (oracle path; O(nd))."""
        return self.s0 + self.A @ self.cum

    def approx(self) -> np.ndarray:
        """The maintained sbar (view; do not mutate)."""
        return self.sbar

    def contract_errors(self) -> np.ndarray:
        """Per-block ||D_i (s_i - sbar_i)||_2 against the exact slack."""
        diff = self.exact_slack() - self.sbar
        out = np.empty(self.layout.m)
        for i in range(self.layout.m):
            sl = self.layout.block_slice(i)
            out[i] = np.linalg.norm(self.D_blocks[i] @ diff[sl])
        return out

    def maintained_product(self, k: int) -> np.ndarray | None:
        lvl = self.levels[k]
        return None if lvl.prod is None else lvl.prod.copy()

    def recompute_product(self, k: int) -> np.ndarray | None:
        """Oracle recomputation of Q_k D^(k) A from scratch."""
        lvl = self.levels[k]
        if lvl.sk is None:
            return None
        DA_masked = self.DA.copy()
        for i in np.flatnonzero(lvl.masked):
            DA_masked[self.layout.block_slice(int(i))] = 0.0
        return lvl.sk.apply(DA_masked)

    def _verify(self) -> None:
        self._shadow = self.exact_slack()
        errs = self.contract_errors()
        bad = int(np.argmax(errs))
        if errs[bad] > self.eps * (1.0 + 1e-9):
            raise AssertionError(
                f"slack contract violated on block {bad}: {errs[bad]:.6g} > {self.eps:.6g}"
            )


def sm_update_scaling(sm: SlackMaintainer, i: int, M_block) -> np.ndarray:
    """Alias for `SlackMaintainer.update_scaling`."""
    return sm.update_scaling(i, M_block)


def sm_update_slack(sm: SlackMaintainer, h) -> np.ndarray:
    """Alias for `SlackMaintainer.update_slack`."""
    return sm.update_slack(h)


# ---------------------------------------------------------------------------
# l2 block sampling tree


class _TreeNode:
    __slots__ = ("lo", "hi", "sl", "left", "right", "G", "mat")

    def __init__(self, lo, hi, sl):
        self.lo = lo
        self.hi = hi
        self.sl = sl
        self.left = -1
        self.right = -1
        self.G = None
        self.mat = None


class L2SampleTree:
    """Binary tree over blocks sampling i with prob ||D_i A_i h||^2 / ||DAh||^2.

    Node masses come from per-node JL sketches of the scaled rows; the draw
    is made exact by a leaf rejection step with acceptance
    p = exact / (2 * root_mass * prod(descent ratios)), which telescopes to
    exactly 1/2 when every node is exact. Nodes store exact rows instead of
    a sketch whenever the JL row count needed to keep p in (1/4, 1) is not
    actually smaller than the row count itself (always, at tested sizes),
    so the band assert is structural there.
    """

    def __init__(
        self,
        A,
        layout: BlockLayout,
        seed: int,
        scalings=None,
        *,
        jl_rows: int | None = None,
        force_sketch: bool = False,
    ):
        self.A = np.array(np.asarray(A, dtype=float), copy=True)
        self.n, self.d = self.A.shape
        self.layout = layout
        if layout.n != self.n:
            raise ValueError("layout does not match A")
        self.seed = int(seed)
        m = layout.m
        self.D_blocks: list[np.ndarray] = []
        for i in range(m):
            n_i = layout.sizes[i]
            if scalings is None:
                self.D_blocks.append(np.eye(n_i))
            else:
                self.D_blocks.append(_check_block_spd(scalings[i], n_i))
        self.DA = np.empty_like(self.A)
        for i in range(m):
            sl = layout.block_slice(i)
            self.DA[sl] = self.D_blocks[i] @ self.A[sl]
        depth = max(int(np.ceil(np.log2(max(m, 1)))), 0)
        if jl_rows is None:
            # rows for a (1 +- 0.35/(depth+1)) norm estimate whp; huge, by design
            eps_node = 0.35 / (depth + 1.0)
            jl_rows = int(np.ceil(8.0 * ln(max(self.n, 2)) * 3.0 / eps_node**2))
        self.jl_rows = int(jl_rows)
        self.force_sketch = bool(force_sketch)
        self.nodes: list[_TreeNode] = []
        self.root = self._build(0, m)

    def _build(self, lo: int, hi: int) -> int:
        sl = slice(self.layout.block_slice(lo).start, self.layout.block_slice(hi - 1).stop)
        node = _TreeNode(lo, hi, sl)
        idx = len(self.nodes)
        self.nodes.append(node)
        rows_here = sl.stop - sl.start
        if self.force_sketch or self.jl_rows < rows_here:
            rng = rng_stream(self.seed, f"l2tree.node{idx}")
            node.G = rng.standard_normal((self.jl_rows, rows_here)) / np.sqrt(self.jl_rows)
            node.mat = node.G @ self.DA[sl]
        if hi - lo > 1:
            mid = (lo + hi) // 2
            node.left = self._build(lo, mid)
            node.right = self._build(mid, hi)
        return idx

    def _mass(self, idx: int, h: np.ndarray) -> float:
        node = self.nodes[idx]
        v = node.mat @ h if node.mat is not None else self.DA[node.sl] @ h
        return float(v @ v)

    def update_scaling(self, i: int, N) -> None:
        """Set D_i <- N and refresh every node containing block i."""
        i = int(i)
        sl = self.layout.block_slice(i)
        self.D_blocks[i] = _check_block_spd(N, sl.stop - sl.start)
        self.DA[sl] = self.D_blocks[i] @ self.A[sl]
        for node in self.nodes:
            if node.lo <= i < node.hi and node.mat is not None:
                node.mat = node.G @ self.DA[node.sl]  # affected rows are few; rebuild

    def leaf_masses(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        v = self.DA @ h
        return self.layout.block_sq_norms(v)

    def _plan(self, h):
        """Reach probabilities and acceptance probabilities for a fixed h."""
        h = np.asarray(h, dtype=float)
        m = self.layout.m
        reach = np.zeros(m)
        accept = np.zeros(m)
        root_mass = self._mass(self.root, h)
        if root_mass <= 0.0:
            raise ValueError("D A h = 0: nothing to sample")
        exact = self.leaf_masses(h)

        def descend(idx: int, prob: float) -> None:
            node = self.nodes[idx]
            if node.left < 0:
                i = node.lo
                reach[i] = prob
                denom = 2.0 * root_mass * prob
                accept[i] = exact[i] / denom if denom > 0 else 0.0
                return
            ml = self._mass(node.left, h)
            mr = self._mass(node.right, h)
            tot = ml + mr
            if tot <= 0.0:
                return
            descend(node.left, prob * ml / tot)
            descend(node.right, prob * mr / tot)

        descend(self.root, 1.0)
        live = exact > 0
        if np.any((accept[live] <= 0.25) | (accept[live] >= 1.0)):
            bad = int(np.flatnonzero(live & ((accept <= 0.25) | (accept >= 1.0)))[0])
            raise AssertionError(
                f"acceptance probability {accept[bad]:.4f} for block {bad} left (1/4, 1); "
                "node sketches too coarse"
            )
        return reach, accept


def lt_sample_block(tree: L2SampleTree, h, rng) -> int:
    """One draw of a block index with probability proportional to its mass."""
    if isinstance(rng, (int, np.integer)):
        rng = rng_stream(int(rng), "l2tree.sample")
    reach, accept = tree._plan(h)
    while True:
        idx = int(rng.choice(reach.size, p=reach))
        if accept[idx] > 0 and rng.random() < accept[idx]:
            return idx


def lt_sample_many(tree: L2SampleTree, h, size: int, rng) -> np.ndarray:
    """Vectorized i.i.d. draws (same law as repeated lt_sample_block)."""
    if isinstance(rng, (int, np.integer)):
        rng = rng_stream(int(rng), "l2tree.sample")
    reach, accept = tree._plan(h)
    out = np.empty(size, dtype=int)
    have = 0
    while have < size:
        batch = max(int((size - have) * 2.5) + 8, 16)
        cand = rng.choice(reach.size, size=batch, p=reach)
        keep = cand[rng.random(batch) < accept[cand]]
        take = min(keep.size, size - have)
        out[have : have + take] = keep[:take]
        have += take
    return out


# ---------------------------------------------------------------------------
# valid block-diagonal sample


@dataclass
class SampleMatrix:
    """Nonnegative block-constant diagonal R = sum_j (p_{i_j} K')^{-1} I_{S_{i_j}}.

    `blocks` lists the touched blocks, `weights` their diagonal values.
    Blocks off the support have R_ii = 0; E[R] = I over the draw.
    """

    blocks: np.ndarray
    weights: np.ndarray
    p: np.ndarray
    k_prime: int
    layout: BlockLayout
    is_identity: bool = False

    @property
    def support_size(self) -> int:
        return int(self.blocks.size)

    def diag(self) -> np.ndarray:
        if self.is_identity:
            return np.ones(self.layout.n)
        per_block = np.zeros(self.layout.m)
        per_block[self.blocks] = self.weights
        return np.repeat(per_block, self.layout.sizes)

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.is_identity:
            return v.copy()
        return self.diag() * v


def valid_sample_probs(delta, tau, layout: BlockLayout) -> tuple[np.ndarray, float]:
    """The mixture probabilities p_i and normalizer K for a step vector."""
    delta = np.asarray(delta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    m = layout.m
    if tau.shape != (m,):
        raise ValueError(f"tau must have one entry per block ({m})")
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    block_sq = layout.block_sq_norms(delta)
    total = float(block_sq.sum())
    if total <= 0.0:
        raise ValueError("delta is zero")
    sq = np.sqrt(m)
    K = 2.0 * sq + float(tau.sum())
    p = (sq * (block_sq / total + 1.0 / m) + tau) / K
    return p, K


def build_valid_R(
    delta,
    tau,
    layout: BlockLayout,
    alpha: float,
    gamma: float,
    seed,
    *,
    c_kprime: float = 32.0,
    method: str = "multinomial",
    tree: L2SampleTree | None = None,
    h=None,
    stream: str = "validR",
) -> SampleMatrix:
    """Draw a valid sample R for step vector delta.

    K' = ceil(c_kprime * (alpha*gamma)^{-2} * ln(n) * K) categorical draws
    from p_i = (sqrt(m)(||delta_i||^2/||delta||^2 + 1/m) + tau_i) / K with
    K = 2 sqrt(m) + sum(tau). `method="multinomial"` realizes all draws in
    one batched call; `method="tree"` draws the l2 component through an
    L2SampleTree one draw at a time (distribution is identical; used for
    differential testing). delta = 0 returns the identity by convention.
    """
    delta = np.asarray(delta, dtype=float)
    m = layout.m
    if float(delta @ delta) <= 0.0:
        return SampleMatrix(
            np.arange(m), np.ones(m), np.full(m, 1.0 / m), 0, layout, is_identity=True
        )
    p, K = valid_sample_probs(delta, tau, layout)
    n = layout.n
    k_prime = int(np.ceil(c_kprime * (alpha * gamma) ** -2 * max(ln(max(n, 2)), 1.0) * K))
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(int(seed), stream)
    if method == "multinomial":
        counts = rng.multinomial(k_prime, p)
    elif method == "tree":
        if tree is None or h is None:
            raise ValueError("tree method needs a tree and its h vector")
        tau = np.asarray(tau, dtype=float)
        sq = np.sqrt(m)
        comp_p = np.array([sq / K, sq / K, float(tau.sum()) / K])
        comp_p = comp_p / comp_p.sum()
        tau_p = tau / tau.sum() if tau.sum() > 0 else None
        counts = np.zeros(m, dtype=int)
        for _ in range(k_prime):
            comp = rng.choice(3, p=comp_p)
            if comp == 0:
                counts[lt_sample_block(tree, h, rng)] += 1
            elif comp == 1:
                counts[rng.integers(m)] += 1
            else:
                counts[rng.choice(m, p=tau_p)] += 1
    else:
        raise ValueError(f"unknown method {method!r}")
    touched = np.flatnonzero(counts)
    weights = counts[touched] / (p[touched] * k_prime)
    return SampleMatrix(touched, weights, p, k_prime, layout)


# ---------------------------------------------------------------------------
# primal approximation tracker


@dataclass
class PrimalTracker:
    """Exact x alongside a lagged xbar with beta/3 per-block refresh sums.

    `acc` accumulates, per block, the local-norm sizes of the steps applied
    since that block's last refresh (no sign cancellation: an upper bound on
    the drift, so the beta/3 threshold leaves a self-concordance margin
    against the true ||x_i - xbar_i|| measured at the moved point).
    """

    x: np.ndarray
    layout: BlockLayout
    beta: float
    xbar: np.ndarray = field(init=False)
    acc: np.ndarray = field(init=False)
    refresh_events: int = 0
    refreshed_coords: int = 0

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float, copy=True)
        self.xbar = self.x.copy()
        self.acc = np.zeros(self.layout.m)

    def update(self, displacement, local_change) -> np.ndarray:
        """Apply x -= displacement; returns refreshed coordinate indices.

        `local_change` is this step's change measured per coordinate in the
        local norm (for the solver: g - R delta_r, whose block norms are the
        Hessian-norm step sizes exactly).
        """
        displacement = np.asarray(displacement, dtype=float)
        self.x -= displacement
        local_change = np.asarray(local_change, dtype=float)
        self.acc += np.sqrt(self.layout.block_sq_norms(local_change))
        hit = np.flatnonzero(self.acc >= self.beta / 3.0)
        if hit.size == 0:
            return np.zeros(0, dtype=int)
        coords = []
        for i in hit:
            sl = self.layout.block_slice(int(i))
            self.xbar[sl] = self.x[sl]
            self.acc[i] = 0.0
            self.refresh_events += 1
            self.refreshed_coords += sl.stop - sl.start
            coords.append(np.arange(sl.start, sl.stop))
        return np.concatenate(coords)

    def drift_bounds(self) -> np.ndarray:
        """Current per-block accumulated step mass (upper bounds the drift)."""
        return self.acc.copy()


def primal_tracker_update(pt: PrimalTracker, g_change, sparse_step=None) -> np.ndarray:
    """Account one step: dense part g_change plus optional sparse part.

    Both are local-norm change vectors; the displacement is their sum here
    (callers that scale displacements differently use `PrimalTracker.update`
    directly). Returns refreshed coordinates of xbar.
    """
    g_change = np.asarray(g_change, dtype=float)
    step = g_change if sparse_step is None else g_change + np.asarray(sparse_step, dtype=float)
    return pt.update(step, step)
