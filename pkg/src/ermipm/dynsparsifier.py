"""Dynamic leverage-overestimate maintenance under row halvings.

`DecrementalSparsifier` maintains, for a row matrix undergoing halvings
(a_i <- a_i/2), per-row overestimates tau_i of the ridge leverage scores
a_i^T (A^T A + I/kappa)^{-1} a_i. Halvings buffer until their estimated
removed leverage crosses a constant, then flush into a batch: the structure
resamples an approximate Gram matrix, refreshes the estimates of halved rows,
and walks a dyadic tiling of past batches to catch rows whose leverage *grew*
(halving one row can raise everyone else's score). Candidate rows for that
check come from a heavy-hitter locator so the checker never scans blindly;
a final exact-form filter keeps the refresh decisions a deterministic
function of the checker's own randomness (the locator only ever supplies a
superset, so reseeding it cannot change trajectories).

`DynamicSparsifier` turns the decremental core into a fully dynamic
structure: inserts go through binary bucketing (level ell rebuilds every
2^ell insert batches), deletes become a fixed number of halvings that drive
a row's mass below relevance.

Instrumented runs record one dict per batch: batch index, halved multiset
size, buffered removed-leverage estimate, sum of overestimates, locator
candidates checked, and (optionally) exact Gram snapshots for spectral-drift
checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TOL, ln, rng_stream
from .levscore import CheckerSketch, build_checker, estimate_lev, sample_gram
from .linalg import exact_leverage, gram, spd_inverse, sqrt_psd
from .sketch import HeavyHitterSet

__all__ = [
    "SparsifierConfig",
    "HalvingBatch",
    "DecrementalSparsifier",
    "DynamicSparsifier",
    "decr_init",
    "halve",
    "flush_batch",
    "overestimates",
    "dyn_insert",
    "dyn_delete",
]


@dataclass(frozen=True)
class SparsifierConfig:
    """Tuning knobs for the halving structures.

    checker_eps : float or "paper"
        Accuracy of the per-batch sampled Gram. The formula variant
        0.1/Q_max is available as "paper" (sample sizes then explode at
        small scale; the numeric default keeps soundness through the x10
        estimate inflation instead).
    """

    checker_eps: float | str = 0.5
    checker_jl_rows: int = 48
    checker_sample_const: float = 2.0
    lev_inflation: float = 10.0
    flush_threshold: float = 0.01
    locator_query_const: float = 0.05
    locator_safety: float = 4.0
    locator_reps: int = 32
    locator_jl_cols: int = 8
    c_batch: float = 10.0
    exact_oracle: bool = False
    dead_row_factor: float | None = None  # default kappa^{-10}

    def resolve_checker_eps(self, n: int, d: int, kappa: float) -> float:
        if self.checker_eps == "paper":
            q_max = np.ceil(self.c_batch * d * ln(max(n * d * kappa, 2.0)))
            return float(0.1 / q_max)
        return float(self.checker_eps)


@dataclass
class HalvingBatch:
    """One flushed batch of halvings."""

    q: int
    rows: list[int]
    removed_leverage: float
    tau_sum: float
    candidates_checked: int


class DecrementalSparsifier:
    """Leverage overestimates for a row matrix undergoing halvings."""

    def __init__(
        self,
        A,
        kappa: float,
        seed: int,
        config: SparsifierConfig | None = None,
        instrument: bool = False,
        locator_seed: int | None = None,
    ):
        A = np.array(np.asarray(A, dtype=float), copy=True)
        if A.ndim != 2 or A.shape[0] == 0:
            raise ValueError("need a nonempty 2-d row matrix")
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        sq = np.einsum("ij,ij->i", A, A)
        bad = np.flatnonzero(sq > kappa * (1.0 + 1e-12))
        if bad.size:
            raise ValueError(f"row {bad[0]} violates the norm bound |a|^2 <= kappa")
        self.A = A
        self.n, self.d = A.shape
        self.kappa = float(kappa)
        self.cfg = config or SparsifierConfig()
        self.seed = int(seed)
        self.instrument = bool(instrument)
        self.eps_checker = self.cfg.resolve_checker_eps(self.n, self.d, kappa)
        dead_factor = self.cfg.dead_row_factor
        if dead_factor is None:
            dead_factor = max(kappa, 2.0) ** -10
        self._dead_sq = float(dead_factor**2) * float(sq.max() if sq.size else 1.0)
        self.dead = sq <= self._dead_sq

        self.tau = exact_leverage(A, 1.0 / kappa)
        self.q = 0
        self.buffer: list[int] = []
        self.buffer_sum = 0.0
        self.batches: list[HalvingBatch] = []
        self.records: list[dict] = []
        self.clamp_warnings = 0
        self._grams: dict[int, np.ndarray] = {}
        self._inverses: dict[int, np.ndarray] = {}
        self._checkers: dict[int, CheckerSketch] = {}
        self._snapshots: dict[int, np.ndarray] = {}
        # the locator gets its own seed so tests can re-randomize it alone:
        # refresh decisions must depend only on checker randomness
        self.hhset = HeavyHitterSet(
            A,
            seed if locator_seed is None else int(locator_seed),
            reps=self.cfg.locator_reps,
            jl_cols=self.cfg.locator_jl_cols,
            query_const=self.cfg.locator_query_const,
            stream="sparsifier.locator",
        )
        self._rebuild_gram(0)
        if self.instrument:
            self._snapshots[0] = gram(self.A, 1.0 / self.kappa)

    # -- internals ----------------------------------------------------------

    def _rebuild_gram(self, q: int) -> None:
        """Sample a fresh approximate Gram and its checker sketch for batch q."""
        if self.cfg.exact_oracle:
            G = gram(self.A, 1.0 / self.kappa)
        else:
            G, _ = sample_gram(
                self.A,
                np.where(self.dead, 0.0, self.tau) + 1e-300,
                self.eps_checker,
                self.seed,
                c_sample=self.cfg.checker_sample_const,
                stream=f"sparsifier.checker.sample.q{q}",
                ridge=1.0 / self.kappa,
            )
        self._grams[q] = G
        self._inverses[q] = spd_inverse(G)
        self._checkers[q] = build_checker(
            G,
            q,
            self.seed,
            rows=self.cfg.checker_jl_rows,
            exact=self.cfg.exact_oracle,
            stream="sparsifier.checker.jl",
        )

    def _raw_lev_est(self, i: int) -> float:
        """Sketched quadratic form of row i against the latest Gram inverse."""
        z = self._checkers[self.q].Z @ self.A[i]
        return float(z @ z)

    def _refresh_tau(self, idx: np.ndarray) -> None:
        if idx.size == 0:
            return
        Z = self._checkers[self.q]
        self.tau[idx] = estimate_lev(
            Z, self.A[idx], self.n, self.d, inflation=self.cfg.lev_inflation
        )

    # -- operations ---------------------------------------------------------

    def overestimates(self) -> np.ndarray:
        """Current per-row overestimates (dead rows report 0)."""
        return np.where(self.dead, 0.0, self.tau)

    def live_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.dead)

    def halve(self, i: int) -> HalvingBatch | None:
        """Halve row i; flush automatically when the buffered estimate crosses.

        Returns the flushed batch when one was produced, else None.
        """
        i = int(i)
        if not (0 <= i < self.n):
            raise IndexError(f"row {i} out of range")
        if not self.dead[i]:
            # 3/4 of the row's outer product disappears with one halving
            self.buffer_sum += 0.75 * self._raw_lev_est(i)
        self.A[i] *= 0.5
        self.hhset.modify(i, self.A[i])
        self.buffer.append(i)
        if float(self.A[i] @ self.A[i]) <= self._dead_sq:
            self.dead[i] = True
        if self.buffer_sum > self.cfg.flush_threshold:
            return self.flush_batch()
        return None

    def flush_batch(self) -> HalvingBatch:
        """Close the pending buffer into a batch and refresh estimates."""
        if not self.buffer:
            raise ValueError("flush_batch requires a nonempty buffer")
        self.q += 1
        q = self.q
        self._rebuild_gram(q)
        halved = np.asarray(
            np.unique([i for i in self.buffer if not self.dead[i]]), dtype=int
        )
        self._refresh_tau(halved)
        candidates_checked = 0
        if self.cfg.exact_oracle:
            S = None
        else:
            # same draw build_checker made for this q; reuse it on the diffs
            rows = max(int(self.cfg.checker_jl_rows), 1)
            rng = rng_stream(self.seed, f"sparsifier.checker.jl.q{q}")
            S = rng.standard_normal((rows, self.d)) / np.sqrt(rows)
        # dyadic sweep over aligned past intervals (q-2^j, q]
        j = 0
        thresh = self.d / (10.0 * self.n * max(ln(max(self.n, 2)), 1.0))
        while q % (1 << j) == 0 and (1 << j) <= q:
            qhat = q - (1 << j)
            eps = self.eps_checker
            delta = (1.0 + eps) * self._inverses[q] - (1.0 - eps) * self._inverses[qhat]
            droot, wmin = sqrt_psd(delta)
            scale = max(float(np.abs(delta).max()), 1e-300)
            if wmin < -TOL.psd_clamp * scale:
                self.clamp_warnings += 1
            z_diff = droot if S is None else S @ droot
            # querying the sketched form makes the locator output, after its
            # exact per-candidate verification, a superset of the refresh set
            # as a function of checker randomness alone
            cand = self.hhset.query(
                z_diff.T @ z_diff, thresh / (2.0 * self.cfg.locator_safety)
            )
            cand = cand[~self.dead[cand]]
            candidates_checked += int(cand.size)
            if cand.size:
                proj = self.A[cand] @ z_diff.T
                vals = np.einsum("ij,ij->i", proj, proj)
                self._refresh_tau(cand[vals >= thresh])
            j += 1
        batch = HalvingBatch(
            q=q,
            rows=list(self.buffer),
            removed_leverage=self.buffer_sum,
            tau_sum=float(self.overestimates().sum()),
            candidates_checked=candidates_checked,
        )
        self.batches.append(batch)
        if self.instrument:
            self._snapshots[q] = gram(self.A, 1.0 / self.kappa)
        self.records.append(
            {
                "q": q,
                "batch_size": len(self.buffer),
                "removed_leverage": self.buffer_sum,
                "tau_sum": batch.tau_sum,
                "candidates_checked": candidates_checked,
            }
        )
        self.buffer = []
        self.buffer_sum = 0.0
        return batch

    def gram_snapshot(self, q: int) -> np.ndarray:
        """Exact ridge Gram recorded at batch boundary q (instrumented runs)."""
        return self._snapshots[q]


# ---------------------------------------------------------------------------
# fully dynamic wrapper


@dataclass
class _RowRecord:
    level: int
    index: int
    alive: bool
    values: np.ndarray


class DynamicSparsifier:
    """Fully dynamic leverage overestimates via binary bucketing.

    Insert batches land in level ell = (2-adic valuation of the batch
    counter), absorbing all lower levels; deletes apply enough halvings to
    make the row irrelevant (norm factor kappa^{-10}) and drop it from
    future rebuilds.
    """

    def __init__(self, d: int, kappa: float, seed: int, config: SparsifierConfig | None = None):
        if d < 1 or kappa <= 0:
            raise ValueError("need d >= 1 and kappa > 0")
        self.d = int(d)
        self.kappa = float(kappa)
        self.seed = int(seed)
        self.cfg = config or SparsifierConfig()
        self.levels: dict[int, DecrementalSparsifier] = {}
        self._level_ids: dict[int, list[int]] = {}
        self.rows: dict[int, _RowRecord] = {}
        self._next_id = 0
        self._batch_counter = 0
        self.halvings_per_delete = int(np.ceil(10.0 * np.log2(max(self.kappa, 2.0))))

    def dyn_insert(self, rows) -> list[int]:
        """Insert a batch of rows; returns their external ids."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.d:
            raise ValueError(f"rows must have {self.d} columns")
        sq = np.einsum("ij,ij->i", rows, rows)
        if np.any(sq > self.kappa * (1.0 + 1e-12)):
            raise ValueError("row norm bound violated")
        self._batch_counter += 1
        k = self._batch_counter
        ell = (k & -k).bit_length() - 1  # 2-adic valuation
        new_ids = list(range(self._next_id, self._next_id + rows.shape[0]))
        self._next_id += rows.shape[0]
        for rid, v in zip(new_ids, rows):
            self.rows[rid] = _RowRecord(level=-1, index=-1, alive=True, values=np.array(v))
        merged = list(new_ids)
        for lev in range(ell):
            for rid in self._level_ids.pop(lev, []):
                if self.rows[rid].alive:
                    merged.append(rid)
            self.levels.pop(lev, None)
        # rebuilding also folds in whatever currently occupies the target level
        for rid in self._level_ids.pop(ell, []):
            if self.rows[rid].alive:
                merged.append(rid)
        mat = np.stack([self.rows[rid].values for rid in merged])
        sub = DecrementalSparsifier(
            mat,
            self.kappa,
            self.seed + 1000003 * k,
            config=self.cfg,
        )
        self.levels[ell] = sub
        self._level_ids[ell] = merged
        for pos, rid in enumerate(merged):
            self.rows[rid].level = ell
            self.rows[rid].index = pos
        return new_ids

    def dyn_delete(self, rid: int) -> None:
        """Remove a row by external id (a burst of halvings, then dead)."""
        rec = self.rows.get(rid)
        if rec is None or not rec.alive:
            raise KeyError(f"unknown or already-deleted row id {rid}")
        sub = self.levels[rec.level]
        for _ in range(self.halvings_per_delete):
            sub.halve(rec.index)
        sub.dead[rec.index] = True
        rec.alive = False
        rec.values = sub.A[rec.index].copy()

    def overestimates(self) -> dict[int, float]:
        """Map of live external id -> current overestimate."""
        out: dict[int, float] = {}
        for rid, rec in self.rows.items():
            if rec.alive:
                out[rid] = float(self.levels[rec.level].tau[rec.index])
        return out

    def live_matrix(self) -> tuple[np.ndarray, list[int]]:
        """Current live rows (values as maintained, i.e. post-halvings)."""
        ids = [rid for rid, rec in self.rows.items() if rec.alive]
        if not ids:
            return np.zeros((0, self.d)), []
        mat = np.stack([self.levels[self.rows[rid].level].A[self.rows[rid].index] for rid in ids])
        return mat, ids


# function-style aliases matching the operation vocabulary


def decr_init(A, kappa, seed, **kwargs) -> DecrementalSparsifier:
    """Build a DecrementalSparsifier (see the class for kwargs)."""
    return DecrementalSparsifier(A, kappa, seed, **kwargs)


def halve(s: DecrementalSparsifier, i: int):
    """Alias for `DecrementalSparsifier.halve`."""
    return s.halve(i)


def flush_batch(s: DecrementalSparsifier) -> HalvingBatch:
    """Alias for `DecrementalSparsifier.flush_batch`."""
    return s.flush_batch()


def overestimates(s):
    """Alias for `.overestimates()` on either sparsifier flavor."""
    return s.overestimates()


def dyn_insert(s: DynamicSparsifier, rows):
    """Alias for `DynamicSparsifier.dyn_insert`."""
    return s.dyn_insert(rows)


def dyn_delete(s: DynamicSparsifier, rid: int):
    """Alias for `DynamicSparsifier.dyn_delete`."""
    return s.dyn_delete(rid)
