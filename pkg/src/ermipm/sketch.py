"""Randomized projections: JL sketches and ell_2 heavy-hitter machinery.

Three layers:

- `JlSketch`: a dense Gaussian projection, the norm-preserving workhorse.
- `HhSketch`: a count-sketch (repeated signed hashing into buckets) over
  n coordinates, with median-of-estimates recovery of coordinates whose
  magnitude clears a threshold fraction of the vector norm.
- `HeavyHitterSet`: a collection of n rows a_i supporting single-row
  replacement and queries for all rows with large quadratic form
  ``a_i^T M a_i >= delta`` against a caller-supplied SPD matrix, via a lazily
  materialized ladder of HhSketch instances at geometrically spaced
  thresholds plus an exact per-candidate verification pass.

Recovery is one-sided by design: candidate sets may over-report, and the
final verification filters them, so callers see exactly the supra-threshold
rows with high probability. The structure assumes a non-adaptive caller:
query inputs must not depend on its internal randomness (upstream callers
isolate it behind checker/locator stream separation).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import TOL, ln, rng_stream
from .linalg import sqrt_psd

__all__ = [
    "JlSketch",
    "jl_build",
    "jl_apply",
    "HhSketch",
    "hh_build",
    "hh_recover",
    "HeavyHitterSet",
    "hhset_modify",
    "hhset_query",
]


# ---------------------------------------------------------------------------
# JL sketch


@dataclass(frozen=True)
class JlSketch:
    """Gaussian projection S: rows x d, entries N(0, 1/rows)."""

    S: np.ndarray
    eps: float
    seed: int

    @property
    def rows(self) -> int:
        return self.S.shape[0]


def jl_build(
    d: int,
    seed: int,
    *,
    rows: int | None = None,
    eps: float = 0.5,
    n: int = 2,
    c_jl: float = 8.0,
    stream: str = "jl",
) -> JlSketch:
    """Build a JL sketch for d-dimensional vectors.

    Either pass `rows` directly, or let it default to
    ``ceil(c_jl * ln(n) / eps^2)`` for a target universe size n and
    distortion eps.
    """
    if rows is None:
        rows = int(np.ceil(c_jl * max(ln(max(n, 2)), 1.0) / eps**2))
    rows = max(int(rows), 1)
    rng = rng_stream(seed, stream)
    S = rng.standard_normal((rows, d)) / np.sqrt(rows)
    S.setflags(write=False)
    return JlSketch(S, float(eps), int(seed))


def jl_apply(sk: JlSketch, v) -> np.ndarray:
    """Project a vector (or stack of columns) through the sketch."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != sk.S.shape[1]:
        raise ValueError(f"dimension mismatch: sketch expects {sk.S.shape[1]}, got {v.shape[0]}")
    return sk.S @ v


# ---------------------------------------------------------------------------
# count-sketch heavy hitter for a single n-vector


@dataclass(frozen=True)
class HhSketch:
    """Count-sketch with `reps` repetitions of `buckets` signed buckets.

    The implied measurement matrix Q has reps*buckets rows and n columns,
    entries in {-1, 0, +1}, exactly `reps` nonzeros per column.
    """

    eps_hh: float
    n: int
    reps: int
    buckets: int
    bucket_of: np.ndarray  # (reps, n) int32
    sign_of: np.ndarray  # (reps, n) float, +-1
    seed: int

    @property
    def out_dim(self) -> int:
        return self.reps * self.buckets

    def dense_q(self) -> np.ndarray:
        """Materialize Q (tests only; quadratic memory)."""
        Q = np.zeros((self.out_dim, self.n))
        cols = np.arange(self.n)
        for r in range(self.reps):
            Q[r * self.buckets + self.bucket_of[r], cols] = self.sign_of[r]
        return Q

    def apply(self, x) -> np.ndarray:
        """y = Q x for an n-vector (or (n, k) stack, applied columnwise)."""
        x = np.asarray(x, dtype=float)
        flat = (self.bucket_of + (np.arange(self.reps) * self.buckets)[:, None]).ravel()
        if x.ndim == 1:
            w = (self.sign_of * x).ravel()
            return np.bincount(flat, weights=w, minlength=self.out_dim)
        out = np.empty((self.out_dim, x.shape[1]))
        for j in range(x.shape[1]):
            w = (self.sign_of * x[:, j]).ravel()
            out[:, j] = np.bincount(flat, weights=w, minlength=self.out_dim)
        return out

    def estimates(self, y) -> np.ndarray:
        """Median-of-reps magnitude estimate for every coordinate, given y = Qx."""
        y = np.asarray(y, dtype=float)
        per_rep = y.reshape(self.reps, self.buckets)
        picked = per_rep[np.arange(self.reps)[:, None], self.bucket_of]
        return np.median(self.sign_of * picked, axis=0)


def hh_build(
    eps_hh: float,
    n: int,
    seed: int,
    *,
    c_hh: float = 8.0,
    reps: int | None = None,
    buckets: int | None = None,
    stream: str = "hh",
) -> HhSketch:
    """Build a count-sketch for n coordinates at threshold eps_hh.

    eps_hh outside (0, 1/ln n) is clamped to that interval with a warning.
    Bucket count ceil(c_hh / eps_hh^2) caps at n (beyond that the hashing is
    already as fine as the identity); repetitions default to ceil(ln(n)^3).
    Explicit `reps`/`buckets` override the formulas.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    hi = 1.0 / max(ln(max(n, 2)), 1e-9)
    if not (0.0 < eps_hh < hi):
        clamped = min(max(eps_hh, 1e-9), hi * (1.0 - 1e-12))
        warnings.warn(
            f"eps_hh={eps_hh:.3g} outside (0, {hi:.3g}); clamped to {clamped:.3g}",
            stacklevel=2,
        )
        eps_hh = clamped
    if reps is None:
        reps = int(np.ceil(max(ln(max(n, 2)), 1.0) ** 3))
    reps = max(int(reps), 1)
    if buckets is None:
        buckets = int(min(np.ceil(c_hh / eps_hh**2), n))
    buckets = max(int(buckets), 1)
    rng = rng_stream(seed, stream)
    bucket_of = rng.integers(0, buckets, size=(reps, n), dtype=np.int32)
    sign_of = rng.integers(0, 2, size=(reps, n)).astype(float) * 2.0 - 1.0
    bucket_of.setflags(write=False)
    sign_of.setflags(write=False)
    return HhSketch(float(eps_hh), int(n), reps, buckets, bucket_of, sign_of, int(seed))


def hh_recover(sk: HhSketch, y, *, cap_const: float = 16.0) -> np.ndarray:
    """Candidate coordinates with |x_i| plausibly >= eps_hh, from y = Qx.

    Caller contract: ||x||_2 <= 1. Returns indices whose median estimate
    clears eps_hh / 2, largest first, capped at ceil(cap_const / eps_hh^2)
    (one-sided: may over-report, must not miss supra-threshold coordinates
    except with small probability).
    """
    est = np.abs(sk.estimates(y))
    cand = np.flatnonzero(est >= 0.5 * sk.eps_hh)
    cap = int(np.ceil(cap_const / sk.eps_hh**2))
    if cand.size > cap:
        order = np.argsort(est[cand])[::-1]
        cand = cand[order[:cap]]
    return np.sort(cand)


# ---------------------------------------------------------------------------
# row collection with quadratic-form-threshold queries


class LadderRung:
    """One materialized threshold level: a sketch and its maintained product Q A."""

    def __init__(self, sk: HhSketch, A: np.ndarray):
        self.sk = sk
        self.qa = sk.apply(A)  # (out_dim, d)

    def modify(self, i: int, delta_row: np.ndarray) -> None:
        rows = self.sk.bucket_of[:, i] + np.arange(self.sk.reps) * self.sk.buckets
        self.qa[rows] += self.sk.sign_of[:, i][:, None] * delta_row[None, :]


class HeavyHitterSet:
    """n stored rows with Modify and quadratic-form-threshold Query.

    Query(M, delta) returns, with high probability, exactly the rows with
    ``a_i^T M a_i >= delta``: sketched candidate generation followed by exact
    verification. Thresholds snap down a ladder of count-sketches at powers
    of 0.9; rungs materialize on first use and are then maintained
    incrementally. Queries whose implied coordinate threshold falls below the
    ladder floor 1/n degrade to an exact scan (the sketch's candidate cap
    would exceed n there anyway), unless `force_sketch` pins them to the
    floor rung.
    """

    LADDER_BASE = 0.9

    def __init__(
        self,
        A,
        seed: int,
        *,
        c_hh: float = 8.0,
        reps: int | None = None,
        jl_cols: int = 24,
        query_const: float = 0.2,
        force_sketch: bool = False,
        stream: str = "hhset",
    ):
        A = np.array(A, dtype=float)
        if A.ndim != 2:
            raise ValueError("rows must form a 2-d array")
        self.A = A
        self.n, self.d = A.shape
        self.seed = int(seed)
        self.c_hh = float(c_hh)
        self.reps = reps
        self.jl_cols = int(jl_cols)
        self.query_const = float(query_const)
        self.force_sketch = bool(force_sketch)
        self._stream = stream
        self._rungs: dict[int, LadderRung] = {}
        self._query_counter = 0
        # legal rung band: eps must sit in (1/n, 1/ln n)
        base = self.LADDER_BASE
        hi = 1.0 / max(ln(max(self.n, 2)), 1e-9)
        self.min_rung = max(int(np.floor(ln(hi) / ln(base))) + 1, 0)
        self.floor_rung = max(
            int(np.floor(ln(self.n) / -ln(base))) if self.n > 1 else 0, self.min_rung
        )
        # fixed few-bucket sketch used only to estimate query column norms
        self._probe = LadderRung(
            hh_build(
                base**self.floor_rung,
                self.n,
                self.seed,
                reps=self.reps if self.reps is not None else 32,
                buckets=8,
                stream=f"{stream}.probe",
            ),
            self.A,
        )

    # -- internals ---------------------------------------------------------

    def _rung(self, j: int) -> LadderRung:
        if j not in self._rungs:
            sk = hh_build(
                self.LADDER_BASE**j,
                self.n,
                self.seed,
                c_hh=self.c_hh,
                reps=self.reps,
                stream=f"{self._stream}.rung{j}",
            )
            self._rungs[j] = LadderRung(sk, self.A)
        return self._rungs[j]

    def _exact_scan(self, Msqrt: np.ndarray, delta: float) -> np.ndarray:
        q = np.einsum("ij,ij->i", self.A @ Msqrt, self.A @ Msqrt)
        return np.flatnonzero(q >= delta)

    # -- operations --------------------------------------------------------

    def modify(self, i: int, v) -> None:
        """Replace row i with v; all materialized rung products update in place."""
        i = int(i)
        if not (0 <= i < self.n):
            raise IndexError(f"row index {i} out of range [0, {self.n})")
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d,):
            raise ValueError(f"row must have shape ({self.d},)")
        delta = v - self.A[i]
        self._probe.modify(i, delta)
        for rung in self._rungs.values():
            rung.modify(i, delta)
        self.A[i] = v

    def query(self, M, delta: float) -> np.ndarray:
        """Indices of all rows with ``a_i^T M a_i >= delta`` (whp exact).

        M must be symmetric PSD; delta positive.
        """
        if delta <= 0:
            raise ValueError("delta must be positive")
        M = np.asarray(M, dtype=float)
        Msqrt, wmin = sqrt_psd(M)
        scale = float(np.abs(M).max()) if M.size else 0.0
        if wmin < -TOL.psd_clamp * max(scale, 1.0):
            raise ValueError(f"M is not PSD (min eigenvalue {wmin:.3e})")
        self._query_counter += 1
        rng = rng_stream(self.seed, f"{self._stream}.query{self._query_counter}")
        cols = self.jl_cols
        # sketched directions: columns of M^{1/2} S^T for a fresh JL S
        N = Msqrt @ (rng.standard_normal((cols, self.d)) / np.sqrt(cols)).T
        probe = self._probe
        ys = probe.qa @ N  # (out_dim, cols)
        per_rep = ys.reshape(probe.sk.reps, probe.sk.buckets, cols)
        col_sq = np.mean(np.sum(per_rep**2, axis=1), axis=0)  # ~ ||x_j||^2
        mu_hat = float(np.sum(col_sq))
        if mu_hat <= 0.0:
            return np.zeros(0, dtype=int)
        eps_needed = self.query_const * np.sqrt(delta / mu_hat)
        j = int(np.ceil(ln(max(eps_needed, 1e-300)) / ln(self.LADDER_BASE)))
        if j > self.floor_rung and not self.force_sketch:
            # below the ladder floor the candidate cap exceeds n: scan exactly
            return self._exact_scan(Msqrt, delta)
        j = int(np.clip(j, self.min_rung, self.floor_rung))
        rung = self._rung(j)
        ys = rung.qa @ N
        cand: set[int] = set()
        for c in range(cols):
            norm_est = np.sqrt(max(col_sq[c], 1e-300))
            cand.update(hh_recover(rung.sk, ys[:, c] / norm_est).tolist())
        if not cand:
            return np.zeros(0, dtype=int)
        idx = np.fromiter(cand, dtype=int)
        rowsM = self.A[idx] @ Msqrt
        q = np.einsum("ij,ij->i", rowsM, rowsM)
        return np.sort(idx[q >= delta])


def hhset_modify(h: HeavyHitterSet, i: int, v) -> HeavyHitterSet:
    """Functional-style alias for `HeavyHitterSet.modify`; returns h."""
    h.modify(i, v)
    return h


def hhset_query(h: HeavyHitterSet, M, delta: float) -> np.ndarray:
    """Alias for `HeavyHitterSet.query`."""
    return h.query(M, delta)
