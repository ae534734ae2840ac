"""Leverage-score-driven row sampling and the checker sketch.

`sample_sparsifier` draws T i.i.d. rows proportionally to caller-supplied
leverage overestimates and rescales them so the sampled Gram matrix is an
unbiased, concentrated estimate of the full one. `CheckerSketch` wraps a JL
projection of an (approximate) inverse Gram square root, so a single
matrix-vector product per row yields a constant-factor leverage estimate;
`estimate_lev` inflates that estimate (x10 plus a d/n floor) into a sound
overestimate with slack to spare.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ln, rng_stream
from .linalg import inv_sqrt

__all__ = [
    "WeightedSample",
    "sample_sparsifier",
    "sample_gram",
    "CheckerSketch",
    "build_checker",
    "estimate_lev",
]


def _sample_size(n: int, total: float, eps: float, c_sample: float) -> int:
    T = int(np.ceil(c_sample * eps**-2 * max(ln(max(n, 2)), 1.0) * total))
    return max(T, 1)


@dataclass(frozen=True)
class WeightedSample:
    """T resampled rows with their scale factors.

    ``atilde[j] = scales[j] * A[indices[j]]`` with
    ``scales[j] = (p[indices[j]] * T)^{-1/2}``, so ``atilde.T @ atilde`` is an
    unbiased estimator of ``A.T @ A``.
    """

    indices: np.ndarray
    scales: np.ndarray
    atilde: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.size


def sample_sparsifier(
    A,
    w,
    eps: float,
    seed: int,
    *,
    c_sample: float = 100.0,
    stream: str = "levscore.sample",
) -> WeightedSample:
    """Sample ``T = ceil(c_sample * eps^-2 * ln(n) * sum(w))`` rows of A.

    Parameters
    ----------
    A : (n, d) array
    w : (n,) array
        Nonnegative sampling weights; sound results need
        ``w_i >= a_i^T M^{-1} a_i`` against the caller's reference M.
    eps : float
        Target spectral accuracy, in (0, 1).
    seed, stream :
        RNG stream identity; draws are inverse-CDF on the prefix sums of
        ``p = w / sum(w)`` (the i.i.d. with-replacement model).

    Returns
    -------
    WeightedSample
    """
    A = np.asarray(A, dtype=float)
    w = np.asarray(w, dtype=float)
    n = A.shape[0]
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},)")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("weights sum to zero")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    T = _sample_size(n, total, eps, c_sample)
    p = w / total
    rng = rng_stream(seed, stream)
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(T), side="right")
    idx = np.minimum(idx, n - 1)
    scales = 1.0 / np.sqrt(p[idx] * T)
    atilde = A[idx] * scales[:, None]
    return WeightedSample(idx, scales, atilde)


def sample_gram(
    A,
    w,
    eps: float,
    seed: int,
    *,
    c_sample: float = 100.0,
    stream: str = "levscore.sample",
    ridge: float = 0.0,
) -> tuple[np.ndarray, int]:
    """The Gram matrix of a `sample_sparsifier` draw, without the T rows.

    Aggregates the same i.i.d. with-replacement model through one batched
    multinomial: the returned matrix is distributed exactly as
    ``gram(sample_sparsifier(A, w, eps, ...).atilde, ridge)`` while touching
    each distinct row once, so the cost is independent of T. Returns the
    matrix and T.
    """
    A = np.asarray(A, dtype=float)
    w = np.asarray(w, dtype=float)
    n = A.shape[0]
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},)")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("weights sum to zero")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    T = _sample_size(n, total, eps, c_sample)
    p = w / total
    rng = rng_stream(seed, stream)
    counts = rng.multinomial(T, p / p.sum())
    touched = np.flatnonzero(counts)
    rows = A[touched]
    G = (rows * (counts[touched] / (p[touched] * T))[:, None]).T @ rows
    if ridge:
        G[np.diag_indices(A.shape[1])] += ridge
    return 0.5 * (G + G.T), T


@dataclass(frozen=True)
class CheckerSketch:
    """Z = S G^{-1/2} for a (sampled) Gram matrix G; ||Z a||^2 ~ a^T G^{-1} a."""

    Z: np.ndarray
    batch_id: int
    seed: int

    @property
    def rows(self) -> int:
        return self.Z.shape[0]


def build_checker(
    gram_matrix,
    batch_id: int,
    seed: int,
    *,
    rows: int = 48,
    exact: bool = False,
    stream: str = "levscore.checker",
) -> CheckerSketch:
    """Sketch the inverse square root of a Gram matrix.

    With ``exact=True`` the projection is skipped entirely (Z = G^{-1/2}),
    which turns every estimate into the exact quadratic form; used for
    differential testing of the randomized paths.
    """
    W = inv_sqrt(gram_matrix)
    if exact:
        return CheckerSketch(W, int(batch_id), int(seed))
    rng = rng_stream(seed, f"{stream}.q{batch_id}")
    S = rng.standard_normal((max(int(rows), 1), W.shape[0])) / np.sqrt(max(int(rows), 1))
    return CheckerSketch(S @ W, int(batch_id), int(seed))


def estimate_lev(Z: CheckerSketch, a, n: int, d: int, *, inflation: float = 10.0):
    """Leverage overestimate ``d/n + inflation * ||Z a||^2``.

    Accepts a single d-vector (returns a float) or an (k, d) stack of rows
    (returns a (k,) array). Always at least d/n.
    """
    a = np.asarray(a, dtype=float)
    floor = d / n
    if a.ndim == 1:
        return float(floor + inflation * np.sum((Z.Z @ a) ** 2))
    za = a @ Z.Z.T
    return floor + inflation * np.einsum("ij,ij->i", za, za)
