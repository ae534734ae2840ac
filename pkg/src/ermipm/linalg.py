"""Dense symmetric linear algebra kernels.

Gram matrices, Cholesky factorizations, symmetric square roots and inverse
square roots, Loewner-order comparisons, exact ridge leverage scores, and
log-determinants. Plain 2-d float64 arrays (row-major) are the matrix type
throughout; everything is a pure function of its inputs and serves as the
deterministic ground truth that all randomized modules are tested against.

Symmetric eigenproblems go through LAPACK's symmetric solver (``eigh``),
which at these sizes (d up to a few hundred) is deterministic for fixed
input bits.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.linalg import solve_triangular

from .config import TOL

__all__ = [
    "NotPositiveDefiniteError",
    "SpdFactorization",
    "gram",
    "spd_factor",
    "spd_inverse",
    "inv_sqrt",
    "sqrt_psd",
    "loewner_approx",
    "exact_leverage",
    "logdet",
]


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix required to be SPD is not.

    Attributes
    ----------
    pivot_index : int or None
        Index of the failing Cholesky pivot (or offending eigenvalue), when
        known.
    """

    def __init__(self, message: str, pivot_index: int | None = None):
        super().__init__(message)
        self.pivot_index = pivot_index


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {A.shape}")
    if A.size and not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def _as_symmetric(G) -> np.ndarray:
    G = _as_matrix(G)
    n, m = G.shape
    if n != m:
        raise ValueError(f"expected a square matrix, got {G.shape}")
    scale = max(1.0, float(np.abs(G).max()) if G.size else 0.0)
    if G.size and float(np.abs(G - G.T).max()) > TOL.sym_rel * scale:
        raise ValueError("matrix is not symmetric to working tolerance")
    # symmetrize exactly so eigh/cholesky see bitwise-symmetric input
    return 0.5 * (G + G.T)


def gram(A, ridge: float = 0.0) -> np.ndarray:
    """Ridge Gram matrix ``A.T @ A + ridge * I``.

    Parameters
    ----------
    A : (n, d) array
        Row matrix; n may be 0.
    ridge : float
        Nonnegative diagonal regularizer.

    Returns
    -------
    (d, d) array, exactly symmetrized.
    """
    A = _as_matrix(A)
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    d = A.shape[1]
    G = A.T @ A
    if ridge:
        G[np.diag_indices(d)] += ridge
    return 0.5 * (G + G.T)


class SpdFactorization:
    """Cholesky factorization G = L L^T with solve capability.

    The factor is computed column by column so that a failure reports the
    exact pivot index. Instances are immutable after construction.
    """

    def __init__(self, G):
        G = _as_symmetric(G)
        d = G.shape[0]
        try:
            L = scipy.linalg.cholesky(G, lower=True, check_finite=False) if d else G.copy()
        except scipy.linalg.LinAlgError:
            # redo column by column purely to name the failing pivot
            L = np.array(G, copy=True)
            for j in range(d):
                pivot = L[j, j] - L[j, :j] @ L[j, :j]
                if not pivot > 0.0 or not np.isfinite(pivot):
                    raise NotPositiveDefiniteError(
                        f"matrix is not positive definite (pivot {j} = {pivot:.3e})",
                        pivot_index=j,
                    ) from None
                L[j, j] = np.sqrt(pivot)
                if j + 1 < d:
                    L[j + 1 :, j] = (L[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
        self.dimension = d
        self._L = np.tril(L)
        self._L.setflags(write=False)

    @property
    def factor(self) -> np.ndarray:
        """Lower-triangular factor L."""
        return self._L

    def solve(self, b) -> np.ndarray:
        """Solve G u = b for vector or matrix right-hand sides."""
        b = np.asarray(b, dtype=float)
        if self.dimension == 0:
            return np.zeros_like(b)
        z = solve_triangular(self._L, b, lower=True, check_finite=False)
        return solve_triangular(self._L.T, z, lower=False, check_finite=False)

    def half_solve(self, b) -> np.ndarray:
        """Solve L z = b, so that ``norm(z)^2 = b.T G^{-1} b``."""
        b = np.asarray(b, dtype=float)
        if self.dimension == 0:
            return np.zeros_like(b)
        return solve_triangular(self._L, b, lower=True, check_finite=False)

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self._L)))) if self.dimension else 0.0


def spd_factor(G) -> SpdFactorization:
    """Factor a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        With the failing pivot index when G is not PD.
    """
    return SpdFactorization(G)


def spd_inverse(G) -> np.ndarray:
    """Explicit symmetric inverse of an SPD matrix via its factorization."""
    F = spd_factor(G)
    inv = F.solve(np.eye(F.dimension))
    return 0.5 * (inv + inv.T)


def inv_sqrt(G) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix.

    Returns W with ``W @ G @ W = I`` to working precision, computed from the
    symmetric eigendecomposition.

    Raises
    ------
    NotPositiveDefiniteError
        If any eigenvalue is nonpositive.
    """
    G = _as_symmetric(G)
    w, V = np.linalg.eigh(G)
    if G.size and w[0] <= 0.0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (min eigenvalue {w[0]:.3e})",
            pivot_index=int(np.argmin(w)),
        )
    W = (V / np.sqrt(w)) @ V.T
    return 0.5 * (W + W.T)


def sqrt_psd(G) -> tuple[np.ndarray, float]:
    """Symmetric square root of a nearly-PSD matrix.

    Negative eigenvalues are clamped to zero; the caller inspects the
    returned minimum eigenvalue to decide whether the clamp was noise or an
    error (policies differ per call site).

    Returns
    -------
    (S, min_eig) : ((d, d) array, float)
        S symmetric with ``S @ S`` equal to the clamped reconstruction; and
        the smallest raw eigenvalue before clamping.
    """
    G = _as_symmetric(G)
    if not G.size:
        return G.copy(), 0.0
    w, V = np.linalg.eigh(G)
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (S + S.T), float(w[0])


def loewner_approx(M, N, alpha: float) -> bool:
    """Two-sided multiplicative Loewner comparison.

    True iff every eigenvalue of ``M^{-1/2} N M^{-1/2}`` lies in
    ``[exp(-alpha), exp(alpha)]`` (up to a 1e-12 relative endpoint slack).
    M must be positive definite; the relation is symmetric in M and N for
    PD pairs, which tests assert.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    W = inv_sqrt(M)
    N = _as_symmetric(N)
    if N.shape != W.shape:
        raise ValueError(f"dimension mismatch: {N.shape} vs {W.shape}")
    vals = np.linalg.eigvalsh(W @ N @ W)
    lo = np.exp(-alpha) * (1.0 - TOL.loewner_slack)
    hi = np.exp(alpha) * (1.0 + TOL.loewner_slack)
    return bool(vals.size == 0 or (vals[0] >= lo and vals[-1] <= hi))


def exact_leverage(A, ridge: float = 0.0) -> np.ndarray:
    """Exact ridge leverage scores ``tau_i = a_i^T (A^T A + ridge I)^{-1} a_i``.

    Parameters
    ----------
    A : (n, d) array
    ridge : float
        Nonnegative. With ridge 0 the Gram matrix must be nonsingular, and
        for full-column-rank A the scores sum to d.

    Returns
    -------
    (n,) array with entries in [0, 1] up to roundoff.
    """
    A = _as_matrix(A)
    F = spd_factor(gram(A, ridge))
    if A.shape[0] == 0:
        return np.zeros(0)
    Y = F.half_solve(A.T)
    return np.einsum("ji,ji->i", Y, Y)


def logdet(G) -> float:
    """log det of an SPD matrix, via Cholesky."""
    return spd_factor(G).logdet()
