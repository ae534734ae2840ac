import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ermipm import (
    NotPositiveDefiniteError,
    exact_leverage,
    gram,
    inv_sqrt,
    loewner_approx,
    logdet,
    spd_factor,
    spd_inverse,
    sqrt_psd,
)


def random_spd(d, seed, cond=50.0):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    w = np.geomspace(1.0, cond, d)
    return (Q * w) @ Q.T


def test_gram_matches_definition(rng):
    A = rng.standard_normal((17, 5))
    G = gram(A, ridge=0.3)
    ref = A.T @ A + 0.3 * np.eye(5)
    assert np.allclose(G, ref, atol=1e-12)
    assert np.array_equal(G, G.T)  # exactly symmetrized


def test_gram_empty_and_bad_ridge(rng):
    G = gram(np.zeros((0, 4)), ridge=2.0)
    assert np.allclose(G, 2.0 * np.eye(4))
    with pytest.raises(ValueError):
        gram(np.eye(3), ridge=-1.0)


def test_spd_factor_solve_roundtrip(rng):
    G = random_spd(8, 1)
    F = spd_factor(G)
    b = rng.standard_normal(8)
    assert np.allclose(G @ F.solve(b), b, atol=1e-9)
    B = rng.standard_normal((8, 3))
    assert np.allclose(G @ F.solve(B), B, atol=1e-9)
    L = F.factor
    assert np.allclose(np.tril(L), L)
    assert np.allclose(L @ L.T, G, atol=1e-10)


def test_half_solve_gives_inverse_quadratic_form(rng):
    G = random_spd(6, 2)
    F = spd_factor(G)
    b = rng.standard_normal(6)
    z = F.half_solve(b)
    assert np.isclose(z @ z, b @ np.linalg.solve(G, b), rtol=1e-10)


def test_factor_rejects_indefinite_with_pivot_index():
    G = np.diag([1.0, -2.0, 3.0])
    with pytest.raises(NotPositiveDefiniteError) as ei:
        spd_factor(G)
    assert ei.value.pivot_index == 1


def test_factor_rejects_asymmetric():
    M = np.array([[1.0, 0.5], [0.1, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        spd_factor(M)


def test_spd_inverse_and_logdet():
    G = random_spd(7, 3)
    inv = spd_inverse(G)
    assert np.allclose(inv @ G, np.eye(7), atol=1e-9)
    assert np.isclose(logdet(G), np.linalg.slogdet(G)[1], rtol=1e-10)


def test_inv_sqrt_whitens():
    G = random_spd(5, 4)
    W = inv_sqrt(G)
    assert np.allclose(W @ G @ W, np.eye(5), atol=1e-9)
    with pytest.raises(NotPositiveDefiniteError):
        inv_sqrt(np.diag([1.0, 0.0]))


def test_sqrt_psd_clamps_and_reports():
    G = random_spd(5, 5)
    S, lo = sqrt_psd(G)
    assert np.allclose(S @ S, G, atol=1e-9)
    assert lo > 0
    # indefinite input: clamped reconstruction, negative min eigenvalue out
    M = np.diag([2.0, -1e-3])
    S2, lo2 = sqrt_psd(M)
    assert np.isclose(lo2, -1e-3)
    assert np.allclose(S2 @ S2, np.diag([2.0, 0.0]), atol=1e-12)


def test_loewner_approx_detects_scaling():
    G = random_spd(6, 6)
    assert loewner_approx(G, G * np.exp(0.09), 0.1)
    assert not loewner_approx(G, G * np.exp(0.2), 0.1)
    assert loewner_approx(G, G, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.5))
def test_loewner_approx_symmetric_for_pd_pairs(seed, alpha):
    rng = np.random.default_rng(seed)
    M = random_spd(4, seed)
    E = rng.standard_normal((4, 4)) * 0.01
    N = M + 0.5 * (E + E.T) + 0.1 * np.eye(4)
    assert loewner_approx(M, N, alpha) == loewner_approx(N, M, alpha)


def test_exact_leverage_matches_hat_matrix(rng):
    A = rng.standard_normal((30, 4))
    lev = exact_leverage(A)
    H = A @ np.linalg.solve(A.T @ A, A.T)
    assert np.allclose(lev, np.diag(H), atol=1e-10)
    assert np.isclose(lev.sum(), 4.0, rtol=1e-9)
    assert np.all(lev <= 1.0 + 1e-12) and np.all(lev >= 0.0)


def test_exact_leverage_ridge_shrinks(rng):
    A = rng.standard_normal((20, 3))
    assert np.all(exact_leverage(A, ridge=1.0) < exact_leverage(A) + 1e-12)
    assert exact_leverage(np.zeros((0, 3)), ridge=1.0).shape == (0,)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_spd_solve_property(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 9))
    G = random_spd(d, seed + 1, cond=200.0)
    b = rng.standard_normal(d)
    u = spd_factor(G).solve(b)
    assert np.allclose(G @ u, b, rtol=1e-7, atol=1e-8)
