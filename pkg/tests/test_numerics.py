import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stabkit.errors import DimensionError, DomainError, ShapeError
from stabkit.numerics import (
    NotSPD,
    QuadSpec,
    chol_spd,
    congruence_integral,
    expm,
    integrate_mat,
    is_psd,
    metric_norm,
    psd_margin,
    solve_lyapunov,
    sym_pencil_extremes,
)

finite = st.floats(-1.0, 1.0, allow_nan=False, allow_infinity=False)


def small_matrix(n, scale=2.0):
    # entries in [-1, 1] scaled so that the spectral norm is at most `scale`
    return arrays(np.float64, (n, n), elements=finite).map(lambda M: M * scale / max(n, 1))


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# --------------------------------------------------------------------------
# expm


def test_expm_zero_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3)), 7.3), np.eye(3))


def test_expm_scalar():
    assert expm([[-1.0]], 1.0)[0, 0] == pytest.approx(0.36787944117144233, rel=1e-14)


def test_expm_nilpotent_exact():
    assert np.allclose(expm([[0.0, 1.0], [0.0, 0.0]], 1.0), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15, rtol=0)


def test_expm_rotation():
    theta = 2.5
    E = expm([[0.0, -1.0], [1.0, 0.0]], theta)
    R = [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    assert rel(E, np.array(R)) < 1e-13


def test_expm_matches_eigendecomposition_at_large_norm(rng):
    # symmetric so the eigendecomposition is an accurate oracle; |tA| = 50
    S = rng.standard_normal((5, 5))
    S = S + S.T
    S *= 50.0 / np.linalg.norm(S, 2)
    w, V = np.linalg.eigh(S)
    oracle = V @ np.diag(np.exp(w)) @ V.T
    assert rel(expm(S), oracle) < 1e-12


def test_expm_rejects_bad_input():
    with pytest.raises(DimensionError):
        expm(np.zeros((2, 3)))
    with pytest.raises(DomainError):
        expm([[np.nan]])


@given(small_matrix(6), st.floats(-3, 3), st.floats(-3, 3))
def test_expm_group_property(A, s, t):
    lhs = expm(A, s) @ expm(A, t)
    assert rel(lhs, expm(A, s + t)) < 1e-9


@given(small_matrix(6), st.floats(-3, 3))
def test_expm_inverse(A, t):
    assert rel(expm(A, t) @ expm(A, -t), np.eye(6)) < 1e-9


# --------------------------------------------------------------------------
# quadrature


def test_integrate_constant():
    for spec in (QuadSpec("simpson", 4), QuadSpec("gauss", 3, 5)):
        val, err = integrate_mat(lambda s: np.eye(2), 0.0, 1.0, spec)
        assert np.allclose(val, np.eye(2), atol=1e-15)
        assert err < 1e-14


def test_integrate_exponential():
    val, _ = integrate_mat(lambda s: [[math.exp(-3 * s)]], 0.0, 1.0, QuadSpec("simpson", 64))
    assert val[0, 0] == pytest.approx((1 - math.exp(-3)) / 3, abs=1e-9)


def test_integrate_cubic_exact():
    val, _ = integrate_mat(lambda s: [[s]], 0.0, 2.0)
    assert val[0, 0] == pytest.approx(2.0, abs=1e-14)
    val, _ = integrate_mat(lambda s: [[s**3]], 0.0, 2.0, QuadSpec("simpson", 1))
    assert val[0, 0] == pytest.approx(4.0, abs=1e-14)


def test_integrate_shape_errors():
    with pytest.raises(ShapeError):
        integrate_mat(lambda s: np.eye(2) if s < 0.5 else np.eye(3), 0.0, 1.0, QuadSpec("simpson", 2))
    with pytest.raises(DomainError):
        integrate_mat(lambda s: np.eye(2), 1.0, 0.0)


@pytest.mark.parametrize("spec", [QuadSpec("simpson", 8), QuadSpec("gauss", 4, 2)])
def test_panel_doubling_shrinks_error(spec):
    f = lambda s: np.array([[math.exp(2 * s) * math.cos(3 * s), s], [math.sin(s), 1.0 / (1 + s)]])
    _, e1 = integrate_mat(f, 0.0, 2.0, spec)
    _, e2 = integrate_mat(f, 0.0, 2.0, spec.doubled())
    assert e1 / e2 >= 8.0


def test_quadspec_validation():
    with pytest.raises(DomainError):
        QuadSpec("trapezoid", 4)
    with pytest.raises(DomainError):
        QuadSpec("simpson", 0)
    with pytest.raises(DomainError):
        QuadSpec("gauss", 4, 11)


def test_congruence_integral_scalar():
    # int_0^1 e^{2 a s} ds with a = -1
    val, err = congruence_integral(np.array([[-1.0]]), np.array([[1.0]]), 0.0, 1.0)
    assert val[0, 0] == pytest.approx((1 - math.exp(-2)) / 2, rel=1e-10)
    assert err < 1e-9


def test_congruence_integral_weight():
    w = lambda s: 1.0 - s
    val, _ = congruence_integral(np.zeros((1, 1)), np.array([[2.0]]), 0.0, 1.0, weight=w)
    assert val[0, 0] == pytest.approx(1.0, abs=1e-14)


# --------------------------------------------------------------------------
# Cholesky and pencils


def test_chol_identity():
    assert np.array_equal(chol_spd(np.eye(3)), np.eye(3))


def test_chol_hand_example():
    assert np.allclose(chol_spd([[4.0, 2.0], [2.0, 2.0]]), [[2.0, 0.0], [1.0, 1.0]])


def test_chol_reports_failed_pivot():
    out = chol_spd([[1.0, 2.0], [2.0, 1.0]])
    assert isinstance(out, NotSPD)
    assert out.pivot == 2
    assert not out


def test_chol_rejects_asymmetric():
    with pytest.raises(DomainError):
        chol_spd([[1.0, 0.5], [0.0, 1.0]])


@given(arrays(np.float64, (5, 5), elements=finite))
def test_chol_reconstruction(G):
    M = G @ G.T + 0.1 * np.eye(5)
    L = chol_spd(M)
    assert np.max(np.abs(L @ L.T - M)) <= 1e-10 * np.linalg.norm(M, 2)


@pytest.mark.parametrize(
    "S, M, expected",
    [
        (2 * np.eye(2), np.eye(2), (2.0, 2.0)),
        (np.diag([1.0, 5.0]), np.eye(2), (1.0, 5.0)),
        (np.diag([2.0, 6.0]), np.diag([2.0, 2.0]), (1.0, 3.0)),
    ],
)
def test_pencil_extremes_examples(S, M, expected):
    assert sym_pencil_extremes(S, M) == pytest.approx(expected, rel=1e-14)


def test_pencil_rejects_indefinite_metric():
    with pytest.raises(DomainError):
        sym_pencil_extremes(np.eye(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


@given(arrays(np.float64, (4, 4), elements=finite), arrays(np.float64, (4, 4), elements=finite))
def test_pencil_congruence_invariance(G, H):
    S = G + G.T
    M = H @ H.T + np.eye(4)
    C = np.eye(4) + 0.4 * G
    if np.linalg.cond(C) > 1e3:  # keep the congruence well conditioned
        C = np.eye(4) + 0.1 * G
    base = sym_pencil_extremes(S, M)
    moved = sym_pencil_extremes(C.T @ S @ C, C.T @ M @ C)
    assert moved == pytest.approx(base, abs=1e-7 * max(1.0, *map(abs, base)))


def test_psd_helpers():
    assert is_psd(np.diag([0.0, 1.0]))
    assert not is_psd(np.diag([-1e-3, 1.0]))
    assert psd_margin(np.diag([-1.0, 100.0]), np.eye(2)) == pytest.approx(-0.01)


def test_metric_norm_against_change_of_basis(rng):
    X = rng.standard_normal((3, 3))
    G = rng.standard_normal((3, 3))
    M = G @ G.T + np.eye(3)
    L = np.linalg.cholesky(M)
    # |X|_M = |L^T X L^{-T}|_2
    oracle = np.linalg.norm(L.T @ X @ np.linalg.inv(L.T), 2)
    assert metric_norm(X, M) == pytest.approx(oracle, rel=1e-12)


# --------------------------------------------------------------------------
# Lyapunov


def test_lyapunov_scalar():
    assert solve_lyapunov([[-1.0]], [[2.0]])[0, 0] == pytest.approx(1.0)


def test_lyapunov_identity():
    assert np.allclose(solve_lyapunov(-np.eye(2), np.eye(2)), 0.5 * np.eye(2))


def test_lyapunov_triangular_hand_solution():
    # solved by hand from the three scalar equations of the symmetric system
    W = solve_lyapunov([[-1.0, 1.0], [0.0, -2.0]], np.eye(2))
    assert np.allclose(W, [[1 / 2, 1 / 6], [1 / 6, 1 / 3]], atol=1e-14)


@given(small_matrix(5, scale=1.0), arrays(np.float64, (5, 5), elements=finite))
def test_lyapunov_residual(A, G):
    F = A - 1.5 * np.eye(5)  # |A| <= 1 so F is Hurwitz
    R = G @ G.T
    W = solve_lyapunov(F, R)
    assert np.linalg.norm(F.T @ W + W @ F + R) <= 1e-8 * max(np.linalg.norm(R), 1e-300) + 1e-14


def test_lyapunov_singular_operator():
    with pytest.raises(DomainError):
        solve_lyapunov([[0.0, 1.0], [-1.0, 0.0]], np.eye(2))
