import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_bfgs
from r2n._rng import make_rng
from r2n.linops import dense_map, identity_map, random_orthonormal_rows
from r2n.quasinewton import (
    AndreiDiagonal,
    DBFGSDiagonal,
    GaussNewtonModel,
    InvalidUpdateError,
    LBFGSModel,
    PSBDiagonal,
    SpectralModel,
    ZeroModel,
    make_hessian,
    power_norm,
)


def _pair(rng, n):
    s = rng.standard_normal(n)
    y = rng.standard_normal(n)
    if s @ y < 0:
        y = -y
    return s, y


# -- apply --------------------------------------------------------------------

def test_zero_apply():
    assert np.array_equal(ZeroModel(3).apply(np.array([1.0, -2.0, 5.0])), np.zeros(3))
    assert ZeroModel(3).norm_estimate() == 0.0


def test_spectral_apply_and_norm():
    B = SpectralModel(2).update(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    assert B.tau == 2.0
    assert np.array_equal(B.apply(np.array([1.0, -1.0])), [2.0, -2.0])
    assert B.norm_estimate() == 2.0


def test_gauss_newton_identity_jacobian():
    B = GaussNewtonModel(4).set_jacobian(identity_map(4))
    v = np.array([1.0, 2.0, -3.0, 0.5])
    assert np.array_equal(B.apply(v), v)


def test_gauss_newton_norm_orthonormal_rows():
    B = GaussNewtonModel(8).set_jacobian(random_orthonormal_rows(3, 8, seed=5))
    assert abs(B.norm_estimate() - 1.0) < 1e-6


def test_gauss_newton_rejects_wrong_width():
    with pytest.raises(ValueError):
        GaussNewtonModel(4).set_jacobian(identity_map(3))


def test_apply_dimension_check():
    with pytest.raises(ValueError):
        SpectralModel(3).apply(np.ones(2))


# -- updates --------------------------------------------------------------------

def test_dbfgs_example():
    B = DBFGSDiagonal(2).update(np.array([1.0, 1.0]), np.array([2.0, 2.0]))
    assert np.array_equal(B.d, [2.0, 2.0])
    s = np.array([1.0, 1.0])
    assert s @ (B.d * s) == 4.0


def test_dbfgs_skips_nonpositive_curvature():
    B = DBFGSDiagonal(2)
    B.update(np.array([1.0, 0.0]), np.array([-1.0, 3.0]))
    assert np.array_equal(B.d, [1.0, 1.0])


def test_dbfgs_secant_when_y_parallel_to_equal_magnitude_s():
    rng = make_rng(1)
    s = rng.choice([-0.7, 0.7], size=6)
    y = 2.5 * s
    B = DBFGSDiagonal(6).update(s, y)
    assert s @ B.apply(s) == pytest.approx(s @ y, rel=1e-12)


def test_dbfgs_not_secant_in_general():
    # y parallel to s is not enough once the |s_i| differ
    s, y = np.array([1.0, 2.0]), np.array([2.0, 4.0])
    B = DBFGSDiagonal(2).update(s, y)
    assert s @ B.apply(s) == pytest.approx(10.8)
    assert s @ y == 10.0


def test_psb_example():
    B = PSBDiagonal(2).update(np.array([1.0, 0.0]), np.array([3.0, 0.0]))
    assert np.allclose(B.d, [3.0, 1.0], rtol=0, atol=1e-15)


@pytest.mark.parametrize("cls", [SpectralModel, PSBDiagonal, AndreiDiagonal])
def test_weak_secant(cls):
    rng = make_rng(99)
    for _ in range(200):
        n = int(rng.integers(2, 51))
        B = cls(n)
        # start from a nontrivial state for the diagonal corrections
        B.update(*_pair(rng, n))
        s, y = _pair(rng, n)
        B.update(s, y)
        assert abs(s @ B.apply(s) - s @ y) <= 1e-9 * abs(s @ y)


def test_andrei_formula_by_hand():
    B = AndreiDiagonal(2)
    s, y = np.array([3.0, 4.0]), np.array([1.0, 2.0])
    B.update(s, y)
    u = s / 5.0
    u2 = u * u
    q = (float(u @ (y / 5.0)) + 1.0 - float(u2 @ np.ones(2))) / float(u2 @ u2)
    assert np.allclose(B.d, 1.0 + q * u2 - 1.0, rtol=1e-14)


def test_spectral_clamped():
    B = SpectralModel(2).update(np.array([1.0, 0.0]), np.array([-5.0, 0.0]))
    assert B.tau == 1e-8
    B.update(np.array([1e-6, 0.0]), np.array([1e3, 0.0]))
    assert B.tau == 1e8


@pytest.mark.parametrize("kind", ["spectral", "psb_diag", "andrei_diag", "dbfgs_diag", "lbfgs"])
def test_zero_step_rejected(kind):
    with pytest.raises(InvalidUpdateError):
        make_hessian(kind, 3).update(np.zeros(3), np.ones(3))


# -- L-BFGS ---------------------------------------------------------------------

def test_lbfgs_identity_before_pairs():
    B = LBFGSModel(4)
    v = np.array([1.0, -1.0, 2.0, 0.0])
    assert np.array_equal(B.apply(v), v)
    assert np.array_equal(B.inverse_apply(v), v)


@pytest.mark.parametrize("seed", range(6))
def test_lbfgs_matches_dense_bfgs(seed):
    rng = make_rng(seed)
    n = int(rng.integers(2, 21))
    k = int(rng.integers(1, 11))
    B = LBFGSModel(n, memory=10)
    A = rng.standard_normal((n, n))
    H = A @ A.T + 0.1 * np.eye(n)
    pairs = []
    for _ in range(k):
        s = rng.standard_normal(n)
        y = H @ s
        B.update(s, y)
        pairs.append((s, y))
    D = dense_bfgs(pairs, n)
    Dinv = np.linalg.inv(D)
    for _ in range(20):
        v = rng.standard_normal(n)
        assert np.linalg.norm(B.apply(v) - D @ v) <= 1e-8 * np.linalg.norm(D @ v)
        assert np.linalg.norm(B.inverse_apply(v) - Dinv @ v) <= 1e-8 * np.linalg.norm(Dinv @ v)


def test_lbfgs_memory_eviction_and_skip():
    rng = make_rng(3)
    B = LBFGSModel(5, memory=2)
    pairs = []
    for _ in range(4):
        s = rng.standard_normal(5)
        y = s * rng.uniform(0.5, 2.0, 5)
        B.update(s, y)
        pairs.append((s, y))
    assert B.npairs == 2
    # a negative-curvature pair is skipped
    s = rng.standard_normal(5)
    B.update(s, -s)
    assert B.npairs == 2
    D = dense_bfgs(pairs[-2:], 5)
    v = rng.standard_normal(5)
    assert np.allclose(B.apply(v), D @ v, rtol=1e-10)


@given(st.integers(2, 12), st.integers(1, 8), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_lbfgs_symmetric_positive_definite(n, k, seed):
    rng = make_rng(seed)
    B = LBFGSModel(n, memory=5)
    for _ in range(k):
        B.update(*_pair(rng, n))
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    lhs, rhs = B.apply(u) @ v, u @ B.apply(v)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), np.linalg.norm(B.apply(u)) * np.linalg.norm(v))
    assert u @ B.apply(u) > 0


# -- norm estimate ----------------------------------------------------------------

def test_power_norm_within_bounds():
    rng = make_rng(8)
    for _ in range(30):
        n = int(rng.integers(2, 51))
        A = rng.standard_normal((n, n))
        M = A @ A.T
        true = np.linalg.norm(M, 2)
        est = power_norm(lambda v: M @ v, n)
        assert 0.9 * true <= est <= true * (1 + 1e-12)


def test_lbfgs_norm_estimate_close_to_dense():
    rng = make_rng(12)
    B = LBFGSModel(10)
    pairs = []
    for _ in range(5):
        s = rng.standard_normal(10)
        y = s * rng.uniform(0.1, 10.0, 10)
        B.update(s, y)
        pairs.append((s, y))
    true = np.linalg.norm(dense_bfgs(pairs, 10), 2)
    assert 0.9 * true <= B.norm_estimate() <= true * (1 + 1e-10)


def test_diagonal_norm_is_exact():
    B = PSBDiagonal(3)
    B.d = np.array([0.5, -4.0, 2.0])
    assert B.norm_estimate() == 4.0


def test_make_hessian_rejects_unknown():
    with pytest.raises(ValueError):
        make_hessian("sr1", 3)


def test_gauss_newton_via_dense():
    J = dense_map(np.array([[1.0, 2.0], [0.0, 1.0], [1.0, 0.0]]))
    B = GaussNewtonModel(2).set_jacobian(J)
    v = np.array([1.0, -1.0])
    assert np.allclose(B.apply(v), J.matrix.T @ J.matrix @ v)
