import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from r2n._rng import make_rng
from r2n.linops import (
    InvalidDimensionError,
    InvalidIndexError,
    LinearMap,
    adjoint_mismatch,
    blur_operator,
    dense_map,
    entry_mask,
    gaussian_kernel,
    identity_map,
    random_orthonormal_rows,
)


def test_orthonormal_rows_1x1_is_plus_minus_one():
    A = random_orthonormal_rows(1, 1, seed=0).to_dense()
    assert A.shape == (1, 1)
    assert abs(abs(A[0, 0]) - 1.0) < 1e-14


def test_orthonormal_rows_3x8():
    A = random_orthonormal_rows(3, 8, seed=7).to_dense()
    assert np.linalg.norm(A @ A.T - np.eye(3)) < 1e-10
    assert abs(np.linalg.svd(A, compute_uv=False)[0] - 1.0) < 1e-8


def test_orthonormal_rows_rejects_tall():
    with pytest.raises(InvalidDimensionError):
        random_orthonormal_rows(4, 3, seed=0)


def test_orthonormal_rows_deterministic():
    a = random_orthonormal_rows(5, 20, seed=11).to_dense()
    b = random_orthonormal_rows(5, 20, seed=11).to_dense()
    c = random_orthonormal_rows(5, 20, seed=12).to_dense()
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_entry_mask_full_is_identity_and_empty_is_zero():
    full = entry_mask(3, 2, [(i, j) for i in range(3) for j in range(2)])
    empty = entry_mask(3, 2, [])
    u = np.arange(1.0, 7.0)
    assert np.array_equal(full.forward(u), u)
    assert np.array_equal(empty.forward(u), np.zeros(6))


def test_entry_mask_single_entry():
    # zero-based indices: (0, 0) is the top-left entry
    P = entry_mask(2, 2, [(0, 0)])
    X = np.array([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(P.forward(X.ravel()).reshape(2, 2), [[3.0, 0.0], [0.0, 0.0]])


def test_entry_mask_out_of_range():
    with pytest.raises(InvalidIndexError):
        entry_mask(2, 2, [(2, 0)])
    with pytest.raises(InvalidIndexError):
        entry_mask(2, 2, [(0, -1)])


@given(st.integers(1, 6), st.integers(1, 6), st.data())
@settings(max_examples=40, deadline=None)
def test_entry_mask_idempotent_and_self_adjoint(r, c, data):
    omega = data.draw(st.sets(st.tuples(st.integers(0, r - 1), st.integers(0, c - 1))))
    P = entry_mask(r, c, omega)
    rng = make_rng(r * 10 + c)
    u = rng.standard_normal(r * c)
    v = rng.standard_normal(r * c)
    assert np.array_equal(P.forward(P.forward(u)), P.forward(u))
    assert float(P.forward(u) @ v) == pytest.approx(float(u @ P.adjoint(v)), rel=1e-12, abs=1e-12)


def test_blur_radius_zero_is_identity():
    B = blur_operator(5, kernel_radius=0, kernel_sigma=1.0)
    u = make_rng(0).standard_normal(25)
    assert np.allclose(B.forward(u), u, atol=0, rtol=0)


def test_blur_constant_image_interior_unchanged():
    side, r = 9, 2
    B = blur_operator(side, kernel_radius=r, kernel_sigma=1.3)
    out = B.forward(np.full(side * side, 0.7)).reshape(side, side)
    assert np.max(np.abs(out[r:-r, r:-r] - 0.7)) < 1e-12
    # zero padding loses mass at the border
    assert out[0, 0] < 0.7


def test_blur_delta_image_mass():
    side = 4
    B = blur_operator(side, kernel_radius=1, kernel_sigma=1.0)
    K = gaussian_kernel(1, 1.0)
    assert abs(K.sum() - 1.0) < 1e-15
    delta = np.zeros((side, side))
    delta[0, 1] = 1.0
    out = B.forward(delta.ravel()).reshape(side, side)
    # a delta on the top edge: the kernel row that would fall above the image is lost
    assert out.sum() == pytest.approx(K[1:, :].sum(), abs=1e-14)
    assert out[0, 1] == pytest.approx(K[1, 1], abs=1e-15)


@pytest.mark.parametrize("make", [
    lambda: random_orthonormal_rows(6, 15, seed=3),
    lambda: entry_mask(4, 5, [(0, 1), (3, 4), (2, 2)]),
    lambda: blur_operator(7, 2, 1.0),
    lambda: dense_map(make_rng(1).standard_normal((5, 3))),
    lambda: identity_map(4),
])
def test_adjoint_consistency(make):
    op = make()
    assert adjoint_mismatch(op, make_rng(42), trials=100) < 1e-10


def test_shape_checks_and_transpose():
    op = dense_map(np.arange(6.0).reshape(2, 3))
    with pytest.raises(InvalidDimensionError):
        op.forward(np.ones(2))
    with pytest.raises(InvalidDimensionError):
        op.adjoint(np.ones(3))
    assert op.T.shape == (3, 2)
    assert np.array_equal(op.T.to_dense(), op.matrix.T)
    assert np.array_equal(op @ np.ones(3), [3.0, 12.0])


def test_to_dense_refuses_huge_maps():
    big = LinearMap(2000, 2000, lambda u: u, lambda v: v)
    with pytest.raises(InvalidDimensionError):
        big.to_dense()
