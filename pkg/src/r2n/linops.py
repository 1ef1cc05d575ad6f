"""Matrix-free linear maps used by the test problems.

A :class:`LinearMap` is a pair of callables (forward, adjoint) with fixed
shape. Constructors are provided for dense matrices, random matrices with
orthonormal rows, entry masks on vectorized matrices and a zero-padded
Gaussian blur.
"""

import numpy as np
from scipy import ndimage

from ._rng import make_rng

DENSE_LIMIT = 10**6


class InvalidDimensionError(ValueError):
    pass


class InvalidIndexError(IndexError):
    pass


class LinearMap:
    """Linear map R^n_cols -> R^n_rows given by forward and adjoint callables.

    Parameters
    ----------
    n_rows, n_cols : int
        Shape of the map.
    forward : callable
        ``forward(u)`` returns ``A u`` for ``u`` of length ``n_cols``.
    adjoint : callable
        ``adjoint(v)`` returns ``A^T v`` for ``v`` of length ``n_rows``.
    """

    def __init__(self, n_rows, n_cols, forward, adjoint):
        self._shape = (int(n_rows), int(n_cols))
        self._forward = forward
        self._adjoint = adjoint

    @property
    def shape(self):
        return self._shape

    @property
    def n_rows(self):
        return self._shape[0]

    @property
    def n_cols(self):
        return self._shape[1]

    def forward(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_cols,):
            raise InvalidDimensionError(f"expected vector of length {self.n_cols}, got shape {u.shape}")
        return self._forward(u)

    def adjoint(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_rows,):
            raise InvalidDimensionError(f"expected vector of length {self.n_rows}, got shape {v.shape}")
        return self._adjoint(v)

    def __matmul__(self, u):
        return self.forward(u)

    @property
    def T(self):
        return LinearMap(self.n_cols, self.n_rows, self._adjoint, self._forward)

    def to_dense(self):
        """Materialize the map column by column (small maps only)."""
        m, n = self.shape
        if m * n > DENSE_LIMIT:
            raise InvalidDimensionError(f"refusing to materialize a {m}x{n} map")
        out = np.empty((m, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            out[:, j] = self._forward(e)
            e[j] = 0.0
        return out

    def __repr__(self):
        return f"{type(self).__name__}({self.n_rows}x{self.n_cols})"


class CountingLinearMap(LinearMap):
    """Wraps a map and reports every forward/adjoint product to ``counter``."""

    def __init__(self, inner, counter):
        super().__init__(inner.n_rows, inner.n_cols, inner._forward, inner._adjoint)
        self._counter = counter

    def forward(self, u):
        self._counter()
        return super().forward(u)

    def adjoint(self, v):
        self._counter()
        return super().adjoint(v)


def dense_map(matrix):
    A = np.array(matrix, dtype=float)
    if A.ndim != 2:
        raise InvalidDimensionError("dense_map expects a 2-D array")
    A.setflags(write=False)
    op = LinearMap(A.shape[0], A.shape[1], lambda u: A @ u, lambda v: A.T @ v)
    op.matrix = A
    return op


def identity_map(n):
    return LinearMap(n, n, lambda u: u.copy(), lambda v: v.copy())


def random_orthonormal_rows(m, n, seed):
    """Dense m x n map with orthonormal rows (A A^T = I_m).

    A standard Gaussian n x m matrix is drawn from the seeded generator and
    factored as QR; the rows of A are the columns of Q with signs fixed so
    that diag(R) > 0, which makes the result a deterministic function of the
    seed.
    """
    if not (1 <= m <= n):
        raise InvalidDimensionError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = make_rng(seed)
    G = rng.standard_normal((n, m))
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return dense_map((Q * signs).T)


def entry_mask(n_rows, n_cols, omega):
    """Projection keeping the entries of a row-major vectorized matrix in ``omega``.

    ``omega`` is an iterable of zero-based ``(i, j)`` pairs. The map is
    square (size ``n_rows * n_cols``), idempotent and self-adjoint.
    """
    keep = np.zeros((n_rows, n_cols), dtype=bool)
    for pair in omega:
        i, j = (int(t) for t in pair)
        if not (0 <= i < n_rows and 0 <= j < n_cols):
            raise InvalidIndexError(f"index ({i}, {j}) outside {n_rows}x{n_cols}")
        keep[i, j] = True
    flat = keep.ravel()
    flat.setflags(write=False)

    def project(u):
        return np.where(flat, u, 0.0)

    N = n_rows * n_cols
    op = LinearMap(N, N, project, project)
    op.mask = flat
    return op


def gaussian_kernel(radius, sigma):
    if radius < 0 or sigma <= 0:
        raise ValueError("need radius >= 0 and sigma > 0")
    t = np.arange(-radius, radius + 1, dtype=float)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    K = np.outer(g, g)
    return K / K.sum()


def blur_operator(side, kernel_radius=2, kernel_sigma=1.0):
    """Gaussian blur on side x side images, zero padding outside the image.

    The kernel is truncated at ``kernel_radius`` and renormalized to sum 1.
    It is symmetric, so the adjoint of the zero-padded convolution is the
    same convolution.
    """
    if side < 1:
        raise ValueError("side must be >= 1")
    K = gaussian_kernel(kernel_radius, kernel_sigma)

    def apply(u):
        img = u.reshape(side, side)
        return ndimage.correlate(img, K, mode="constant", cval=0.0).ravel()

    op = LinearMap(side * side, side * side, apply, apply)
    op.kernel = K
    return op


def adjoint_mismatch(op, rng, trials=100):
    """Largest relative error of <A u, v> - <u, A^T v> over random pairs."""
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.n_cols)
        v = rng.standard_normal(op.n_rows)
        lhs = float(op.forward(u) @ v)
        rhs = float(u @ op.adjoint(v))
        scale = max(abs(lhs), abs(rhs), np.linalg.norm(op.forward(u)) * np.linalg.norm(v), 1e-300)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
