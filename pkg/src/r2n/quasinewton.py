"""Model Hessians B_k: zero, diagonal quasi-Newton, L-BFGS and Gauss-Newton.

Every model exposes ``apply(v)``, ``update(s, y)`` (in place, returns the
model) and ``norm_estimate()``, the quantity used in place of ||B_k|| when
choosing the Cauchy step length. Diagonal kinds also expose ``diagonal``.
"""

import numpy as np

from ._rng import make_rng

CURVATURE_TOL = 1e-12
SPECTRAL_BOUNDS = (1e-8, 1e8)
DIAGONAL_BOUND = 1e8
POWER_ITERATIONS = 20
POWER_SEED = 0


class InvalidUpdateError(ValueError):
    pass


def power_norm(apply, n, iterations=POWER_ITERATIONS, seed=POWER_SEED):
    """Estimate ||B|| for a symmetric operator from ``iterations`` products with B.

    The products span the same Krylov space as power iteration from a seeded
    start vector; instead of keeping only the last iterate, the estimate is
    the largest |Ritz value| over that space (Lanczos with full
    reorthogonalization). Ritz values lie inside the spectrum, so the result
    never exceeds ||B||, and it converges much faster than ``||B v_k||``
    when the top eigenvalues are clustered.
    """
    if n == 0:
        return 0.0
    v = make_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    m = min(iterations, n)
    V = np.zeros((m, n))
    alpha, beta = [], []
    for j in range(m):
        V[j] = v
        w = np.asarray(apply(v), dtype=float)
        if not np.all(np.isfinite(w)):
            return np.inf
        alpha.append(float(v @ w))
        w = w - V[: j + 1].T @ (V[: j + 1] @ w)
        w = w - V[: j + 1].T @ (V[: j + 1] @ w)
        b = float(np.linalg.norm(w))
        scale = max(abs(a) for a in alpha) + (beta[-1] if beta else 0.0)
        if j == m - 1 or b <= 1e-12 * scale:
            break
        beta.append(b)
        v = w / b
    k = len(alpha)
    T = np.diag(alpha) + np.diag(beta[: k - 1], 1) + np.diag(beta[: k - 1], -1)
    return float(np.max(np.abs(np.linalg.eigvalsh(T))))


def _check_pair(s, y, n):
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if s.shape != (n,) or y.shape != (n,):
        raise InvalidUpdateError(f"update vectors must have length {n}")
    if not np.any(s):
        raise InvalidUpdateError("cannot update with s = 0")
    return s, y


class HessianModel:
    kind = "abstract"
    diagonal = None

    def __init__(self, n):
        self.n = int(n)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {v.shape}")
        return v

    def apply(self, v):
        raise NotImplementedError

    def update(self, s, y):
        _check_pair(s, y, self.n)
        return self

    def norm_estimate(self):
        return power_norm(self.apply, self.n)

    def quad(self, v):
        """``v^T B v``."""
        return float(v @ self.apply(v))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n})"


class ZeroModel(HessianModel):
    kind = "zero"

    def apply(self, v):
        return np.zeros_like(self._check(v))

    def norm_estimate(self):
        return 0.0


class DiagonalModel(HessianModel):
    """Base for B = diag(d); starts at the identity."""

    def __init__(self, n, d0=1.0):
        super().__init__(n)
        self.d = np.full(self.n, float(d0)) if np.isscalar(d0) else np.array(d0, dtype=float)

    @property
    def diagonal(self):
        return self.d

    def apply(self, v):
        return self.d * self._check(v)

    def norm_estimate(self):
        return float(np.max(np.abs(self.d))) if self.n else 0.0


class SpectralModel(DiagonalModel):
    """B = tau I with tau = s^T y / s^T s, clamped to SPECTRAL_BOUNDS."""

    kind = "spectral"

    @property
    def tau(self):
        return float(self.d[0]) if self.n else 0.0

    def update(self, s, y):
        s, y = _check_pair(s, y, self.n)
        tau = float(s @ y) / float(s @ s)
        self.d[:] = np.clip(tau, *SPECTRAL_BOUNDS)
        return self


class PSBDiagonal(DiagonalModel):
    """Least Frobenius change of diag(d) satisfying s^T B s = s^T y."""

    kind = "psb_diag"

    def update(self, s, y):
        s, y = _check_pair(s, y, self.n)
        # rescaling s and y by 1/||s|| leaves the update unchanged
        scale = np.linalg.norm(s)
        s, y = s / scale, y / scale
        s2 = s * s
        denom = float(s2 @ s2)
        if denom < 1e-30:
            return self
        q = (float(s @ y) - float(s2 @ self.d)) / denom
        self.d = np.clip(self.d + q * s2, -DIAGONAL_BOUND, DIAGONAL_BOUND)
        return self


class AndreiDiagonal(DiagonalModel):
    """Andrei's diagonal update: least change from D - I under the weak secant equation.

    d+ = d - 1 + ((s^T y + s^T s - s^T D s) / sum(s**4)) s**2
    """

    kind = "andrei_diag"

    def update(self, s, y):
        s, y = _check_pair(s, y, self.n)
        scale = np.linalg.norm(s)
        s, y = s / scale, y / scale
        s2 = s * s
        denom = float(s2 @ s2)
        if denom < 1e-30:
            return self
        q = (float(s @ y) + 1.0 - float(s2 @ self.d)) / denom
        self.d = np.clip(self.d + q * s2 - 1.0, -DIAGONAL_BOUND, DIAGONAL_BOUND)
        return self


class DBFGSDiagonal(DiagonalModel):
    """d = (sum |y_i| / s^T y) |y|; positive whenever s^T y > 0."""

    kind = "dbfgs_diag"

    def update(self, s, y):
        s, y = _check_pair(s, y, self.n)
        sty = float(s @ y)
        if sty > CURVATURE_TOL:
            ay = np.abs(y)
            self.d = ay * (ay.sum() / sty)
        return self


class LBFGSModel(HessianModel):
    """Limited-memory BFGS approximation of the Hessian (not its inverse).

    Products ``B v`` use the unrolled form of the BFGS recursion started from
    ``B_0 = I / gamma``, ``gamma = s^T y / y^T y`` of the newest pair:

        B v = B_0 v + sum_i [ y_i (y_i^T v) / (y_i^T s_i) - a_i (a_i^T v) / (s_i^T a_i) ],

    where ``a_i = B_{i} s_i`` is recomputed whenever a pair is added.
    ``inverse_apply`` is the classical two-loop recursion for ``B^{-1} v``.
    """

    kind = "lbfgs"

    def __init__(self, n, memory=5, curvature_tol=CURVATURE_TOL):
        super().__init__(n)
        self.memory = int(memory)
        self.curvature_tol = curvature_tol
        self.S = []
        self.Y = []
        self._A = []
        self._ys = []
        self._sa = []
        self.gamma = 1.0

    @property
    def npairs(self):
        return len(self.S)

    def update(self, s, y):
        s, y = _check_pair(s, y, self.n)
        sty = float(s @ y)
        if sty <= self.curvature_tol * np.linalg.norm(s) * np.linalg.norm(y):
            return self
        self.S.append(s.copy())
        self.Y.append(y.copy())
        if len(self.S) > self.memory:
            del self.S[0], self.Y[0]
        self.gamma = sty / float(y @ y)
        self._rebuild()
        return self

    def _rebuild(self):
        self._A, self._ys, self._sa = [], [], []
        delta = 1.0 / self.gamma
        for s, y in zip(self.S, self.Y):
            a = delta * s
            for aj, yj, ysj, saj in zip(self._A, self.Y, self._ys, self._sa):
                a = a + yj * (float(yj @ s) / ysj) - aj * (float(aj @ s) / saj)
            self._A.append(a)
            self._ys.append(float(y @ s))
            self._sa.append(float(s @ a))

    def apply(self, v):
        v = self._check(v)
        out = v / self.gamma
        for a, y, ys, sa in zip(self._A, self.Y, self._ys, self._sa):
            out = out + y * (float(y @ v) / ys) - a * (float(a @ v) / sa)
        return out

    def inverse_apply(self, v):
        q = self._check(v).copy()
        alphas = []
        for s, y, ys in zip(reversed(self.S), reversed(self.Y), reversed(self._ys)):
            alpha = float(s @ q) / ys
            alphas.append(alpha)
            q -= alpha * y
        r = self.gamma * q
        for s, y, ys, alpha in zip(self.S, self.Y, self._ys, reversed(alphas)):
            beta = float(y @ r) / ys
            r += (alpha - beta) * s
        return r


class GaussNewtonModel(HessianModel):
    """B = J^T J for a Jacobian given as a LinearMap; refreshed by the solver."""

    kind = "gauss_newton"

    def __init__(self, n, jacobian=None):
        super().__init__(n)
        self.jacobian = jacobian

    def set_jacobian(self, jacobian):
        if jacobian.n_cols != self.n:
            raise ValueError(f"Jacobian has {jacobian.n_cols} columns, expected {self.n}")
        self.jacobian = jacobian
        return self

    def apply(self, v):
        v = self._check(v)
        return self.jacobian.adjoint(self.jacobian.forward(v))


DIAGONAL_KINDS = {
    "spectral": SpectralModel,
    "psb_diag": PSBDiagonal,
    "andrei_diag": AndreiDiagonal,
    "dbfgs_diag": DBFGSDiagonal,
}


def make_hessian(kind, n, **kwargs):
    if kind == "zero":
        return ZeroModel(n)
    if kind in DIAGONAL_KINDS:
        return DIAGONAL_KINDS[kind](n, **kwargs)
    if kind == "lbfgs":
        return LBFGSModel(n, **kwargs)
    if kind == "gauss_newton":
        return GaussNewtonModel(n, **kwargs)
    raise ValueError(f"unknown Hessian model kind {kind!r}")

