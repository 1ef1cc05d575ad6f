"""Nonsmooth regularizers h and their proximal operators.

Every regularizer is ``lam * base(x)`` where ``base`` is one of the zero
function, the l0 or l1 norm (separable, acting on vectors), or the nuclear
norm or rank (acting on a vector reinterpreted row-major as a matrix).

Hard thresholds (l0, rank) are set-valued at the tie ``q**2 == 2*nu*lam``;
the tie always resolves to zero.
"""

import numpy as np

KINDS = ("zero", "l0", "l1", "nuclear", "rank")
SEPARABLE_KINDS = ("zero", "l0", "l1")
RANK_RTOL = 1e-10


class ShapeMismatchError(ValueError):
    pass


class NonFiniteInputError(ValueError):
    pass


class UnsupportedRegularizerError(TypeError):
    pass


class NonconvexCoordinateError(ValueError):
    pass


def soft_threshold(q, t):
    return np.sign(q) * np.maximum(np.abs(q) - t, 0.0)


def hard_threshold(q, t):
    """Keep q_i iff q_i**2 > 2 t_i; ties go to zero."""
    return np.where(q * q > 2.0 * t, q, 0.0)


class Regularizer:
    """``lam * base(x)`` for ``base`` in :data:`KINDS`.

    Parameters
    ----------
    kind : str
        One of ``"zero"``, ``"l0"``, ``"l1"``, ``"nuclear"``, ``"rank"``.
    lam : float
        Nonnegative weight.
    shape : int or tuple of int
        Vector length for separable kinds, ``(rows, cols)`` for the matrix
        kinds. Inputs are always flat vectors of the matching size.
    """

    def __init__(self, kind, lam=1.0, shape=None):
        if kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {kind!r}; expected one of {KINDS}")
        if not (lam >= 0 and np.isfinite(lam)):
            raise ValueError("lam must be finite and nonnegative")
        self.kind = kind
        self.lam = float(lam)
        if kind in ("nuclear", "rank"):
            if shape is None or np.ndim(shape) != 1 or len(shape) != 2:
                raise ShapeMismatchError(f"{kind} needs a (rows, cols) shape")
            self.shape = (int(shape[0]), int(shape[1]))
        else:
            self.shape = None if shape is None else (int(np.prod(shape)),)
        self._size = None if self.shape is None else int(np.prod(self.shape))

    @property
    def separable(self):
        return self.kind in SEPARABLE_KINDS

    @property
    def size(self):
        return self._size

    def __repr__(self):
        return f"Regularizer({self.kind!r}, lam={self.lam:g}, shape={self.shape})"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ShapeMismatchError(f"expected a flat vector, got shape {x.shape}")
        if self.size is not None and x.size != self.size:
            raise ShapeMismatchError(f"expected length {self.size}, got {x.size}")
        return x

    def _as_matrix(self, x):
        return x.reshape(self.shape)

    def base_value(self, x):
        """Unweighted penalty, e.g. the number of nonzeros for l0."""
        x = self._check(x)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l0":
            return float(np.count_nonzero(x))
        if self.kind == "l1":
            return float(np.abs(x).sum())
        sv = np.linalg.svd(self._as_matrix(x), compute_uv=False)
        if self.kind == "nuclear":
            return float(sv.sum())
        if sv.size == 0 or sv[0] == 0.0:
            return 0.0
        return float(np.count_nonzero(sv > RANK_RTOL * sv[0]))

    def value(self, x):
        if self.kind == "zero":
            self._check(x)
            return 0.0
        return self.lam * self.base_value(x)

    def prox(self, nu, q):
        """Global minimizer of ``h(y) + ||y - q||^2 / (2 nu)``."""
        q = self._check(q)
        if not (nu > 0 and np.isfinite(nu)):
            raise NonFiniteInputError(f"prox step must be finite and positive, got {nu}")
        if not np.all(np.isfinite(q)):
            raise NonFiniteInputError("prox input contains non-finite entries")
        t = nu * self.lam
        if self.kind == "zero" or (t == 0.0 and self.kind != "rank"):
            return q.copy()
        if self.kind == "l1":
            return soft_threshold(q, t)
        if self.kind == "l0":
            return hard_threshold(q, t)
        U, sv, Vt = np.linalg.svd(self._as_matrix(q), full_matrices=False)
        if self.kind == "nuclear":
            sv = np.maximum(sv - t, 0.0)
        else:
            sv = hard_threshold(sv, t)
        return ((U * sv) @ Vt).ravel()

    def shifted_prox_separable(self, x, g, d):
        """Step s minimizing ``g_i s_i + d_i s_i**2 / 2 + h_i(x_i + s_i)`` per coordinate.

        Equivalent to ``prox`` with per-coordinate step ``1/d_i`` evaluated at
        ``x - g/d``, minus ``x``.
        """
        if not self.separable:
            raise UnsupportedRegularizerError(f"{self.kind} regularizer is not separable")
        x, g = self._check(x), self._check(g)
        d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
        if np.any(~(d > 0)):
            raise NonconvexCoordinateError("diagonal weights must be positive")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(g))):
            raise NonFiniteInputError("non-finite input to shifted prox")
        step = 1.0 / d
        q = x - g * step
        if self.kind == "zero" or self.lam == 0.0:
            y = q
        elif self.kind == "l1":
            y = soft_threshold(q, step * self.lam)
        else:
            y = hard_threshold(q, step * self.lam)
        return y - x


class ShiftedRegularizer:
    """``s -> h(x + s)`` with the matching (shifted) proximal machinery.

    This is the nonsmooth part handed to an inner subproblem solver, which
    works in the step variable ``s``.
    """

    def __init__(self, h, x):
        self.h = h
        self.x = np.asarray(x, dtype=float)
        self.lam = h.lam
        self.kind = getattr(h, "kind", "custom")

    @property
    def separable(self):
        return self.h.separable

    def value(self, s):
        return self.h.value(self.x + s)

    def prox(self, nu, q):
        return self.h.prox(nu, self.x + q) - self.x

    def shifted_prox_separable(self, s, g, d):
        return self.h.shifted_prox_separable(self.x + s, g, d)
