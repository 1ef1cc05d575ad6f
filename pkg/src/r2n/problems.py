"""Smooth objectives with evaluation counters, and the test-problem generators.

Families: basis pursuit denoise (l0), matrix completion (rank or nuclear
norm), a nonlinear SVM with tanh loss (l0) and log-type image denoising
under a Gaussian blur (l1). A plain shifted quadratic is included for smoke
tests. Every generator is a pure function of its parameters and seed.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from ._rng import make_rng
from .linops import (
    CountingLinearMap,
    LinearMap,
    blur_operator,
    entry_mask,
    identity_map,
    random_orthonormal_rows,
)
from .regularizers import Regularizer


class MissingResidualError(TypeError):
    pass


class DataFormatError(ValueError):
    pass


class SmoothObjective:
    """Smooth f with gradient and optional least-squares structure ``f = ||F||^2 / 2``.

    Counters ``nf``, ``ngrad`` and ``njprod`` tally calls to :meth:`obj`,
    :meth:`grad` and products with the maps returned by :meth:`jacobian`.
    """

    def __init__(self, n, f, grad, residual=None, jacobian=None, name="objective"):
        self.n = int(n)
        self.name = name
        self._f = f
        self._grad = grad
        self._residual = residual
        self._jacobian = jacobian
        self.nf = 0
        self.ngrad = 0
        self.njprod = 0

    @property
    def has_residual(self):
        return self._residual is not None and self._jacobian is not None

    def obj(self, x):
        self.nf += 1
        return float(self._f(x))

    def grad(self, x):
        self.ngrad += 1
        return np.asarray(self._grad(x), dtype=float)

    def residual(self, x):
        if not self.has_residual:
            raise MissingResidualError(f"{self.name} has no residual structure")
        self.nf += 1
        return self._residual(x)

    def jacobian(self, x):
        if not self.has_residual:
            raise MissingResidualError(f"{self.name} has no residual structure")
        return CountingLinearMap(self._jacobian(x), self._count_jprod)

    def _count_jprod(self):
        self.njprod += 1

    def counters(self):
        return {"nf": self.nf, "ngrad": self.ngrad, "njprod": self.njprod}

    def reset_counters(self):
        self.nf = self.ngrad = self.njprod = 0


def least_squares(A, b, name="least_squares"):
    """f(x) = ||A x - b||^2 / 2 with residual A x - b and constant Jacobian A."""
    b = np.asarray(b, dtype=float)

    def residual(x):
        return A.forward(x) - b

    def f(x):
        r = residual(x)
        return 0.5 * float(r @ r)

    def grad(x):
        return A.adjoint(residual(x))

    return SmoothObjective(A.n_cols, f, grad, residual, lambda x: A, name=name)


def svm_objective(A, b, name="svm"):
    """f(x) = ||1 - tanh(b * (A x))||^2 / 2 for a dense feature matrix A and labels b."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def residual(x):
        return 1.0 - np.tanh(b * (A @ x))

    def f(x):
        r = residual(x)
        return 0.5 * float(r @ r)

    def grad(x):
        t = np.tanh(b * (A @ x))
        return A.T @ (-(1.0 - t) * (1.0 - t * t) * b)

    def jacobian(x):
        w = -(1.0 - np.tanh(b * (A @ x)) ** 2) * b
        return LinearMap(A.shape[0], A.shape[1], lambda u: w * (A @ u), lambda v: A.T @ (w * v))

    return SmoothObjective(A.shape[1], f, grad, residual, jacobian, name=name)


def denoise_objective(A, b, name="denoise"):
    """f(x) = sum_i log((A x - b)_i^2 + 1)."""
    b = np.asarray(b, dtype=float)

    def f(x):
        r = A.forward(x) - b
        return float(np.log1p(r * r).sum())

    def grad(x):
        r = A.forward(x) - b
        return 2.0 * A.adjoint(r / (r * r + 1.0))

    return SmoothObjective(A.n_cols, f, grad, name=name)


@dataclass
class ProblemInstance:
    objective: SmoothObjective
    regularizer: Any
    x0: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def name(self):
        return self.metadata.get("family", self.objective.name)


def _subseed(rng):
    return int(rng.integers(0, 2**63 - 1))


def bpdn_generate(m, n, k_sparse, noise_std=0.1, seed=0, magnitudes="unit"):
    """Basis pursuit denoise: ||A x - b||^2 / 2 + lam ||x||_0.

    A has orthonormal rows, ``x_true`` has ``k_sparse`` nonzeros with random
    signs and ``b = A x_true + noise``. ``magnitudes="unit"`` puts +-1 on the
    support; ``"gaussian"`` uses standard normal values instead.
    ``lam = 0.1 ||A^T b||_inf``.
    """
    if not (1 <= m <= n):
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if not (0 <= k_sparse <= n):
        raise ValueError(f"need 0 <= k_sparse <= n, got {k_sparse}")
    if magnitudes not in ("unit", "gaussian"):
        raise ValueError(f"unknown magnitudes {magnitudes!r}")
    rng = make_rng(seed)
    A = random_orthonormal_rows(m, n, _subseed(rng))
    support = np.sort(rng.choice(n, size=k_sparse, replace=False))
    x_true = np.zeros(n)
    if magnitudes == "unit":
        x_true[support] = rng.choice([-1.0, 1.0], size=k_sparse)
    else:
        x_true[support] = rng.standard_normal(k_sparse)
    b = A.forward(x_true) + noise_std * rng.standard_normal(m)
    lam = 0.1 * float(np.max(np.abs(A.adjoint(b)))) if m else 0.0
    x0 = rng.standard_normal(n)
    meta = dict(family="bpdn", m=m, n=n, k_sparse=k_sparse, noise_std=noise_std,
                lam=lam, seed=seed, support=support)
    return ProblemInstance(least_squares(A, b, name="bpdn"), Regularizer("l0", lam, n), x0, x_true, meta)


def mc_generate(n, rank, c=0.1, sigma_a=0.1, sigma_b=1.0, obs_fraction=0.5,
                regularizer="nuclear", lam=0.1, seed=0):
    """Matrix completion: ||P_Omega(X - M)||_F^2 / 2 + lam h(X), h in {rank, nuclear}.

    ``X_r = U V^T`` with Gaussian n x rank factors scaled by ``rank**-0.25``;
    ``M = (1-c)(X_r + N(0, sigma_a^2)) + c(X_r + N(0, sigma_b^2))``.
    Matrices are vectorized row-major.
    """
    if not (1 <= rank <= n):
        raise ValueError(f"need 1 <= rank <= n, got rank={rank}, n={n}")
    if not (0.0 <= c <= 1.0):
        raise ValueError("c must lie in [0, 1]")
    if not (0.0 < obs_fraction <= 1.0):
        raise ValueError("obs_fraction must lie in (0, 1]")
    if regularizer not in ("rank", "nuclear"):
        raise ValueError(f"matrix completion regularizer must be rank or nuclear, got {regularizer!r}")
    rng = make_rng(seed)
    scale = rank ** -0.25
    U = scale * rng.standard_normal((n, rank))
    V = scale * rng.standard_normal((n, rank))
    X_r = U @ V.T
    M = (1 - c) * (X_r + sigma_a * rng.standard_normal((n, n))) + c * (X_r + sigma_b * rng.standard_normal((n, n)))
    n_obs = math.ceil(obs_fraction * n * n)
    flat = np.sort(rng.choice(n * n, size=n_obs, replace=False))
    omega = [divmod(int(k), n) for k in flat]
    P = entry_mask(n, n, omega)
    x0 = rng.standard_normal(n * n)
    meta = dict(family="mc", n=n, rank=rank, c=c, sigma_a=sigma_a, sigma_b=sigma_b,
                obs_fraction=obs_fraction, n_obs=n_obs, regularizer=regularizer, lam=lam, seed=seed)
    obj = least_squares(P, P.forward(M.ravel()), name="mc")
    obj.target = M.ravel()
    return ProblemInstance(obj, Regularizer(regularizer, lam, (n, n)), x0, X_r.ravel(), meta)


def load_matrix_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: non-finite entries")
    return data


def load_labels_csv(path):
    labels = load_matrix_csv(path).ravel()
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise DataFormatError(f"{path}: labels must be -1 or +1")
    return labels


def svm_generate(m=200, n=50, lam=0.1, seed=0, features_path=None, labels_path=None,
                 flip_fraction=0.05):
    """Nonlinear SVM: ||1 - tanh(b * (A x))||^2 / 2 + lam ||x||_0.

    Synthetic by default: Gaussian features scaled by ``1/sqrt(n)`` (rows of
    unit expected norm, so that ``tanh`` is not saturated after one unit
    step from the origin), a sparse planted separator
    ``w_true`` with ``max(1, n // 10)`` nonzeros, ``b = sign(A w_true)`` with a
    fraction of labels flipped. With both paths given, features (m x n) and
    labels (+-1) are read from CSV files instead and ``m``, ``n`` are ignored.
    """
    w_true = None
    if features_path is not None or labels_path is not None:
        if features_path is None or labels_path is None:
            raise DataFormatError("file source needs both features_path and labels_path")
        A = load_matrix_csv(features_path)
        b = load_labels_csv(labels_path)
        if b.size != A.shape[0]:
            raise DataFormatError(f"{A.shape[0]} feature rows but {b.size} labels")
        m, n = A.shape
        source = "file"
    else:
        if m < 1 or n < 1:
            raise ValueError("m and n must be positive")
        rng = make_rng(seed)
        A = rng.standard_normal((m, n)) / np.sqrt(n)
        k = max(1, n // 10)
        w_true = np.zeros(n)
        w_true[rng.choice(n, size=k, replace=False)] = rng.standard_normal(k)
        b = np.sign(A @ w_true)
        b[b == 0] = 1.0
        flips = rng.random(m) < flip_fraction
        b[flips] = -b[flips]
        source = "synthetic"
    meta = dict(family="svm", m=m, n=n, lam=lam, seed=seed, source=source)
    return ProblemInstance(svm_objective(A, b), Regularizer("l0", lam, n), np.zeros(n), w_true, meta)


def read_pgm(path):
    """Grayscale PGM (P2 or P5) scaled to [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise DataFormatError(f"{path}: not a P2/P5 PGM file")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataFormatError(f"{path}: truncated header")
        tokens.append(int(raw[start:pos]))
    width, height, maxval = tokens
    if magic == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        data = np.frombuffer(raw[pos + 1:], dtype=dtype)
    else:
        data = np.array(raw[pos:].split(), dtype=float)
    if data.size < width * height:
        raise DataFormatError(f"{path}: expected {width * height} pixels, found {data.size}")
    img = data[: width * height].astype(float).reshape(height, width) / maxval
    return img


def load_image(path):
    if str(path).lower().endswith(".pgm"):
        img = read_pgm(path)
    else:
        vals = load_matrix_csv(path).ravel()
        side = math.isqrt(vals.size)
        if side * side != vals.size:
            raise DataFormatError(f"{path}: {vals.size} values is not a square image")
        img = vals.reshape(side, side)
    if img.shape[0] != img.shape[1]:
        raise DataFormatError(f"{path}: image must be square, got {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataFormatError(f"{path}: intensities must lie in [0, 1]")
    return img


def synthetic_image(side, rng, n_blocks=4):
    """Piecewise-constant test image: a few random rectangles on a dark background."""
    img = np.zeros((side, side))
    for _ in range(n_blocks):
        r0, c0 = rng.integers(0, side, size=2)
        h, w = rng.integers(1, max(2, side // 2) + 1, size=2)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.2, 1.0)
    return img


def denoise_generate(side=16, lam=1e-4, kernel_radius=2, kernel_sigma=1.0, noise_std=0.01,
                     seed=0, image_path=None):
    """Deblurring: sum log((A x - b)_i^2 + 1) + lam ||x||_1 with A a Gaussian blur."""
    rng = make_rng(seed)
    if image_path is not None:
        img = load_image(image_path)
        side = img.shape[0]
        source = "file"
    else:
        if side < 2:
            raise ValueError("side must be >= 2")
        img = synthetic_image(side, rng)
        source = "synthetic"
    A = blur_operator(side, kernel_radius, kernel_sigma)
    x_star = img.ravel()
    b = A.forward(x_star) + noise_std * rng.standard_normal(side * side)
    meta = dict(family="denoise", side=side, n=side * side, lam=lam, kernel_radius=kernel_radius,
                kernel_sigma=kernel_sigma, noise_std=noise_std, seed=seed, source=source)
    return ProblemInstance(denoise_objective(A, b), Regularizer("l1", lam, side * side),
                           np.zeros(side * side), x_star, meta)


def quadratic_generate(n=10, seed=0, regularizer="zero", lam=0.0):
    """f(x) = ||x - a||^2 / 2 with a seeded Gaussian target a."""
    rng = make_rng(seed)
    a = rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    meta = dict(family="quadratic", n=n, seed=seed, lam=lam, regularizer=regularizer)
    return ProblemInstance(least_squares(identity_map(n), a, name="quadratic"),
                           Regularizer(regularizer, lam, n), x0, a, meta)


GENERATORS = {
    "bpdn": bpdn_generate,
    "mc": mc_generate,
    "svm": svm_generate,
    "denoise": denoise_generate,
    "quadratic": quadratic_generate,
}
