"""Regularized quasi-Newton solvers (R2, R2DH, R2N, LM) for f(x) + h(x)."""

from .linops import LinearMap, blur_operator, entry_mask, random_orthonormal_rows
from .problems import (
    ProblemInstance,
    SmoothObjective,
    bpdn_generate,
    denoise_generate,
    mc_generate,
    quadratic_generate,
    svm_generate,
)
from .quasinewton import make_hessian
from .regularizers import Regularizer
from .solvers import RunRecord, SolverOptions, lm_solve, r2_solve, r2dh_solve, r2n_solve

__all__ = [
    "LinearMap",
    "ProblemInstance",
    "Regularizer",
    "RunRecord",
    "SmoothObjective",
    "SolverOptions",
    "blur_operator",
    "bpdn_generate",
    "denoise_generate",
    "entry_mask",
    "lm_solve",
    "make_hessian",
    "mc_generate",
    "quadratic_generate",
    "r2_solve",
    "r2dh_solve",
    "r2n_solve",
    "random_orthonormal_rows",
    "svm_generate",
]
