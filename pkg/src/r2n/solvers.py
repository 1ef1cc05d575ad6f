"""R2N and its instances R2, R2DH and LM for minimizing f(x) + h(x).

All solvers share one outer loop (:func:`_outer_loop`). They differ in the
model Hessian B_k and in how the step s_k is produced from the Cauchy step:

* R2: B_k = 0 and s_k = s_cp (adaptive proximal gradient).
* R2DH: diagonal B_k; s_k minimizes the model in closed form.
* R2N: any B_k (L-BFGS by default); s_k from an inner R2 or R2DH run on the
  model, warm-started at s_cp.
* LM: R2N with B_k = J_k^T J_k for least-squares f.

Each outer iteration also checks the algorithm's guarantees (Cauchy
decrease, the bounds tying xi_cp to the step, the step-size guard and the
sigma schedule) and tallies any violation in ``RunRecord.violations``.
"""

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .models import ModelContext, cauchy_step, model_value, stationarity_measure, xi_full
from .quasinewton import DiagonalModel, GaussNewtonModel, ZeroModel, make_hessian
from .regularizers import ShiftedRegularizer
from .problems import SmoothObjective

EPS = float(np.finfo(float).eps)
MONITOR_RTOL = 1e-10
ZERO_RATIO_RTOL = 1e-12
MAX_BETA_REFINEMENTS = 30

VERY_SUCCESSFUL = "very_successful"
SUCCESSFUL = "successful"
UNSUCCESSFUL = "unsuccessful"

MONITORS = ("cauchy_decrease", "xi_cp_bound", "step_bound", "step_guard", "sigma_law", "decrease")


class InfeasibleStartError(ValueError):
    pass


class SubsolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    theta1: float = 1.0 / (1.0 + EPS ** (1 / 5))
    theta2: float = 1.0 / EPS
    eta1: float = EPS ** (1 / 4)
    eta2: float = 0.9
    gamma1: float = 3.0
    gamma2: float = 3.0
    gamma3: float = 1.0 / 3.0
    sigma0: float = EPS ** (1 / 3)
    sigma_min: float = EPS ** (2 / 3)
    atol: float = EPS ** (3 / 10)
    rtol: float = EPS ** (3 / 10)
    max_iter: int = 1000
    max_time: float = 3600.0
    memory: int = 0
    sigma_decrease_factor: float = 1.0 / 3.0
    sigma_increase_factor: float = 3.0
    inner_max_iter: int = 100
    lbfgs_memory: int = 5
    strict_monitors: bool = False

    def __post_init__(self):
        if not (0 < self.theta1 < 1 < self.theta2):
            raise ValueError("need 0 < theta1 < 1 < theta2")
        if not (0 < self.eta1 <= self.eta2 < 1):
            raise ValueError("need 0 < eta1 <= eta2 < 1")
        if not (0 < self.gamma3 <= 1 < self.gamma1 <= self.gamma2):
            raise ValueError("need 0 < gamma3 <= 1 < gamma1 <= gamma2")
        if not (self.gamma3 <= self.sigma_decrease_factor <= 1):
            raise ValueError("sigma_decrease_factor must lie in [gamma3, 1]")
        if not (self.gamma1 <= self.sigma_increase_factor <= self.gamma2):
            raise ValueError("sigma_increase_factor must lie in [gamma1, gamma2]")
        if not (0 < self.sigma_min < self.sigma0):
            raise ValueError("need 0 < sigma_min < sigma0")
        if self.memory < 0 or self.max_iter < 0:
            raise ValueError("memory and max_iter must be nonnegative")


@dataclass(frozen=True)
class TraceRow:
    k: int
    f_plus_h: float
    sigma: float
    nu: float
    measure: float
    rho: float
    status: str
    note: str = ""


@dataclass
class SolverState:
    k: int
    x: np.ndarray
    sigma: float
    memory: int
    history: deque
    nu: float = math.nan
    xi_cp: float = math.nan
    classification: str = ""
    n_success: int = 0
    n_fail: int = 0


@dataclass(frozen=True)
class RunRecord:
    solver: str
    status: str
    x: np.ndarray
    f: float
    h: float
    lam: float
    measure: float
    nf: int
    ngrad: int
    nprox: int
    njprod: int
    time_s: float
    iterations: int
    n_success: int
    n_fail: int
    trace: tuple = ()
    violations: dict = field(default_factory=dict)
    notes: tuple = ()
    uses_jacobian: bool = False
    delta_f_plus_h: float = math.nan
    error: Optional[str] = None
    h_base: Optional[float] = None

    @property
    def f_plus_h(self):
        return self.f + self.h

    @property
    def h_over_lam(self):
        if self.h_base is not None:
            return self.h_base
        return self.h / self.lam if self.lam > 0 else 0.0

    @property
    def num_grad_or_j(self):
        return self.njprod if self.uses_jacobian else self.ngrad

    @property
    def total_violations(self):
        return sum(self.violations.values())


def subsolver_tolerance(xi_cp, nu, k):
    """Inner stopping threshold on the inner stationarity measure."""
    if k == 0:
        return 1e-3
    r = xi_cp / nu
    return min(r ** 1.5, 1e-3 * math.sqrt(r))


def nonmonotone_reference(state):
    """Largest f + h over the most recent successful iterates retained by ``state``."""
    q = state.memory
    qk = 1 if q == 0 else max(1, min(state.k, q))
    recent = list(state.history)[-qk:]
    return max(recent)


def _ratio(num, den, scale):
    """Acceptance ratio with the conventions of extended arithmetic.

    Returns ``(rho, note)``. Infinite denominators give 0 (including
    inf/inf). Tiny numerator and denominator are treated as an exact model
    (rho = 1) when the numerator is nonnegative and as a failure otherwise.
    """
    if not np.isfinite(den) or np.isnan(num):
        return 0.0, "nonfinite"
    if not np.isfinite(num):
        return (-math.inf if num < 0 else 0.0), "nonfinite"
    tiny = ZERO_RATIO_RTOL * (1.0 + abs(scale))
    if abs(num) < tiny and abs(den) < tiny:
        return (1.0 if num >= 0 else 0.0), "zero_over_zero"
    if den <= 0:
        return 0.0, "nonpositive_model_decrease"
    return num / den, ""


def _classify(rho, opts):
    if rho >= opts.eta2:
        return VERY_SUCCESSFUL
    if rho >= opts.eta1:
        return SUCCESSFUL
    return UNSUCCESSFUL


def _sigma_in_law(old, new, cls, opts):
    lo, hi = {
        VERY_SUCCESSFUL: (opts.gamma3 * old, old),
        SUCCESSFUL: (old, opts.gamma1 * old),
        UNSUCCESSFUL: (opts.gamma1 * old, opts.gamma2 * old),
    }[cls]
    slack = 1e-12 * old
    # the sigma_min floor may keep sigma at old on a very successful iteration
    return lo - slack <= new <= hi + slack


def _cauchy_step_and_scale(ctx, B, beta, opts):
    """Cauchy step, raising beta until the Rayleigh quotient along s_cp does not exceed it.

    ``s_cp^T B s_cp <= beta ||s_cp||^2`` is exactly what makes any step with
    m(s) <= m(s_cp) satisfy Cauchy decrease; beta stays a lower estimate of
    ||B|| throughout. Returns ``(ctx, s_cp, xi_cp, nprox, refined)``.
    """
    nprox = 0
    refined = False
    for _ in range(MAX_BETA_REFINEMENTS):
        s_cp, xi_cp = cauchy_step(ctx)
        nprox += 1
        if not np.isfinite(xi_cp) or isinstance(B, ZeroModel):
            break
        ss = float(s_cp @ s_cp)
        if ss == 0.0:
            break
        rq = B.quad(s_cp) / ss
        if rq <= beta * (1.0 + 1e-12):
            break
        beta = rq
        refined = True
        ctx = replace(ctx, nu=opts.theta1 / (beta + ctx.sigma))
    return ctx, s_cp, xi_cp, nprox, refined


def _outer_loop(prob, h, x0, B, step_fn, opts, name, sigma0, *, refresh_jacobian=False,
                uses_jacobian=False, callback=None, inclusive_stop=False, monitors=True):
    x = np.array(x0, dtype=float)
    if x.shape != (prob.n,):
        raise ValueError(f"x0 must have length {prob.n}")
    start = prob.counters()
    t0 = time.perf_counter()
    hx = h.value(x)
    if not np.isfinite(hx):
        raise InfeasibleStartError("h must be finite at x0")
    fx = prob.obj(x)
    if not np.isfinite(fx):
        raise ValueError(f"f(x0) is not finite: {fx}")
    gx = prob.grad(x)

    state = SolverState(k=0, x=x, sigma=sigma0, memory=opts.memory,
                        history=deque([fx + hx], maxlen=max(opts.memory, 1)))
    violations = dict.fromkeys(MONITORS, 0)
    trace = []
    notes = []
    nprox = 0
    ref_measure = None
    measure = math.inf
    status = None

    def flag(key):
        violations[key] += 1
        if opts.strict_monitors:
            raise AssertionError(f"{name}: {key} violated at iteration {state.k}")

    while True:
        k = state.k
        sigma = state.sigma
        if refresh_jacobian:
            B.set_jacobian(prob.jacobian(x))
        beta = B.norm_estimate()
        ctx = ModelContext(x, fx, gx, B, h, sigma, opts.theta1 / (beta + sigma), opts.theta1, hx)
        ctx, s_cp, xi_cp, used, refined = _cauchy_step_and_scale(ctx, B, beta, opts)
        nprox += used
        nu = ctx.nu
        state.nu, state.xi_cp = nu, xi_cp
        note = "beta_refined" if refined else ""

        if np.isfinite(xi_cp):
            measure = stationarity_measure(xi_cp, nu)
            if ref_measure is None:
                ref_measure = measure
            threshold = opts.atol + opts.rtol * ref_measure
            if measure < threshold or (inclusive_stop and measure <= threshold):
                status = "first_order"
                break
        if k >= opts.max_iter:
            status = "max_iter"
            break
        if time.perf_counter() - t0 > opts.max_time:
            status = "max_time"
            break

        scale = 1.0 + abs(fx + hx)
        tol = MONITOR_RTOL * scale
        if np.isfinite(xi_cp):
            s, used, step_note = step_fn(ctx, s_cp, xi_cp, k)
            nprox += used
            note = "+".join(t for t in (note, step_note) if t)
            ns, ncp = np.linalg.norm(s), np.linalg.norm(s_cp)
            if ns > opts.theta2 * ncp:
                s, ns = s_cp, ncp
                note = "+".join(t for t in (note, "step_reset") if t)
            pred = xi_full(ctx, s)
            if monitors:
                if ns > opts.theta2 * ncp * (1 + 1e-12):
                    flag("step_guard")
                if xi_cp < 0.5 / nu * ncp**2 - MONITOR_RTOL * (scale + xi_cp):
                    flag("xi_cp_bound")
                if xi_cp < 0.5 / (opts.theta2**2 * nu) * ns**2 - MONITOR_RTOL * (scale + xi_cp):
                    flag("step_bound")
                if pred < (1 - opts.theta1) * xi_cp - tol:
                    flag("cauchy_decrease")
        else:
            # the prox left dom h: phi + psi is +inf at the trial point
            s, pred = s_cp, -math.inf
            note = "+".join(t for t in (note, "prox_outside_domain") if t)

        x_trial = x + s
        h_trial = h.value(x_trial)
        f_trial = prob.obj(x_trial)
        ref_val = nonmonotone_reference(state)
        num = ref_val - (f_trial + h_trial)
        den = (ref_val - (fx + hx)) + pred
        rho, rho_note = _ratio(num, den, ref_val)
        if rho_note:
            note = "+".join(t for t in (note, rho_note) if t)
        cls = _classify(rho, opts)

        trace.append(TraceRow(k, fx + hx, sigma, nu, measure if np.isfinite(xi_cp) else math.inf,
                              rho, cls, note))
        if note and note not in notes:
            notes.append(note)

        if cls == UNSUCCESSFUL:
            state.n_fail += 1
            new_sigma = sigma * opts.sigma_increase_factor
        else:
            state.n_success += 1
            if monitors:
                if opts.memory == 0 and f_trial + h_trial > (fx + hx) + tol:
                    flag("decrease")
                if f_trial + h_trial > ref_val + tol:
                    flag("decrease")
            gnew = prob.grad(x_trial)
            if not isinstance(B, GaussNewtonModel):
                B.update(s, gnew - gx)
            x, fx, hx, gx = x_trial, f_trial, h_trial, gnew
            state.history.append(fx + hx)
            state.x = x
            new_sigma = max(sigma * opts.sigma_decrease_factor, opts.sigma_min) if cls == VERY_SUCCESSFUL else sigma
        if monitors and not _sigma_in_law(sigma, new_sigma, cls, opts):
            # the floor at sigma_min is the only sanctioned exception
            if not (cls == VERY_SUCCESSFUL and new_sigma == opts.sigma_min and new_sigma <= sigma):
                flag("sigma_law")
        state.sigma = new_sigma
        state.classification = cls
        state.k += 1
        if callback is not None:
            callback(trace[-1])

    end = prob.counters()
    lam = getattr(h, "lam", 0.0)
    h_base = h.base_value(x) if hasattr(h, "base_value") else None
    return RunRecord(
        solver=name, status=status, x=x, f=fx, h=hx, lam=lam, measure=measure,
        nf=end["nf"] - start["nf"], ngrad=end["ngrad"] - start["ngrad"], nprox=nprox,
        njprod=end["njprod"] - start["njprod"], time_s=time.perf_counter() - t0,
        iterations=state.k, n_success=state.n_success, n_fail=state.n_fail,
        trace=tuple(trace), violations=violations, notes=tuple(notes), uses_jacobian=uses_jacobian,
        h_base=h_base,
    )


def _cauchy_only(ctx, s_cp, xi_cp, k):
    return s_cp, 0, ""


def _diagonal_step(ctx, s_cp, xi_cp, k):
    """Closed-form minimizer of the model for diagonal B (R2DH)."""
    B, h, x, g, sigma = ctx.B, ctx.h, ctx.x, ctx.gx, ctx.sigma
    note = ""
    if B.kind == "spectral":
        w = B.tau + sigma
        s = h.prox(1.0 / w, x - g / w) - x
    else:
        d = B.diagonal
        dt = d + sigma
        eps = 1e-12 * (1.0 + np.abs(d))
        if np.any(dt <= eps):
            dt = np.maximum(dt, eps)
            note = "curvature_clamped"
        s = h.shifted_prox_separable(x, g, dt)
    if model_value(ctx, s) > model_value(ctx, s_cp):
        return s_cp, 1, "+".join(t for t in (note, "cauchy_fallback") if t)
    return s, 1, note


def _model_objective(ctx):
    """The smooth part of m(.; x, sigma) as a SmoothObjective in the step variable."""
    fx, g, B, sigma = ctx.fx, ctx.gx, ctx.B, ctx.sigma
    cache = {"s": None, "Bs": None}

    def Bs_of(s):
        if cache["s"] is None or not np.array_equal(cache["s"], s):
            cache["s"] = s.copy()
            cache["Bs"] = B.apply(s)
        return cache["Bs"]

    def f(s):
        return fx + float(g @ s) + 0.5 * float(s @ Bs_of(s)) + 0.5 * sigma * float(s @ s)

    def grad(s):
        return g + Bs_of(s) + sigma * s

    return SmoothObjective(g.size, f, grad, name="model")


def _make_inner_step(subsolver, kind, opts):
    if subsolver not in ("r2", "r2dh"):
        raise ValueError(f"unknown subsolver {subsolver!r}")
    inner_opts = replace(opts, rtol=0.0, memory=0, max_iter=opts.inner_max_iter,
                         max_time=math.inf, strict_monitors=False)

    def step(ctx, s_cp, xi_cp, k):
        tol = subsolver_tolerance(xi_cp, ctx.nu, k)
        model = _model_objective(ctx)
        hs = ShiftedRegularizer(ctx.h, ctx.x)
        # inner step length starts at the outer Cauchy step length
        sigma0 = ctx.theta1 / ctx.nu
        o = replace(inner_opts, atol=tol, sigma0=sigma0, sigma_min=min(opts.sigma_min, sigma0 / 2))
        if subsolver == "r2":
            B_in, step_fn = ZeroModel(model.n), _cauchy_only
        else:
            if kind != "spectral" and not hs.separable:
                raise SubsolverError(f"r2dh with {kind} needs a separable regularizer")
            B_in, step_fn = make_hessian(kind, model.n), _diagonal_step
        try:
            rec = _outer_loop(model, hs, s_cp, B_in, step_fn, o, "inner", sigma0,
                              inclusive_stop=True, monitors=False)
        except Exception as exc:
            raise SubsolverError(f"inner {subsolver} failed at outer iteration {k}: {exc}") from exc
        s = rec.x
        if model_value(ctx, s) > model_value(ctx, s_cp):
            return s_cp, rec.nprox, "cauchy_fallback"
        return s, rec.nprox, ""

    return step


def _opts(opts, overrides):
    opts = opts or SolverOptions()
    return replace(opts, **overrides) if overrides else opts


def r2n_solve(prob, h, x0, B=None, subsolver="r2", opts=None, subsolver_kind="spectral",
              callback=None, name=None, **overrides):
    """R2N with model Hessian ``B`` (L-BFGS by default) and an inner R2 or R2DH subsolver."""
    opts = _opts(opts, overrides)
    if B is None:
        B = make_hessian("lbfgs", prob.n, memory=opts.lbfgs_memory)
    step = _make_inner_step(subsolver, subsolver_kind, opts)
    name = name or f"R2N-{subsolver.upper()}"
    return _outer_loop(prob, h, x0, B, step, opts, name, opts.sigma0, callback=callback)


def r2_solve(prob, h, x0, opts=None, callback=None, name="R2", **overrides):
    """Proximal gradient with adaptive step: R2N with B = 0 and s = s_cp.

    sigma0 is set to theta1 so that the first step length is nu0 = 1.
    """
    opts = _opts(opts, overrides)
    opts = replace(opts, sigma0=opts.theta1, sigma_min=min(opts.sigma_min, opts.theta1 / 2))
    return _outer_loop(prob, h, x0, ZeroModel(prob.n), _cauchy_only, opts, name, opts.sigma0,
                       callback=callback)


def r2dh_solve(prob, h, x0, kind="spectral", opts=None, callback=None, name=None, **overrides):
    """R2N with a diagonal quasi-Newton model and closed-form steps."""
    opts = _opts(opts, overrides)
    if kind != "spectral" and not h.separable:
        raise ValueError(f"R2DH with {kind} requires a separable regularizer")
    B = make_hessian(kind, prob.n)
    if not isinstance(B, DiagonalModel):
        raise ValueError(f"{kind} is not a diagonal model")
    name = name or f"R2DH-{kind}"
    return _outer_loop(prob, h, x0, B, _diagonal_step, opts, name, opts.sigma0, callback=callback)


def lm_solve(prob, h, x0, subsolver="r2", opts=None, subsolver_kind="spectral", callback=None,
             name=None, **overrides):
    """Levenberg-Marquardt: R2N with B_k = J_k^T J_k refreshed at every iterate."""
    if not prob.has_residual:
        from .problems import MissingResidualError

        raise MissingResidualError(f"{prob.name} has no residual structure")
    opts = _opts(opts, overrides)
    B = GaussNewtonModel(prob.n)
    step = _make_inner_step(subsolver, subsolver_kind, opts)
    name = name or f"LM-{subsolver.upper()}"
    return _outer_loop(prob, h, x0, B, step, opts, name, opts.sigma0, refresh_jacobian=True,
                       uses_jacobian=True, callback=callback)
