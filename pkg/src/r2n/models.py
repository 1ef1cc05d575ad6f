"""Local models of f + h around an iterate and the Cauchy step.

With ``psi(s; x) = h(x + s)``:

* ``phi(s)   = f(x) + g^T s + s^T B s / 2``
* ``m(s)     = phi(s) + sigma ||s||^2 / 2 + h(x + s)``
* ``m_cp(s)  = f(x) + g^T s + ||s||^2 / (2 nu) + h(x + s)``

The Cauchy step minimizes ``m_cp``; its decrease ``xi_cp`` drives both the
step acceptance rule and the stationarity measure ``sqrt(xi_cp / nu)``.
"""

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

NEG_XI_RTOL = 1e-12


class NumericalInconsistencyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelContext:
    x: np.ndarray
    fx: float
    gx: np.ndarray
    B: Any
    h: Any
    sigma: float
    nu: float
    theta1: float
    hx: Optional[float] = None

    @property
    def h_at_x(self):
        return self.h.value(self.x) if self.hx is None else self.hx

    @classmethod
    def build(cls, x, fx, gx, B, h, sigma, theta1, beta=None, hx=None):
        """Context with nu = theta1 / (beta + sigma), beta defaulting to B.norm_estimate()."""
        if beta is None:
            beta = B.norm_estimate()
        return cls(x, fx, gx, B, h, sigma, theta1 / (beta + sigma), theta1, hx)


def phi_value(ctx, s):
    return ctx.fx + float(ctx.gx @ s) + 0.5 * ctx.B.quad(s)


def model_value(ctx, s):
    hs = ctx.h.value(ctx.x + s)
    if not np.isfinite(hs):
        return np.inf
    return phi_value(ctx, s) + 0.5 * ctx.sigma * float(s @ s) + hs


def cauchy_model_value(ctx, s):
    return ctx.fx + float(ctx.gx @ s) + 0.5 / ctx.nu * float(s @ s) + ctx.h.value(ctx.x + s)


def _clamp_xi(xi, scale):
    if xi < 0:
        if xi >= -NEG_XI_RTOL * (1.0 + abs(scale)):
            return 0.0
        if np.isfinite(xi):
            raise NumericalInconsistencyError(f"negative model decrease {xi:.3e}")
    return xi


def cauchy_step(ctx):
    """One proximal-gradient step from x with step length nu.

    Returns ``(s_cp, xi_cp)``. If the prox output lands where h is +inf
    (possible only for user-supplied regularizers whose prox is not exact),
    ``xi_cp`` is ``-inf`` and the caller must treat the iteration as failed.
    """
    nu = ctx.nu
    s = ctx.h.prox(nu, ctx.x - nu * ctx.gx) - ctx.x
    hx = ctx.h_at_x
    xi = hx - float(ctx.gx @ s) - ctx.h.value(ctx.x + s)
    return s, _clamp_xi(xi, ctx.fx + hx)


def stationarity_measure(xi_cp, nu):
    return float(np.sqrt(xi_cp / nu))


def xi_full(ctx, s):
    """Decrease of phi + psi along s, the denominator of the acceptance ratio."""
    hs = ctx.h.value(ctx.x + s)
    if not np.isfinite(hs):
        return -np.inf
    return ctx.h_at_x - float(ctx.gx @ s) - 0.5 * ctx.B.quad(s) - hs
