"""The linear equation  Lap_Omega alpha - (n-3) alpha = M  on S^{n-1}.

M = ((n-2)/2) tr_Omega(m) + tr_Omega(p).  Constant sources are solved
algebraically.  Zonal sources (functions of the polar angle only) reduce to

    sin^{2-n}(t) d/dt( sin^{n-2}(t) d alpha/dt ) - (n-3) alpha = M(t),

discretized in conservative finite-volume form on a uniform polar grid with
even reflection through the poles.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.special import roots_gegenbauer, roots_legendre

from .errors import DomainError, NumericalError


class ZonalFunction:
    """A function of the polar angle on S^{n-1}: a constant, a callable, or
    samples on a uniform grid of [0, pi] (interpolated with clamped splines,
    so odd derivatives vanish at the poles)."""

    def __init__(self, n, constant=None, func=None, theta=None, values=None):
        self.n = n
        self.constant = None if constant is None else float(constant)
        self.func = func
        self.theta = None if theta is None else np.asarray(theta, dtype=float)
        self.values = None if values is None else np.asarray(values, dtype=float)
        self._spline = None
        if self.values is not None:
            self._spline = CubicSpline(self.theta, self.values, bc_type="clamped")
        if sum(x is not None for x in (self.constant, func, self.values)) != 1:
            raise DomainError("ZonalFunction needs exactly one representation")

    @property
    def is_constant(self):
        return self.constant is not None

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.is_constant:
            return np.full_like(theta, self.constant)
        if self.func is not None:
            return np.asarray(self.func(theta), dtype=float) + 0.0 * theta
        return self._spline(theta)

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.is_constant:
            return np.zeros_like(theta)
        if self._spline is not None:
            return self._spline(theta, 1)
        h = 1e-5
        return (self(theta + h) - self(theta - h)) / (2 * h)

    def mean(self, degree=64):
        """Average over the sphere, by Gauss-Gegenbauer quadrature in cos(theta)."""
        if self.is_constant:
            return self.constant
        x, w = roots_gegenbauer(degree, (self.n - 2) / 2.0)
        return float(np.sum(w * self(np.arccos(x))) / np.sum(w))


def trace_source(model):
    n = model.n
    if model.is_spherical:
        return ZonalFunction(n, constant=(n - 2) / 2.0 * model.m_trace + model.p_trace)
    mt, pt = model.m_trace, model.p_trace

    def M(theta):
        from .geometry import _eval_trace

        return (n - 2) / 2.0 * _eval_trace(mt, theta) + _eval_trace(pt, theta)

    return ZonalFunction(n, func=M)


_GX, _GW = roots_legendre(8)


def _sin_power_integral(n, lo, hi):
    t = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * _GX
    return 0.5 * (hi - lo) * (np.sin(t) ** (n - 2) @ _GW)


def zonal_operator_bands(n, N):
    """Banded matrix of Lap_Omega - (n-3) on theta_i = i pi / N, i = 0..N.

    Finite-volume form: node i owns the cell between the neighbouring
    midpoints, weighted by its exact sin^{n-2} volume.  The pole cells are
    half cells with a single flux face, which is the even-reflection ghost
    condition written conservatively (the row tends to (n-1) alpha'').
    """
    h = np.pi / N
    th = np.linspace(0.0, np.pi, N + 1)
    mid = th[:-1] + 0.5 * h
    s_half = np.sin(mid) ** (n - 2)
    edges_lo = np.concatenate([[0.0], mid])
    edges_hi = np.concatenate([mid, [np.pi]])
    V = _sin_power_integral(n, edges_lo, edges_hi)
    lo = np.concatenate([[0.0], s_half]) / (h * V)
    up = np.concatenate([s_half, [0.0]]) / (h * V)
    ab = np.zeros((3, N + 1))  # rows: upper, diag, lower
    ab[1] = -(lo + up) - (n - 3)
    ab[0, 1:] = up[:-1]
    ab[2, :-1] = lo[1:]
    return ab, th


def apply_bands(ab, x):
    y = ab[1] * x
    y[:-1] += ab[0, 1:] * x[1:]
    y[1:] += ab[2, :-1] * x[:-1]
    return y


def solve_alpha(model, N=2048, source=None):
    """alpha with Lap_Omega alpha - (n-3) alpha = M (the mass-aspect source)."""
    n = model.n
    M = trace_source(model) if source is None else source
    if M.is_constant:
        alpha = ZonalFunction(n, constant=-M.constant / (n - 3))
        alpha.residual = 0.0
        return alpha
    ab, th = zonal_operator_bands(n, N)
    rhs = M(th)
    if not np.all(np.isfinite(rhs)):
        raise DomainError("source M is not finite")
    sol = solve_banded((1, 1), ab, rhs)
    res = float(np.max(np.abs(apply_bands(ab, sol) - rhs)))
    if not np.isfinite(res) or res > 1e-6 * max(1.0, float(np.max(np.abs(rhs)))):
        raise NumericalError("zonal alpha solve left a large residual", {"residual": res})
    alpha = ZonalFunction(n, theta=th, values=sol)
    alpha.residual = res
    return alpha
