"""Barrier ODEs for the radial Jang equation.

The graph of phi(r) over the hyperbolic slice is parametrized by the radial
slope variable

    k = sqrt(1+r^2) phi' / sqrt(1 + (1+r^2) phi'^2),

and the Jang operator of the ansatz f = alpha/r^{n-3} + phi is squeezed between
two first-order expressions J_-(k) <= normalized J(f) <= J_+(k).  The upper
barrier solves J_+(k_+) = 0 with k_+(r0) = -1 and the lower one solves
J_-(k_-) = 0 with k_-(r0) = +1; both approach the hyperboloid slope
r/sqrt(1+r^2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import roots_legendre

from .errors import BarrierFailure, DegenerateMetricError, DomainError, NumericalError
from .geometry import graph_geometry_at

SIGNS = {"+": 1.0, "-": -1.0, 1: 1.0, -1: -1.0, "plus": 1.0, "minus": -1.0}


@dataclass(frozen=True)
class BarrierConstants:
    C1: float
    C2: float
    C3: float
    C4: float
    r0: float
    epsilon: float = 0.5

    def scaled(self, factor):
        return replace(self, C1=self.C1 * factor, C2=self.C2 * factor,
                       C3=self.C3 * factor, C4=self.C4 * factor)


def _sign(sign):
    try:
        return SIGNS[sign]
    except KeyError:
        raise DomainError(f"barrier sign must be '+' or '-', got {sign!r}") from None


def _one_minus_s(r):
    q = np.sqrt(1.0 + r * r)
    return 1.0 / (q * (q + r))


def _c_terms(k, omk2, omk, r, c, n):
    """Sum of the C1..C4 correction terms (all nonnegative)."""
    q = np.sqrt(1.0 + r * r)
    sq = np.sqrt(omk2)
    C1 = c.C1
    t1 = (sq / q) * C1 / r ** (n - 2) * np.abs(
        omk2 * q * q / r * (n - 3)
        + 1.0 / r
        - (n - 1) * q * q / r
        - 2 * (n - 1) * q * q / r * k * k
        + q * k * omk2
        + 3 * (n - 1) * q * k
    )
    t2 = C1**2 / r ** (2 * (n - 2)) * q * omk2 * np.abs(
        -2 * (n - 1) * k * r * r / (q * q)
        + q / r * (n - 1) * k
        - omk2 * 0.5 * (1 + 3 * k * k)
        - (n - 1) * 1.5 * (1 + k * k)
    )
    t3 = C1**3 / r ** (3 * (n - 2)) * q * q * omk2**1.5 * np.abs(
        (n - 1) * q / r - 0.5 * k * (3 + 5 * k * k) - 0.5 * k * (3 + k * k)
    )
    poly = 0.375 * (-1 + 2 * k * k + k**4)
    t4 = C1**4 / r ** (4 * (n - 2)) * omk2**2 * q**3 * np.abs(omk2 * poly + (n - 1) * poly)
    t5 = c.C2 * np.abs(sq / r**n - 1.0 / r ** (n + 1))
    t6 = c.C3 * np.abs(omk) / r ** (n + 1)
    t7 = c.C4 / r ** (n + 2)
    return t1 + t2 + t3 + t4 + t5 + t6 + t7


def barrier_rhs(sign, k, r, c, n):
    """Forcing F with k' + F = J_+(k) (sign '+') or J_-(k) (sign '-')."""
    sg = _sign(sign)
    k = np.asarray(k, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(k) > 1):
        raise DomainError("barrier_rhs needs |k| <= 1")
    if np.any(r <= 0):
        raise DomainError("barrier_rhs needs r > 0")
    q = np.sqrt(1.0 + r * r)
    omk2 = np.maximum(1.0 - k * k, 0.0)
    base = (n - 1) / r * (k - r / q) - omk2 / q
    return base + sg * _c_terms(k, omk2, 1.0 - k, r, c, n)


def barrier_residual(sign, k, k_prime, r, c, n):
    """J_+(k) or J_-(k) including the derivative term."""
    return k_prime + barrier_rhs(sign, k, r, c, n)


def _dev_state(r, g):
    """1 - k^2 and 1 - k from the deviation g = k - r/sqrt(1+r^2), cancellation free."""
    s = r / np.sqrt(1.0 + r * r)
    omk2 = 1.0 / (1.0 + r * r) - 2.0 * s * g - g * g
    return s + g, np.maximum(omk2, 0.0), _one_minus_s(r) - g


def _scaled_rhs(sg, c, n):
    # state y = r^{n+1} (k - r/sqrt(1+r^2)); y stays bounded along barriers
    def rhs(r, y):
        g = y[0] / r ** (n + 1)
        k, omk2, omk = _dev_state(r, g)
        q = np.sqrt(1.0 + r * r)
        gp = -(n - 1) / r * g - (2 * (r / q) * g + g * g) / q - sg * _c_terms(k, omk2, omk, r, c, n)
        return [gp * r ** (n + 1) + (n + 1) * y[0] / r]

    return rhs


class BarrierProfile:
    """Solution k(r) of J_+(k) = 0 or J_-(k) = 0 on [r0, r_max]."""

    def __init__(self, sign, c, n, r_max, sol, r_nodes, k_nodes):
        self.sign = sign
        self.c = c
        self.n = n
        self.r0 = c.r0
        self.r_max = r_max
        self._sol = sol
        self.r = r_nodes
        self.k = k_nodes

    def deviation(self, r):
        """k - r/sqrt(1+r^2) from the dense output."""
        r = np.asarray(r, dtype=float)
        y = self._sol(r)[0]
        return y / r ** (self.n + 1)

    def state(self, r):
        return _dev_state(np.asarray(r, dtype=float), self.deviation(r))

    def __call__(self, r):
        return self.state(r)[0]

    def k_prime(self, r):
        k = self(r)
        return -barrier_rhs(self.sign, np.clip(k, -1, 1), r, self.c, self.n)


def barrier_nodes(r0, r_max, N=400):
    """Output radii: clustered at the anchor, then geometric to r_max."""
    near = r0 + r0 * np.geomspace(1e-10, 1e-2, 60)
    far = np.geomspace(r0 * 1.02, r_max, N)
    return np.unique(np.concatenate([[r0], near, far]))


def integrate_k(sign, c, r_max, n, r_nodes=None, rtol=1e-10, atol=1e-12, k_start=None):
    """k_+ from k(r0) = -1 or k_- from k(r0) = +1 (``k_start`` overrides)."""
    sg = _sign(sign)
    r0 = c.r0
    if not r_max > r0:
        raise DomainError("integrate_k needs r_max > r0")
    k0 = -sg if k_start is None else float(k_start)  # k_+(r0) = -1, k_-(r0) = +1
    y0 = (k0 - r0 / np.sqrt(1 + r0 * r0)) * r0 ** (n + 1)

    def hits_pm1(r, y):
        k, omk2, omk = _dev_state(r, y[0] / r ** (n + 1))
        return (1.0 - k * k) if r > r0 * (1 + 1e-12) else 1.0

    hits_pm1.terminal = True
    hits_pm1.direction = -1
    sol = solve_ivp(
        _scaled_rhs(sg, c, n), (r0, r_max), [y0], method="RK45",
        rtol=rtol, atol=atol, dense_output=True, events=hits_pm1,
    )
    if sol.status == 1 or (sol.t_events and sol.t_events[0].size):
        rb = float(sol.t_events[0][0])
        raise BarrierFailure(
            f"|k_{'+' if sg > 0 else '-'}| reached 1 at r={rb:.6g}; r0={r0:.6g} is too small",
            {"radius": rb, "r0": r0},
        )
    if not sol.success:
        raise NumericalError(f"barrier integration failed: {sol.message}")
    if r_nodes is None:
        r_nodes = barrier_nodes(r0, r_max)
    prof = BarrierProfile("+" if sg > 0 else "-", c, n, r_max, sol.sol, r_nodes, None)
    k = prof(r_nodes)
    k[0] = k0
    prof.k = k
    interior = np.abs(k[1:])
    if np.any(interior >= 1.0):
        rb = float(r_nodes[1:][np.argmax(interior >= 1.0)])
        raise BarrierFailure(f"|k| reached 1 at r={rb:.6g}", {"radius": rb, "r0": r0})
    return prof


def _phi_prime_minus_s(r, k, omk2, g):
    """phi' - r/sqrt(1+r^2) with phi' = k / sqrt((1-k^2)(1+r^2))."""
    q = np.sqrt(1.0 + r * r)
    sq = np.sqrt(omk2)
    den = k + r * sq
    s = r / q
    safe = den > 0.5 * (np.abs(k) + r * sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        stable = q * g * (2 * s + g) / (np.where(safe, den, 1.0) * sq)
        direct = (k / sq - r) / q
    return np.where(safe, stable, direct)


@dataclass
class BarrierFunction:
    """phi and f = phi + alpha_mean / r^{n-3} on the nodes of a k profile."""

    sign: str
    r: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    phi_dev: np.ndarray  # phi - sqrt(1+r^2)
    alpha_mean: float
    n: int
    profile: BarrierProfile

    def phi_prime(self, r):
        k, omk2, _ = self.profile.state(r)
        return k / np.sqrt(omk2 * (1.0 + np.asarray(r) ** 2))

    def f_prime(self, r):
        r = np.asarray(r, dtype=float)
        return self.phi_prime(r) - (self.n - 3) * self.alpha_mean / r ** (self.n - 2)

    def f_at(self, r):
        """f at arbitrary radii in [r0, r_max] by quadrature from the nearest node."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        j = np.clip(np.searchsorted(self.r, r), 1, self.r.size - 1)
        base_r = self.r[j]
        dev = self.phi_dev[j] - _segment_integrals(self.profile, r, base_r)
        return dev + np.sqrt(1 + r * r) + self.alpha_mean / r ** (self.n - 3)


_GL_X, _GL_W = roots_legendre(12)


def _segment_integrals(profile, a, b):
    """int_a^b (phi' - s) dr, substituting u = sqrt(r - r0) against the
    inverse square-root singularity at the anchor."""
    r0 = profile.r0
    ua = np.sqrt(np.maximum(a - r0, 0.0))
    ub = np.sqrt(np.maximum(b - r0, 0.0))
    mid = 0.5 * (ua + ub)
    half = 0.5 * (ub - ua)
    u = mid[:, None] + half[:, None] * _GL_X[None, :]
    rr = r0 + u * u
    g = profile.deviation(rr.ravel()).reshape(rr.shape)
    k, omk2, _ = _dev_state(rr, g)
    vals = _phi_prime_minus_s(rr, k, omk2, g) * 2 * u
    return half * (vals @ _GL_W)


def reconstruct_f(sign, profile, alpha_mean, n):
    r = profile.r
    seg = _segment_integrals(profile, r[:-1], r[1:])
    if not np.all(np.isfinite(seg)):
        raise NumericalError("quadrature of phi' blew up", {"sign": sign})
    # phi(r_max) = sqrt(1 + r_max^2); integrate inward
    dev = np.zeros_like(r)
    dev[:-1] = -np.cumsum(seg[::-1])[::-1]
    phi = np.sqrt(1 + r * r) + dev
    f = phi + alpha_mean / r ** (n - 3)
    return BarrierFunction(profile.sign, r, phi, f, dev, float(alpha_mean), n, profile)


def pi_factor(k, r, alpha, n, dalpha=0.0):
    """The factor Pi = 1/((1-k^2)(1+|df|^2)) for f = alpha/r^{n-3} + phi."""
    omk2 = 1.0 - k * k
    q = np.sqrt(1.0 + r * r)
    den = (
        1.0
        - 2 * q * alpha * (n - 3) * r ** (-(n - 2)) * k * np.sqrt(omk2)
        + q * q * (n - 3) ** 2 * alpha**2 * r ** (-2 * (n - 2)) * omk2
        + r ** (-2 * (n - 3)) * dalpha**2 * omk2
    )
    return 1.0 / den


def normalized_jang_residual(model, alpha_mean, k, r, k_prime=0.0):
    """J(f)/(sqrt(1+r^2) Pi^{3/2}) for the ansatz f = alpha/r^{n-3} + phi, with
    phi' fixed by k and phi'' by (k, k')."""
    n = model.n
    k = np.asarray(k, dtype=float)
    r = np.asarray(r, dtype=float)
    omk2 = 1.0 - k * k
    if np.any(omk2 <= 0):
        raise DomainError("normalized_jang_residual needs |k| < 1")
    q = np.sqrt(1.0 + r * r)
    php = k / np.sqrt(omk2 * q * q)
    phpp = k_prime / (omk2**1.5 * q) - k * r / (np.sqrt(omk2) * q**3)
    a = alpha_mean
    fp = php - (n - 3) * a * r ** (-(n - 2))
    fpp = phpp + (n - 3) * (n - 2) * a * r ** (-(n - 1))
    geo = graph_geometry_at(model, 0.0, fp, fpp, r)
    Pi = pi_factor(k, r, a, n)
    if np.any(Pi <= 0):
        raise DegenerateMetricError("Pi factor is not positive")
    return geo.J / (q * Pi**1.5), Pi


def fit_decay_exponent(r, series, window):
    """Slope of log|series| against log r over the window."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(series, dtype=float)
    sel = (r >= window[0]) & (r <= window[1])
    if sel.sum() < 3:
        raise NumericalError("decay fit needs at least 3 samples in the window")
    ys = y[sel]
    if np.any(ys == 0) or (np.any(ys > 0) and np.any(ys < 0)):
        raise NumericalError("series changes sign or vanishes in the fit window")
    return float(np.polyfit(np.log(r[sel]), np.log(np.abs(ys)), 1)[0])


def _rounding_floor(model, k, r):
    # J = H - tr k loses about (|H| + |tr k|) eps when evaluated directly
    n = model.n
    return 64 * np.finfo(float).eps * (2 * n) / np.sqrt(1 + r * r)


def remainder_bound(model, alpha_mean, C1, C2, C3, r_lo, r_hi=1e3, nr=60, nk=401):
    """sup of r^{n+2} times the part of |normalized J - J_0| that the C1..C3
    terms do not cover, over a (k, r) grid.  Rounding noise is discounted."""
    n = model.n
    probe = BarrierConstants(C1, C2, C3, 0.0, r_lo)
    zero = BarrierConstants(0.0, 0.0, 0.0, 0.0, r_lo)
    k = np.tanh(np.linspace(-6.0, 6.0, nk))
    worst = 0.0
    for r in np.geomspace(r_lo, r_hi, nr):
        G, _ = normalized_jang_residual(model, alpha_mean, k, r, 0.0)
        F0 = barrier_rhs("+", k, r, zero, n)
        T = _c_terms(k, 1 - k * k, 1 - k, r, probe, n)
        excess = np.abs(G - F0) - T - _rounding_floor(model, k, r)
        worst = max(worst, float(np.max(excess)) * r ** (n + 2))
    return worst


def sign_conditions_hold(c, n, r):
    """J_+(+1) > 0, J_+(-1) < 0, J_-(+1) > 0, J_-(-1) < 0 at radius r."""
    return (
        barrier_rhs("+", 1.0, r, c, n) > 0
        and barrier_rhs("+", -1.0, r, c, n) < 0
        and barrier_rhs("-", 1.0, r, c, n) > 0
        and barrier_rhs("-", -1.0, r, c, n) < 0
    )


def choose_r0(c, n, r_lo, r_hi=1e3, margin=0.1, samples=2000):
    """Smallest scanned radius beyond which all four sign conditions hold,
    inflated by the margin."""
    rs = np.geomspace(r_lo, r_hi, samples)
    ok = np.array([sign_conditions_hold(c, n, r) for r in rs])
    if not ok[-1]:
        raise BarrierFailure("barrier sign conditions fail up to the scan limit", {"r_hi": r_hi})
    bad = np.nonzero(~ok)[0]
    r_star = rs[bad[-1] + 1] if bad.size else rs[0]
    return float((1.0 + margin) * r_star)


def model_lower_radius(model):
    """A radius safely above the degeneration of the model's sphere factor."""
    mb = float(np.min(np.atleast_1d(model.m_bar(np.linspace(0, np.pi, 65)))))
    return max(0.5, 1.5 * max(-mb, 0.0) ** (1.0 / model.n))


def default_constants(model, alpha=None, epsilon=0.5, r_hi=1e3):
    """Constructive constants for the barrier systems.

    C1 = 2 max((n-3) sup|alpha|, sup|d alpha|), C2 = 2 sup|M|, C3 = n sup|tr m|,
    C4 = 2 x (numerically measured remainder bound), r0 from the sign scan.
    """
    from .sphere import solve_alpha, trace_source

    n = model.n
    if alpha is None:
        alpha = solve_alpha(model)
    M = trace_source(model)
    theta = np.linspace(0, np.pi, 257)
    sup_a = float(np.max(np.abs(alpha(theta))))
    sup_da = float(np.max(np.abs(alpha.derivative(theta))))
    sup_M = float(np.max(np.abs(M(theta))))
    sup_m = float(np.max(np.abs(np.atleast_1d(model.m_bar(theta) * (n - 1)))))
    C1 = 2.0 * max((n - 3) * sup_a, sup_da)
    C2 = 2.0 * sup_M
    C3 = n * sup_m
    r_lo = model_lower_radius(model)
    C4 = 0.0
    if model.is_spherical:
        C4 = 2.0 * remainder_bound(model, alpha.mean(), C1, C2, C3, max(r_lo, 1.0))
    c = BarrierConstants(C1, C2, C3, C4, r_lo, epsilon)
    r0 = choose_r0(c, n, r_lo, r_hi)
    return replace(c, r0=r0)


@dataclass
class BarrierPair:
    constants: BarrierConstants
    n: int
    alpha_mean: float
    r: np.ndarray
    k_plus: BarrierProfile
    k_minus: BarrierProfile
    plus: BarrierFunction
    minus: BarrierFunction
    Pi_plus: np.ndarray
    Pi_minus: np.ndarray

    def f_plus(self, r):
        return self.plus.f_at(r)

    def f_minus(self, r):
        return self.minus.f_at(r)

    def boundary_value(self, r):
        """Default Dirichlet datum (f_+ + f_-)/2."""
        return 0.5 * (self.f_plus(r) + self.f_minus(r))

    def table(self):
        return {
            "r": self.r,
            "k_plus": self.k_plus.k,
            "k_minus": self.k_minus.k,
            "f_plus": self.plus.f,
            "f_minus": self.minus.f,
            "Pi": self.Pi_plus,
        }


def build_barriers(model, r_max=1e3, constants=None, alpha=None, retries=8):
    """Integrate both barrier profiles and reconstruct f_+ and f_-.

    With automatic constants a barrier failure moves r0 out by 10% and retries.
    """
    from .sphere import solve_alpha

    n = model.n
    if alpha is None:
        alpha = solve_alpha(model)
    auto = constants is None
    c = constants or default_constants(model, alpha)
    a_mean = alpha.mean()
    for attempt in range(retries + 1):
        try:
            nodes = barrier_nodes(c.r0, r_max)
            kp = integrate_k("+", c, r_max, n, nodes)
            km = integrate_k("-", c, r_max, n, nodes)
            break
        except BarrierFailure:
            if not auto or attempt == retries:
                raise
            c = replace(c, r0=1.1 * c.r0)
    fp = reconstruct_f("+", kp, a_mean, n)
    fm = reconstruct_f("-", km, a_mean, n)
    with np.errstate(divide="ignore"):
        Pp = pi_factor(np.clip(kp.k, -1, 1), nodes, a_mean, n)
        Pm = pi_factor(np.clip(km.k, -1, 1), nodes, a_mean, n)
    return BarrierPair(c, n, a_mean, nodes, kp, km, fp, fm, Pp, Pm)
