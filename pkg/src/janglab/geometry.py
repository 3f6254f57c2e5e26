"""Closed-form geometry of the exact Wang model and of radial Jang graphs.

The model data on R^n (4 <= n <= 7) in polar coordinates (r, Omega) are

    g = dr^2/(1+r^2) + (r^2 + mbar r^{-(n-2)}) Omega
    k = dr^2/(1+r^2) + (r^2 + pbar r^{-(n-2)}) Omega

with mbar = tr_Omega(m)/(n-1) and pbar = tr_Omega(p)/(n-1), either constant
(spherically symmetric data) or functions of the polar angle (zonal data).
Everything a radial graph t = f(r) over (g, k) needs is evaluated here from
exact formulas: induced metric, second fundamental form, mean curvature,
Jang residual J = H - tr_ghat(k), the one-forms q and omega, and the scalar
curvature of the induced metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import gamma

from .errors import DegenerateMetricError, DomainError

__all__ = [
    "ModelData",
    "MetricSample",
    "GraphGeometry",
    "ConstraintDensities",
    "ChristoffelTable",
    "sphere_volume",
    "background_at",
    "radial_coefficients",
    "christoffel_at",
    "constraint_densities",
    "graph_geometry_at",
    "warped_scalar_curvature",
    "warped_curvatures",
    "scalar_curvature_radial",
]

Trace = Union[float, Callable[[np.ndarray], np.ndarray]]


def sphere_volume(n):
    """Area of the unit sphere S^{n-1} in R^n, 2 pi^{n/2} / Gamma(n/2)."""
    if int(n) != n or n < 2:
        raise DomainError(f"sphere_volume needs an integer n >= 2, got {n!r}")
    return 2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0)


@dataclass(frozen=True)
class ModelData:
    """Exact Wang-type initial data.

    ``m_trace`` and ``p_trace`` are tr_Omega of the mass aspect tensors; a float
    means spherically symmetric data, a callable of the polar angle means zonal
    data.  The tensors themselves are taken pure trace, m = (tr m/(n-1)) Omega.
    """

    n: int
    m_trace: Trace = 0.0
    p_trace: Trace = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or not 4 <= self.n <= 7:
            raise DomainError(f"dimension n={self.n!r} outside the supported range 4-7")
        for name in ("m_trace", "p_trace"):
            v = getattr(self, name)
            if not callable(v) and not np.isfinite(v):
                raise DomainError(f"{name} must be finite")

    @classmethod
    def spherical(cls, n, m_bar=0.0, p_bar=0.0):
        return cls(int(n), float(m_bar) * (n - 1), float(p_bar) * (n - 1))

    @classmethod
    def hyperbolic(cls, n):
        return cls(int(n), 0.0, 0.0)

    @property
    def is_spherical(self):
        return not callable(self.m_trace) and not callable(self.p_trace)

    @property
    def is_hyperbolic(self):
        return self.is_spherical and self.m_trace == 0.0 and self.p_trace == 0.0

    def m_bar(self, theta=0.0):
        return _eval_trace(self.m_trace, theta) / (self.n - 1)

    def p_bar(self, theta=0.0):
        return _eval_trace(self.p_trace, theta) / (self.n - 1)

    def require_spherical(self, what):
        if not self.is_spherical:
            raise DomainError(f"{what} needs spherically symmetric model data")


def _eval_trace(tr, theta):
    if callable(tr):
        return np.asarray(tr(np.asarray(theta, dtype=float)), dtype=float)
    return np.zeros_like(np.asarray(theta, dtype=float)) + tr


@dataclass
class MetricSample:
    r: np.ndarray
    g_rr: np.ndarray
    g_sph: np.ndarray
    k_rr: np.ndarray
    k_sph: np.ndarray


def background_at(model, r, theta=0.0):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("background_at needs r > 0")
    n = model.n
    g_rr = 1.0 / (1.0 + r * r)
    g_sph = r * r + model.m_bar(theta) * r ** (-(n - 2))
    k_sph = r * r + model.p_bar(theta) * r ** (-(n - 2))
    if np.any(g_sph <= 0):
        bad = float(np.min(np.where(g_sph <= 0, r, np.inf)))
        raise DegenerateMetricError(f"sphere factor of g is not positive at r={bad:g}")
    return MetricSample(r, g_rr, g_sph, g_rr.copy(), k_sph)


@dataclass
class RadialCoefficients:
    """g = a dr^2 + B Omega, k = a dr^2 + K Omega and r-derivatives."""

    r: np.ndarray
    a: np.ndarray
    da: np.ndarray
    dda: np.ndarray
    B: np.ndarray
    dB: np.ndarray
    ddB: np.ndarray
    K: np.ndarray
    dK: np.ndarray


def radial_coefficients(model, r):
    model.require_spherical("radial_coefficients")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("radial coefficients need r > 0")
    n = model.n
    mb, pb = model.m_bar(), model.p_bar()
    s = 1.0 + r * r
    a = 1.0 / s
    da = -2.0 * r / s**2
    dda = (6.0 * r * r - 2.0) / s**3
    B = r * r + mb * r ** (2 - n)
    dB = 2.0 * r - (n - 2) * mb * r ** (1 - n)
    ddB = 2.0 + (n - 2) * (n - 1) * mb * r ** (-n)
    K = r * r + pb * r ** (2 - n)
    dK = 2.0 * r - (n - 2) * pb * r ** (1 - n)
    if np.any(B <= 0):
        bad = float(np.min(np.where(B <= 0, r, np.inf)))
        raise DegenerateMetricError(f"sphere factor of g is not positive at r={bad:g}")
    return RadialCoefficients(r, a, da, dda, B, dB, ddB, K, dK)


@dataclass
class ChristoffelTable:
    """Christoffel symbols of a = g_rr, B = g_sph in polar coordinates.

    Gamma^r_rr = rr_r, Gamma^r_{mu nu} = sph_r * Omega_{mu nu},
    Gamma^mu_{r nu} = r_sph * delta^mu_nu, and Gamma^mu_rr = Gamma^r_{r mu} = 0.
    The purely angular symbols are those of the round sphere; ``full`` expands
    everything in hyperspherical angles.
    """

    n: int
    r: float
    rr_r: float
    sph_r: float
    r_sph: float
    sph_rr: float = 0.0
    rr_sph: float = 0.0
    a: float = 1.0
    da: float = 0.0
    B: float = 1.0
    dB: float = 0.0

    def full(self, angles):
        """All Gamma^a_{bc} in coordinates (r, theta_1, ..., theta_{n-1})."""
        n = self.n
        angles = np.asarray(angles, dtype=float)
        w, dw = _sphere_weights(angles)
        G = np.empty(n)
        dG = np.zeros((n, n))  # dG[c, a] = d_c G_a
        G[0] = self.a
        G[1:] = self.B * w
        dG[0, 0] = self.da
        dG[0, 1:] = self.dB * w
        dG[1:, 1:] = self.B * dw
        return diagonal_christoffel(G, dG)


def _sphere_weights(angles):
    """Round-sphere metric diag(w_j) in hyperspherical angles and d_i w_j."""
    m = angles.size
    s = np.sin(angles)
    c = np.cos(angles)
    w = np.ones(m)
    dw = np.zeros((m, m))
    for j in range(m):
        w[j] = np.prod(s[:j] ** 2)
        for i in range(j):
            dw[i, j] = 2.0 * s[i] * c[i] * np.prod(np.delete(s[:j], i) ** 2)
    return w, dw


def diagonal_christoffel(G, dG):
    """Gamma^a_{bc} for a diagonal metric diag(G); dG[c, a] = d_c G_a."""
    n = G.size
    Gam = np.zeros((n, n, n))
    for a in range(n):
        for b in range(n):
            for c in range(n):
                v = 0.0
                if a == b:
                    v += dG[c, a]
                if a == c:
                    v += dG[b, a]
                if b == c:
                    v -= dG[a, b]
                Gam[a, b, c] = v / (2.0 * G[a])
    return Gam


def christoffel_at(model, r):
    c = radial_coefficients(model, float(r))
    return ChristoffelTable(
        n=model.n,
        r=float(r),
        rr_r=float(c.da / (2 * c.a)),
        sph_r=float(-c.dB / (2 * c.a)),
        r_sph=float(c.dB / (2 * c.B)),
        a=float(c.a),
        da=float(c.da),
        B=float(c.B),
        dB=float(c.dB),
    )


@dataclass
class ConstraintDensities:
    mu: float
    J_norm: float
    J_r: float = 0.0
    scalar_curvature: float = 0.0


def constraint_densities(model, r, theta=0.0, h_rel=1e-3, method="fd"):
    """Local mass density mu and momentum density J of (g, k) at (r, theta).

    ``method="fd"`` runs the nested finite-difference oracle on the Cartesian
    components of the exact model; ``method="exact"`` uses the radial closed
    forms (spherical data only).
    """
    if np.any(np.asarray(r) <= 0):
        raise DomainError("constraint_densities needs r > 0")
    if method == "exact":
        return _constraint_exact(model, np.asarray(r, dtype=float))
    from .fdcurv import constraint_point

    return constraint_point(model, float(r), float(theta), h_rel=h_rel)


def _constraint_exact(model, r):
    n = model.n
    c = radial_coefficients(model, r)
    R = warped_scalar_curvature(n, c.a, c.da, c.B, c.dB, c.ddB)
    kk = 1.0 + (n - 1) * (c.K / c.B) ** 2  # |k|^2 with k_rr = g_rr
    trk = 1.0 + (n - 1) * c.K / c.B
    mu = 0.5 * (R - kk + trk**2)
    # pi = k - tr(k) g; only the radial component of div(pi) survives
    u = c.K / c.B
    du = c.dK / c.B - c.K * c.dB / c.B**2
    pi_rr = -(n - 1) * u * c.a
    pi_s = c.K - trk * c.B
    dpi_rr = -(n - 1) * (du * c.a + u * c.da)
    # (div pi)_r = g^rr pi_rr' + pi_rr (g^rr)' ... written via the density form
    dlog_vol = c.da / (2 * c.a) + (n - 1) * c.dB / (2 * c.B)
    J_r = (dpi_rr / c.a - pi_rr * c.da / c.a**2 + dlog_vol * pi_rr / c.a) - 0.5 * (
        c.da * pi_rr / c.a**2 + (n - 1) * c.dB * pi_s / c.B**2
    )
    J_norm = np.abs(J_r) / np.sqrt(c.a)
    if np.ndim(r) == 0:
        return ConstraintDensities(float(mu), float(J_norm), float(J_r), float(R))
    return ConstraintDensities(mu, J_norm, J_r, R)


@dataclass
class GraphGeometry:
    """Geometry of the graph of a radial f over (g, k), sampled at radii r.

    Tensors are recorded by their polar components: rr parts and the coefficient
    of Omega for sphere parts.  Mixed r-mu parts vanish in radial symmetry.
    """

    r: np.ndarray
    g_rr: np.ndarray
    g_sph: np.ndarray
    A_rr: np.ndarray
    A_sph: np.ndarray
    H: np.ndarray
    trk: np.ndarray
    J: np.ndarray
    R_hat: np.ndarray
    q_r: np.ndarray
    omega_r: np.ndarray
    A_norm2: np.ndarray
    A_minus_k_norm2: np.ndarray
    q_norm2: np.ndarray
    W: np.ndarray
    A_mixed: float = 0.0
    q_mu: float = 0.0


def graph_geometry_at(model, f, fp, fpp, r):
    """Induced geometry of t = f(r).  ``f`` itself never enters: J is
    invariant under vertical translation."""
    n = model.n
    c = radial_coefficients(model, r)
    fp = np.asarray(fp, dtype=float)
    fpp = np.asarray(fpp, dtype=float)
    D = c.a + fp * fp
    if np.any(D <= 0) or np.any(c.B <= 0):
        raise DegenerateMetricError("induced metric is degenerate")
    W = np.sqrt(D / c.a)
    hess_rr = fpp - c.da / (2 * c.a) * fp
    hess_s = c.dB / (2 * c.a) * fp
    A_rr = hess_rr / W
    A_sph = hess_s / W
    H = A_rr / D + (n - 1) * A_sph / c.B
    trk = c.a / D + (n - 1) * c.K / c.B
    dD = c.da + 2 * fp * fpp
    R_hat = warped_scalar_curvature(n, D, dD, c.B, c.dB, c.ddB)
    omega_r = fp / (c.a * W)
    q_r = omega_r * (A_rr - c.a)
    A_norm2 = (A_rr / D) ** 2 + (n - 1) * (A_sph / c.B) ** 2
    Amk = (A_rr - c.a) ** 2 / D**2 + (n - 1) * ((A_sph - c.K) / c.B) ** 2
    return GraphGeometry(
        r=c.r, g_rr=D, g_sph=c.B, A_rr=A_rr, A_sph=A_sph, H=H, trk=trk, J=H - trk,
        R_hat=R_hat, q_r=q_r, omega_r=omega_r, A_norm2=A_norm2,
        A_minus_k_norm2=Amk, q_norm2=q_r**2 / D, W=W,
    )


def warped_curvatures(n, A, dA, B, dB, ddB):
    """Sectional curvatures of A dr^2 + B Omega.

    Returns (K_rad, K_tan, R): curvature of planes containing d/dr, of planes
    tangent to the spheres, and the scalar curvature.
    """
    # write the metric as ds^2 + psi(s)^2 Omega with psi = sqrt(B)
    psi = np.sqrt(B)
    psi_r = dB / (2 * psi)
    psi_rr = ddB / (2 * psi) - dB**2 / (4 * psi**3)
    psi_s = psi_r / np.sqrt(A)
    psi_ss = (psi_rr - psi_r * dA / (2 * A)) / A
    K_rad = -psi_ss / psi
    K_tan = (1.0 - psi_s**2) / B
    R = 2 * (n - 1) * K_rad + (n - 1) * (n - 2) * K_tan
    return K_rad, K_tan, R


def warped_scalar_curvature(n, A, dA, B, dB, ddB):
    return warped_curvatures(n, A, dA, B, dB, ddB)[2]


def scalar_curvature_radial(A, B, r, n, h=None):
    """Scalar curvature of A(r) dr^2 + B(r) Omega.

    ``A`` and ``B`` are callables; derivatives use centered differences with
    step ``h`` (default 1e-3 * max(r, 1)), so the result is second-order
    accurate in h.  Sampled metrics use ``conformal.RadialMetric.scalar_curvature``.
    """
    r = np.asarray(r, dtype=float)
    if h is None:
        h = 1e-3 * np.maximum(r, 1.0)
    Ap, A0, Am = A(r + h), A(r), A(r - h)
    Bp, B0, Bm = B(r + h), B(r), B(r - h)
    if np.any(np.asarray(A0) <= 0) or np.any(np.asarray(B0) <= 0):
        raise DegenerateMetricError("scalar_curvature_radial needs A, B > 0")
    dA = (Ap - Am) / (2 * h)
    dB = (Bp - Bm) / (2 * h)
    ddB = (Bp - 2 * B0 + Bm) / h**2
    return warped_scalar_curvature(n, A0, dA, B0, dB, ddB)
