"""Nested finite-difference curvature in Cartesian coordinates (model data and radial metrics).

Used as an oracle that shares nothing with the radial closed forms: the metric
and k are assembled as n x n Cartesian matrices, Christoffel symbols come from
centered differences of g, and the Ricci tensor from centered differences of
those Christoffel symbols.  Every difference is refined once by Richardson
extrapolation.
"""

import numpy as np

from .errors import NumericalError


def cartesian_tensors(model, x):
    """g_ij and k_ij of the exact model at Cartesian points x[..., n]."""
    n = model.n
    r = np.linalg.norm(x, axis=-1)
    xh = x / r[..., None]
    theta = np.arccos(np.clip(xh[..., -1], -1.0, 1.0))
    a = 1.0 / (1.0 + r * r)
    bg = 1.0 + model.m_bar(theta) * r ** (-n)
    bk = 1.0 + model.p_bar(theta) * r ** (-n)
    P = xh[..., :, None] * xh[..., None, :]
    Q = np.eye(n) - P
    g = a[..., None, None] * P + bg[..., None, None] * Q
    k = a[..., None, None] * P + bk[..., None, None] * Q
    return g, k


def _grad(F, x, h):
    """Richardson-refined centered gradient; result[..., c, ...] = d_c F."""
    n = x.shape[-1]
    E = np.eye(n)

    def D(step):
        xp = x[..., None, :] + step * E
        xm = x[..., None, :] - step * E
        return (F(xp) - F(xm)) / (2.0 * step)

    D1 = D(h)
    D2 = D(0.5 * h)
    return (4.0 * D2 - D1) / 3.0, np.abs(D2 - D1)


def metric_christoffel(g_of, x, h):
    """Gamma^a_{bc} at x for the Cartesian metric callable g_of(x) -> g_ij."""
    g = g_of(x)
    dg, _ = _grad(g_of, x, h)  # dg[..., c, i, j] = d_c g_ij
    ginv = np.linalg.inv(g)
    # lowered: Gamma_{d b c} = (d_b g_dc + d_c g_db - d_d g_bc)/2
    low = 0.5 * (
        np.einsum("...bdc->...dbc", dg)
        + np.einsum("...cdb->...dbc", dg)
        - dg
    )
    return np.einsum("...ad,...dbc->...abc", ginv, low)


def christoffel(model, x, h):
    """Gamma^a_{bc} of the model metric at x; shape (..., n, n, n)."""
    return metric_christoffel(lambda y: cartesian_tensors(model, y)[0], x, h)


def metric_scalar_curvature(g_of, x, h):
    """Scalar curvature at a single point x, with an error estimate from the
    Richardson refinement of the outer difference.  Returns (R, R_err, Gamma)."""
    ginv = np.linalg.inv(g_of(x))
    Gam = metric_christoffel(g_of, x, h)
    dGam, dGam_err = _grad(lambda y: metric_christoffel(g_of, y, h), x, h)
    # dGam[e, a, b, c] = d_e Gamma^a_bc
    ric = (
        np.einsum("aabd->bd", dGam)
        - np.einsum("daab->bd", dGam)
        + np.einsum("aae,ebd->bd", Gam, Gam)
        - np.einsum("ade,eab->bd", Gam, Gam)
    )
    R = float(np.einsum("bd,bd->", ginv, ric))
    err = np.abs(np.einsum("aabd->bd", dGam_err)) + np.abs(np.einsum("daab->bd", dGam_err))
    R_err = float(np.einsum("bd,bd->", np.abs(ginv), err))
    return R, R_err, Gam


def radial_metric_tensor(A, B):
    """Cartesian form of A(r) dr^2 + B(r) Omega as a callable of x."""

    def g_of(x):
        n = x.shape[-1]
        r = np.linalg.norm(x, axis=-1)
        xh = x / r[..., None]
        P = xh[..., :, None] * xh[..., None, :]
        phi = B(r) / r**2
        return A(r)[..., None, None] * P + phi[..., None, None] * (np.eye(n) - P)

    return g_of


def constraint_point(model, r, theta, h_rel=1e-3):
    """mu and J at the point of radius r and polar angle theta."""
    from .geometry import ConstraintDensities

    n = model.n
    x = np.zeros(n)
    x[0] = r * np.sin(theta)
    x[-1] = r * np.cos(theta)
    h = h_rel * r
    g, k = cartesian_tensors(model, x)
    ginv = np.linalg.inv(g)
    R, R_err, Gam = metric_scalar_curvature(lambda y: cartesian_tensors(model, y)[0], x, h)

    k_up = ginv @ k @ ginv
    trk = float(np.einsum("ij,ij->", ginv, k))
    kk = float(np.einsum("ij,ij->", k_up, k))
    mu = 0.5 * (R - kk + trk * trk)

    def pi_of(y):
        gy, ky = cartesian_tensors(model, y)
        tr = np.einsum("...ij,...ij->...", np.linalg.inv(gy), ky)
        return ky - tr[..., None, None] * gy

    pi = pi_of(x)
    dpi, _ = _grad(pi_of, x, h)  # dpi[c, a, b] = d_c pi_ab
    cov = dpi - np.einsum("eca,eb->cab", Gam, pi) - np.einsum("ecb,ae->cab", Gam, pi)
    J = np.einsum("ac,cab->b", ginv, cov)
    J_norm = float(np.sqrt(max(J @ ginv @ J, 0.0)))
    xh = x / r
    # radial component in polar coordinates: J_r = J(d/dr) = J . xhat
    J_r = float(J @ xh)

    scale = max(1.0, abs(R), kk, trk * trk)
    if not np.isfinite(mu) or R_err > 1e-3 * scale:
        raise NumericalError(
            "finite-difference refinement did not converge",
            {"r": r, "theta": theta, "R": R, "R_refinement_change": R_err, "h": h},
        )
    return ConstraintDensities(mu=mu, J_norm=J_norm, J_r=J_r, scalar_curvature=R)
