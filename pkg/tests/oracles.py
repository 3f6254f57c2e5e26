"""Oracles that share no code with the package: symbolic curvature of a
warped metric, and hand-derived closed forms."""

from functools import lru_cache

import numpy as np
import sympy as sp


@lru_cache(maxsize=None)
def warped_scalar_curvature_symbolic(n):
    """R of A(r) dr^2 + B(r) (round metric on S^{n-1}), derived from the
    Christoffel symbols in hyperspherical coordinates.  Returns a numeric
    function of (A, dA, B, dB, ddB)."""
    r = sp.Symbol("r", positive=True)
    th = sp.symbols(f"t1:{n}")
    A = sp.Function("A")(r)
    B = sp.Function("B")(r)
    x = (r,) + th
    diag = [A]
    w = 1
    for j in range(n - 1):
        diag.append(B * w)
        w = w * sp.sin(th[j]) ** 2
    g = sp.diag(*diag)
    gi = sp.diag(*[1 / d for d in diag])
    rng = range(n)
    Gam = [[[sum(gi[a, d] * (sp.diff(g[d, b], x[c]) + sp.diff(g[d, c], x[b]) - sp.diff(g[b, c], x[d]))
                 for d in rng) / 2 for c in rng] for b in rng] for a in rng]
    R = 0
    for b in rng:
        ric = (sum(sp.diff(Gam[a][b][b], x[a]) for a in rng)
               - sum(sp.diff(Gam[a][a][b], x[b]) for a in rng)
               + sum(Gam[a][a][e] * Gam[e][b][b] for a in rng for e in rng)
               - sum(Gam[a][b][e] * Gam[e][a][b] for a in rng for e in rng))
        R += gi[b, b] * ric
    R = sp.simplify(R)
    a, da, b, db, ddb = sp.symbols("a da b db ddb")
    R = R.subs(sp.Derivative(B, (r, 2)), ddb).subs(sp.Derivative(B, r), db)
    R = R.subs(sp.Derivative(A, r), da).subs(A, a).subs(B, b)
    return sp.lambdify((a, da, b, db, ddb), R, "numpy")


def hyperboloid_graph_terms(r, n):
    """Closed forms on the graph of sqrt(1+r^2) over hyperbolic data."""
    r = np.asarray(r, dtype=float)
    return {
        "H": (n - 1) + 1.0 / (1 + r * r),
        "A_norm2": (n - 1) + 1.0 / (1 + r * r) ** 2,
    }


def zonal_alpha_spectral(n, M, theta, lmax=40, degree=120):
    """Solve Lap alpha - (n-3) alpha = M for zonal M by expansion in
    Gegenbauer polynomials C_l^{(n-2)/2}(cos t), eigenvalue -l(l+n-2)."""
    from scipy.special import eval_gegenbauer, roots_gegenbauer

    lam = (n - 2) / 2.0
    x, w = roots_gegenbauer(degree, lam)
    vals = M(np.arccos(x))
    out = np.zeros_like(np.asarray(theta, dtype=float))
    ct = np.cos(theta)
    for l in range(lmax + 1):
        P = eval_gegenbauer(l, lam, x)
        c = np.sum(w * vals * P) / np.sum(w * P * P)
        out = out + c / (-l * (l + n - 2) - (n - 3)) * eval_gegenbauer(l, lam, ct)
    return out
