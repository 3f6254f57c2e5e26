"""Graded radial meshes and sampled radial functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def fd_weights(offsets, order):
    """Finite-difference weights at 0 for the given stencil offsets (Fornberg)."""
    x = np.asarray(offsets, dtype=float)
    m = x.size
    c = np.zeros((m, order + 1))
    c1, c4 = 1.0, x[0]
    c[0, 0] = 1.0
    for i in range(1, m):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def _uniform_derivative(F, h, order, left=0):
    """4th-order derivative of samples on a uniform grid (one-sided near ends).

    ``left`` = +1 or -1 continues the samples evenly or oddly through the first
    node instead of switching to one-sided stencils there.
    """
    F = np.asarray(F, dtype=float)
    N = F.size
    width = 2 if order == 1 else 3
    out = np.empty(N)
    if left:
        ext = np.concatenate([left * F[1 : width + 1][::-1], F])
        shift = width
    else:
        ext, shift = F, 0
    central = fd_weights([-2, -1, 0, 1, 2], order)
    idx = np.arange(N)
    inner = (idx + shift >= 2) & (idx + shift <= ext.size - 3)
    j = idx[inner] + shift
    out[inner] = sum(w * ext[j + o] for w, o in zip(central, (-2, -1, 0, 1, 2)))
    npts = 4 + order
    for i in idx[~inner]:
        if i + shift < 2:
            offs = np.arange(npts) - (i + shift)
            base = 0
        else:
            offs = np.arange(npts) - (npts - 1) + (ext.size - 1 - (i + shift))
            base = ext.size - npts
        w = fd_weights(offs, order)
        out[i] = w @ ext[base : base + npts]
    return out / h**order


@dataclass
class RadialGrid:
    """Mesh r_i = rho(xi_i) on a uniform xi grid in [0, 1].

    ``origin`` mode: rho = R sinh(beta xi)/sinh(beta), with r = 0 included and
    fields continued evenly through the origin.  ``anchored`` mode:
    rho = r_in + (R - r_in)(e^{beta xi} - 1)/(e^beta - 1).  beta = 0 is uniform.
    """

    R: float
    N: int
    mode: str = "origin"
    r_in: float = 0.0
    beta: float | None = None
    r: np.ndarray = field(init=False, repr=False)
    dr: np.ndarray = field(init=False, repr=False)
    ddr: np.ndarray = field(init=False, repr=False)
    h: float = field(init=False)

    def __post_init__(self):
        if self.N < 64:
            raise DomainError("RadialGrid needs N >= 64 intervals")
        if self.mode not in ("origin", "anchored"):
            raise DomainError(f"unknown inner mode {self.mode!r}")
        if self.mode == "origin":
            self.r_in = 0.0
        if not self.R > self.r_in >= 0:
            raise DomainError("RadialGrid needs R > r_in >= 0")
        if self.beta is None:
            if self.mode == "origin":
                self.beta = float(np.log(2.0 * self.R)) if self.R > 1 else 0.0
            else:
                self.beta = float(np.log(self.R / self.r_in)) if self.r_in > 0 else 0.0
        xi = np.linspace(0.0, 1.0, self.N + 1)
        self.h = 1.0 / self.N
        b, R, a = self.beta, self.R, self.r_in
        if b == 0.0:
            self.r = a + (R - a) * xi
            self.dr = np.full_like(xi, R - a)
            self.ddr = np.zeros_like(xi)
        elif self.mode == "origin":
            s = np.sinh(b)
            self.r = R * np.sinh(b * xi) / s
            self.dr = R * b * np.cosh(b * xi) / s
            self.ddr = R * b * b * np.sinh(b * xi) / s
        else:
            s = np.expm1(b)
            self.r = a + (R - a) * np.expm1(b * xi) / s
            self.dr = (R - a) * b * np.exp(b * xi) / s
            self.ddr = (R - a) * b * b * np.exp(b * xi) / s
        self.r[-1] = R
        if np.any(np.diff(self.r) <= 0):
            raise DomainError("grid nodes not strictly increasing")

    def refined(self, factor=2):
        return RadialGrid(self.R, self.N * factor, self.mode, self.r_in, self.beta)

    def with_R(self, R, N=None):
        return RadialGrid(R, N or self.N, self.mode, self.r_in, None)


class RadialField:
    """Samples of a radial function with 4th-order derivative reconstruction.

    A field may be stored as base + deviation, where the base comes with exact
    derivative samples (b0, b1, b2); only the deviation then meets the
    stencils, which keeps rounding out of high derivatives of large fields.
    """

    def __init__(self, grid, values, parity="even", exact=None, base=None, deviation=None):
        self.grid = grid
        self.base = None
        if base is not None:
            self.base = tuple(np.asarray(b, dtype=float) for b in base)
            dev = np.asarray(values if deviation is None else deviation, dtype=float)
            if deviation is None:
                dev = dev - self.base[0]
            self.deviation = dev
            values = self.base[0] + dev
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != grid.r.shape:
            raise DomainError("field and grid sizes differ")
        # optional exact (d1, d2) samples, used instead of the stencils
        self.exact = exact
        # smooth radial functions continue evenly or oddly through r = 0
        self.left = 0
        if grid.mode == "origin":
            self.left = {"even": 1, "odd": -1}.get(parity, 0)

    @classmethod
    def from_function(cls, grid, func, dfunc=None, ddfunc=None, parity="even"):
        """Sample ``func``; if both derivatives are given they are kept exactly."""
        r = grid.r
        exact = None
        if dfunc is not None and ddfunc is not None:
            exact = (np.asarray(dfunc(r), dtype=float), np.asarray(ddfunc(r), dtype=float))
        return cls(grid, func(r), parity=parity, exact=exact)

    @property
    def r(self):
        return self.grid.r

    def _xi(self, order, values=None):
        if values is None:
            values = self.values if self.base is None else self.deviation
        return _uniform_derivative(values, self.grid.h, order, left=self.left)

    @property
    def d1(self):
        if self.exact is not None:
            return self.exact[0]
        Fx = self._xi(1)
        out = Fx / self.grid.dr
        if self.left == 1 and self.base is None:
            out[0] = 0.0
        if self.base is not None:
            out = out + self.base[1]
        return out

    @property
    def d2(self):
        if self.exact is not None:
            return self.exact[1]
        Fx = self._xi(1)
        Fxx = self._xi(2)
        g = self.grid
        out = (Fxx - g.ddr * Fx / g.dr) / g.dr**2
        if self.base is not None:
            out = out + self.base[2]
        return out

    def derivative(self, parity=None):
        """d/dr as a new field (odd at the origin when self is even)."""
        par = parity or {1: "odd", -1: "even"}.get(self.left, "none")
        return RadialField(self.grid, self.d1, parity=par)

    def stencil2(self):
        """Second-order centered (d1, d2) on the mapped grid, as used by the
        Newton scheme; end nodes use one-sided second-order formulas."""
        return stencil2(self.grid, self.values, self.left)

    def __call__(self, r):
        from scipy.interpolate import CubicSpline

        return CubicSpline(self.grid.r, self.values)(r)

    def window(self, lo, hi):
        return (self.grid.r >= lo) & (self.grid.r <= hi)


def stencil2(grid, F, left=0):
    F = np.asarray(F, dtype=float)
    h = grid.h
    Fx = np.empty_like(F)
    Fxx = np.empty_like(F)
    Fx[1:-1] = (F[2:] - F[:-2]) / (2 * h)
    Fxx[1:-1] = (F[2:] - 2 * F[1:-1] + F[:-2]) / h**2
    if left:
        Fx[0] = 0.0 if left == 1 else (F[1] - left * F[1]) / (2 * h)
        Fxx[0] = (F[1] - 2 * F[0] + left * F[1]) / h**2
    else:
        Fx[0] = (-3 * F[0] + 4 * F[1] - F[2]) / (2 * h)
        Fxx[0] = (2 * F[0] - 5 * F[1] + 4 * F[2] - F[3]) / h**2
    Fx[-1] = (3 * F[-1] - 4 * F[-2] + F[-3]) / (2 * h)
    Fxx[-1] = (2 * F[-1] - 5 * F[-2] + 4 * F[-3] - F[-4]) / h**2
    d1 = Fx / grid.dr
    d2 = (Fxx - grid.ddr * d1) / grid.dr**2
    return d1, d2
