from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from janglab.barriers import build_barriers
from janglab.errors import DomainError
from janglab.fields import RadialField, RadialGrid, stencil2
from janglab.geometry import ModelData
from janglab.jang import (
    JangOrbit,
    SolverConfig,
    _jacobian_bands,
    _residual_rows,
    assemble_residual,
    bracket_violations,
    extract_alpha,
    newton_quadratic_constant,
    solve_regularized,
    trapping_margin,
    tr_k_sup,
)
from janglab.sphere import solve_alpha
from conftest import solved_run

HYP4 = ModelData.hyperbolic(4)


# -- trapping ---------------------------------------------------------------


def test_trapping_margin_closed_form():
    # (n-1)/(2R^2) to leading order
    assert trapping_margin(HYP4, 10.0) == pytest.approx(3 / 200, abs=2e-4)


@given(st.floats(5.0, 10.0))
def test_trapping_margin_positive_on_moderate_spheres(R):
    assert trapping_margin(HYP4, R, 1e-3, np.sqrt(1 + R * R)) > 0


def test_trapping_margin_eventually_lost_for_fixed_tau():
    assert trapping_margin(HYP4, 30.0, 1e-3, np.sqrt(1 + 900.0)) < 0


def test_untrapped_sphere_refused():
    model = ModelData.spherical(4, 10.0)
    assert trapping_margin(model, 2.0) < 0
    grid = RadialGrid(2.0, 100, "anchored", 1.9)
    with pytest.raises(DomainError, match="trapping"):
        solve_regularized(model, 0.0, grid, 0.0, np.zeros(101), inner_slope=0.0)


def test_large_tau_refused_at_large_radius():
    grid = RadialGrid(50.0, 400)
    phi = np.sqrt(1 + 2500.0)
    with pytest.raises(DomainError, match="trapping"):
        solve_regularized(HYP4, 1e-2, grid, phi, phi * grid.r / 50.0)


# -- residual ---------------------------------------------------------------


def test_hyperboloid_residual_vanishes():
    grid = RadialGrid(20.0, 400)
    S = RadialField.from_function(grid, lambda r: np.sqrt(1 + r * r), lambda r: r / np.sqrt(1 + r * r),
                                  lambda r: (1 + r * r) ** -1.5)
    res = assemble_residual(HYP4, S, 0.0)
    assert np.max(np.abs(res[1:-1])) < 1e-10


def _barrier_field(pair, model, which, grid):
    """f_+ or f_- on a grid, with derivatives from the k profile."""
    prof = pair.k_plus if which == "+" else pair.k_minus
    fun = pair.plus if which == "+" else pair.minus
    n, a = model.n, pair.alpha_mean
    r = grid.r
    k, omk2, _ = prof.state(r)
    kp = prof.k_prime(r)
    q = np.sqrt(1 + r * r)
    fp = k / np.sqrt(omk2 * q * q) - (n - 3) * a * r ** (2.0 - n)
    fpp = kp / (omk2**1.5 * q) - k * r / (np.sqrt(omk2) * q**3) + (n - 3) * (n - 2) * a * r ** (1.0 - n)
    return RadialField(grid, fun.f_at(r), exact=(fp, fpp))


@pytest.mark.parametrize("n,m,p", [(4, 1.0, 0.0), (6, 0.5, 0.2)])
def test_barriers_are_super_and_subsolutions(n, m, p):
    model = ModelData.spherical(n, m, p)
    pair = build_barriers(model)
    grid = RadialGrid(100.0, 300, "anchored", 1.05 * pair.constants.r0)
    tau = 1e-10
    up = assemble_residual(model, _barrier_field(pair, model, "+", grid), tau)[1:-1]
    lo = assemble_residual(model, _barrier_field(pair, model, "-", grid), -tau)[1:-1]
    assert np.all(up < 0)
    # J(f_-) + tau f_- > 0, so J(f_-) - tau f_- > 0 for the small tau used
    assert np.all(lo > 0)


# -- Newton -----------------------------------------------------------------


def test_jacobian_against_finite_differences():
    model = ModelData.spherical(5, 0.5, 0.2)
    grid = RadialGrid(20.0, 200, "anchored", 2.0)
    F = np.sqrt(1 + grid.r**2) + 0.1 * np.cos(grid.r)
    d1, d2 = stencil2(grid, F, 0)
    ab = _jacobian_bands(model, grid, d1, d2, 1e-3)

    def res(F):
        d1, d2 = stencil2(grid, F, 0)
        return _residual_rows(model, grid, F, d1, d2, 1e-3, 0.0, 0.0)

    N = F.size
    e = 1e-6
    J = np.empty((N, N))
    for j in range(N):
        dF = np.zeros(N)
        dF[j] = e
        J[:, j] = (res(F + dF) - res(F - dF)) / (2 * e)
    band = np.diag(ab[1]) + np.diag(ab[0, 1:], 1) + np.diag(ab[2, :-1], -1)
    assert np.max(np.abs(J - band)[1:-1]) < 1e-5 * np.max(np.abs(J))


def test_newton_quadratic_tail():
    grid = RadialGrid(10.0, 400)
    S = np.sqrt(1 + grid.r**2)
    init = S + 0.3 * np.sin(grid.r) ** 2 * grid.r / 10
    out = solve_regularized(HYP4, 1e-3, grid, S[-1], init, tol=1e-12)
    h = out.history
    assert h[-1] < 1e-10
    assert newton_quadratic_constant(h) < 10.0


def test_translation_covariance_at_tau_zero():
    grid = RadialGrid(10.0, 300)
    S = np.sqrt(1 + grid.r**2)
    a = solve_regularized(HYP4, 0.0, grid, S[-1], S + 0.01 * grid.r, tol=1e-12).field
    b = solve_regularized(HYP4, 0.0, grid, S[-1] + 2.5, S + 2.5 + 0.01 * grid.r, tol=1e-12).field
    assert np.max(np.abs(b.values - a.values - 2.5)) < 1e-10


def test_anchored_needs_one_inner_condition():
    grid = RadialGrid(20.0, 100, "anchored", 2.0)
    model = ModelData.spherical(4, 1.0)
    with pytest.raises(DomainError):
        solve_regularized(model, 1e-6, grid, 20.0, np.full(101, 20.0))


def test_origin_grid_needs_hyperbolic_data():
    with pytest.raises(DomainError, match="hyperbolic"):
        solve_regularized(ModelData.spherical(4, 1.0), 1e-3, RadialGrid(10.0, 100), 10.0, np.full(101, 10.0))


# -- the tau = 0 orbit ------------------------------------------------------


def test_orbit_reproduces_hyperboloid():
    r0 = 1.5
    orb = JangOrbit(HYP4, r0, 50.0, r0 / np.sqrt(1 + r0 * r0))
    r = np.linspace(r0, 50, 40)
    assert np.max(np.abs(orb(r) - (np.sqrt(1 + r * r) - np.sqrt(1 + r0 * r0)))) < 1e-9
    assert np.max(np.abs(orb.slope(r) - r / np.sqrt(1 + r * r))) < 1e-9


# -- settings ---------------------------------------------------------------


def test_for_model_settings():
    hyp = SolverConfig.for_model(HYP4)
    assert hyp.R_list == (20.0,) and hyp.final_tau_zero
    four = SolverConfig.for_model(ModelData.spherical(4, 1.0))
    assert four.R_list[-1] == 320.0 and four.tau_min == 1e-20
    six = SolverConfig.for_model(ModelData.spherical(6, 0.5), N=1000)
    assert six.R_list[-1] == 160.0 and six.N == 1000


@pytest.mark.parametrize("kw", [dict(tau_start=1e-9, tau_min=1e-8), dict(tau_factor=1.5), dict(R_list=()),
                                dict(inner="robin"), dict(newton_tol=0.0)])
def test_config_validation(kw):
    with pytest.raises(DomainError):
        SolverConfig(**kw)


def test_tau_schedule_geometric():
    taus = SolverConfig(tau_start=1e-2, tau_min=1e-5).taus()
    assert taus == pytest.approx([1e-2, 1e-3, 1e-4, 1e-5])


# -- continuation -----------------------------------------------------------


def test_hyperbolic_continuation_limit(run_hyp4):
    f = run_hyp4.need("jang")["f"]
    r = np.linspace(1, 10, 50)
    assert np.max(np.abs(f(r) - np.sqrt(1 + r * r))) < 1e-6


def test_successive_tau_differences_decrease(run_hyp4):
    stages = run_hyp4.need("jang")["diag"]["stages"]
    cauchy = [s.cauchy for s in stages if s.cauchy is not None and s.tau > 0]
    assert len(cauchy) >= 3
    assert all(b < a for a, b in zip(cauchy, cauchy[1:]))


def test_sup_bound_every_stage(run_n4, run_hyp4):
    for run in (run_n4, run_hyp4):
        for s in run.need("jang")["diag"]["stages"]:
            assert s.sup_lhs <= s.sup_rhs + 1e-8


def test_bracket_for_n4(run_n4):
    f = run_n4.need("jang")["f"]
    bp = run_n4.need("barriers")["barriers"]
    assert bracket_violations(f, bp) == 0
    assert run_n4.report("jang")["bracket_violations_total"] == 0


def test_bracket_detects_violation(run_n4):
    f = run_n4.need("jang")["f"]
    bp = run_n4.need("barriers")["barriers"]
    # the n = 4 bracket is wide (tens at R), so push well outside it
    shifted = RadialField(f.grid, f.values - 1000.0)
    assert bracket_violations(shifted, bp) > 0


def test_tr_k_sup_hyperbolic():
    assert tr_k_sup(HYP4, np.linspace(0, 5, 11)) == pytest.approx(4.0)


# -- the alpha tail ---------------------------------------------------------


def test_extract_alpha_hyperbolic(run_hyp4):
    f = run_hyp4.need("jang")["f"]
    assert abs(extract_alpha(f, 4, (1.25, 10.0))) < 1e-4


@pytest.mark.parametrize("n", [4, 5])
def test_extract_alpha_matches_sphere_solver(n):
    run = solved_run(n, 1.0, 0.0)
    alpha = solve_alpha(run.model).constant
    assert alpha == -3.0
    got = run.report("jang")["alpha_extracted"]
    assert got == pytest.approx(alpha, abs=0.15)
    assert abs(got / alpha - 1) < 0.05


def test_extract_alpha_on_synthetic_tail():
    grid = RadialGrid(200.0, 800, "anchored", 2.0)
    r = grid.r
    f = RadialField(grid, np.sqrt(1 + r * r) + 0.7 - 2.0 / r + 15.0 / r**2)
    assert extract_alpha(f, 4, (10, 100)) == pytest.approx(-2.0, abs=1e-8)


def test_solution_tail_decay_n4(run_n4):
    # f - sqrt(1+r^2) - c - alpha/r decays like r^{-(n-2)}
    f = run_n4.need("jang")["f"]
    R = f.grid.R
    r = f.r
    sel = (r >= R / 16) & (r <= R / 2)
    y = f.values[sel] - np.sqrt(1 + r[sel] ** 2)
    X = np.column_stack([np.ones(sel.sum()), 1 / r[sel], r[sel] ** -2.0])
    c = np.linalg.lstsq(X, y, rcond=None)[0][0]
    rest = y - c + 3.0 / r[sel]
    slope = np.polyfit(np.log(r[sel]), np.log(np.abs(rest)), 1)[0]
    assert slope <= -(4 - 2 - 0.5)
