import numpy as np
import pytest
from hypothesis import given, strategies as st

from janglab.conformal import (
    RadialMetric,
    conformal_constant,
    cutoff,
    default_fit_windows,
    energy_shift,
    fit_coefficient,
    glue_to_schwarzschild,
    graph_metric,
    schoen_yau_residual,
    schoen_yau_terms,
    schwarzschild,
    smoothstep,
    yamabe_solve,
)
from janglab.errors import DegenerateMetricError, DomainError, PositivityError
from janglab.fields import RadialField, RadialGrid
from janglab.geometry import ModelData, warped_scalar_curvature
from conftest import solved_run

# first verified run of n=4, m=1, p=0 (N=2000, R=320)
A_N4 = -7.776022012959448
COEF_N4 = -8.776022012959448


def _flat(R=40.0, N=400, r_in=1.0):
    grid = RadialGrid(R, N, "anchored", r_in)
    r = grid.r
    one, zero = np.ones_like(r), np.zeros_like(r)
    return RadialMetric(grid, 4, one, zero, r * r, 2 * r, 2 * one)


# -- small pieces -----------------------------------------------------------


def test_conformal_constant():
    assert conformal_constant(4) == pytest.approx(1 / 6)
    assert conformal_constant(6) == pytest.approx(0.2)


def test_energy_shift_arithmetic():
    assert energy_shift(0.0, 0.0, 0.0, 5) == 0.0
    # 3 + 4 (1/6)(-3) = 1
    assert energy_shift(3.0, 0.0, -3.0, 4) == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10), st.integers(4, 7))
def test_energy_shift_is_affine(E, A, a, n):
    assert energy_shift(E, A, a, n) - energy_shift(0, 0, 0, n) == pytest.approx(
        E + 2 * A + 4 * conformal_constant(n) * a, abs=1e-12)


def test_smoothstep_endpoints():
    s, ds, dds = smoothstep(np.array([0.0, 1.0]))
    assert s.tolist() == [0.0, 1.0]
    assert np.all(ds == 0) and np.all(dds == 0)
    s, ds, dds = smoothstep(np.array([-1.0, 2.0]))
    assert s.tolist() == [0.0, 1.0]


@given(st.floats(0.01, 0.99))
def test_smoothstep_derivatives(t):
    h = 1e-5
    s, ds, dds = smoothstep(t)
    assert ds == pytest.approx((smoothstep(t + h)[0] - smoothstep(t - h)[0]) / (2 * h), abs=1e-8)
    assert dds == pytest.approx((smoothstep(t + h)[1] - smoothstep(t - h)[1]) / (2 * h), abs=1e-7)
    assert ds >= 0


def test_cutoff_scales_with_radius():
    xi, dxi, ddxi = cutoff(np.array([10.0, 15.0, 20.0]), 10.0)
    assert xi[0] == 0 and xi[2] == 1 and 0 < xi[1] < 1
    # |d xi| = O(1/R)
    assert dxi[1] == pytest.approx(smoothstep(0.5)[1] / 10.0)
    assert ddxi[1] == pytest.approx(smoothstep(0.5)[2] / 100.0)


# -- Schwarzschild ----------------------------------------------------------


@pytest.mark.parametrize("n", [4, 5, 6, 7])
def test_schwarzschild_is_scalar_flat(n):
    r = np.geomspace(2.0, 200.0, 30)
    A, dA, B, dB, ddB = schwarzschild(r, 1.5, n)
    R = warped_scalar_curvature(n, A, dA, B, dB, ddB)
    # curvature terms are of size r^-2
    assert np.max(np.abs(R) * r * r) < 1e-10


def test_schwarzschild_matches_conformal_change_of_flat():
    g = _flat()
    E = 2.0
    psi = RadialField.from_function(g.grid, lambda r: 1 + E / (2 * r * r), lambda r: -E / r**3,
                                    lambda r: 3 * E / r**4)
    gs = g.conformal(psi)
    A, dA, B, dB, ddB = schwarzschild(g.r, E, 4)
    for got, want in ((gs.A, A), (gs.dA, dA), (gs.B, B), (gs.dB, dB), (gs.ddB, ddB)):
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)


def test_schwarzschild_rejects_negative_factor():
    with pytest.raises(DomainError):
        schwarzschild(np.array([0.5, 1.0]), -10.0, 4)


def test_degenerate_metric_rejected():
    g = _flat()
    with pytest.raises(DegenerateMetricError):
        RadialMetric(g.grid, 4, -g.A, g.dA, g.B, g.dB, g.ddB)


def test_conformal_rejects_nonpositive_factor():
    g = _flat()
    with pytest.raises(PositivityError):
        g.conformal(RadialField(g.grid, np.cos(g.r)))


# -- Yamabe solve -----------------------------------------------------------


def test_yamabe_on_flat_metric_is_trivial():
    y = yamabe_solve(_flat())
    assert np.max(np.abs(y.u.values - 1)) < 1e-14
    assert y.A == 0.0
    u, A = y
    assert A == y.A


def test_yamabe_dimension_mismatch():
    with pytest.raises(DomainError):
        yamabe_solve(_flat(), n=5)


def test_hyperbolic_graph_gives_unit_factor(run_hyp4):
    y = run_hyp4.need("conformal")["yamabe"]
    assert max(abs(y.u_max - 1), abs(y.u_min - 1)) < 1e-8
    assert abs(y.A) < 1e-8


def test_fit_coefficient_synthetic():
    grid = RadialGrid(320.0, 2000, "anchored", 2.0)
    r = grid.r
    u = RadialField(grid, 1 - 8.0 / r**2 + 30.0 / r**3 - 100.0 / r**4)
    for w in default_fit_windows(grid, 4):
        assert fit_coefficient(u, 4, w) == pytest.approx(-8.0, abs=1e-8)
    with pytest.raises(DomainError, match="too few"):
        fit_coefficient(u, 4, (319.9, 320.0))


def test_default_windows():
    g = RadialGrid(160.0, 100, "anchored", 2.0)
    assert default_fit_windows(g, 4) == [(80.0, 160.0), (40.0, 80.0)]
    assert default_fit_windows(g, 6) == [(20.0, 40.0), (40.0, 80.0)]


def test_n4_coefficient_is_stable(run_n4):
    y = run_n4.need("conformal")["yamabe"]
    assert y.diagnostics["window_spread"] < 1e-3
    assert y.coefficient == pytest.approx(COEF_N4, abs=1e-6)
    assert y.A == pytest.approx(A_N4, abs=1e-6)
    # A + 2 c_n alpha_mean is the coefficient
    assert y.A + 2 * conformal_constant(4) * y.alpha_mean == pytest.approx(y.coefficient, abs=1e-12)
    assert "a_inequality_holds" in y.diagnostics


def test_u_bounded_above_and_below(run_n4):
    y = run_n4.need("conformal")["yamabe"]
    assert 0.5 < y.u_min <= y.u_max < 1.0 + 1e-8


def test_conformal_metric_is_scalar_flat(run_n4):
    rep = run_n4.report("verify")
    assert rep["scalar_flatness_residual"] < 1e-3
    md = rep["mesh_doubling"]
    assert 3.5 <= md["scalar_flatness_ratio"] <= 4.5


# -- Schoen-Yau identity ----------------------------------------------------


def test_schoen_yau_on_hyperboloid():
    model = ModelData.hyperbolic(4)
    grid = RadialGrid(20.0, 400)
    f = RadialField.from_function(grid, lambda r: np.sqrt(1 + r * r), lambda r: r / np.sqrt(1 + r * r),
                                  lambda r: (1 + r * r) ** -1.5)
    assert schoen_yau_residual(model, f) < 1e-8
    t = schoen_yau_terms(model, f)
    for key in ("lhs", "mu", "J_omega", "A_minus_k2", "q2", "div_q"):
        assert np.nanmax(np.abs(t[key])) < 1e-8
    assert np.isnan(t["lhs"][0])


def test_schoen_yau_order_n4(run_n4):
    md = run_n4.report("verify")["mesh_doubling"]
    assert 3.5 <= md["schoen_yau_ratio"] <= 4.5


def test_schoen_yau_n6_fine_mesh():
    md = solved_run(6, 0.5, 0.5).report("verify")["mesh_doubling"]
    assert md["N"][1] == 4000
    assert md["schoen_yau"][1] < 1e-4


# -- energies and the glue --------------------------------------------------


def test_direct_flux_matches_energy_shift(run_n4):
    rep = run_n4.report("conformal")
    assert abs(rep["E_ADM_conformal"] - rep["E_shift"]) < 1e-2
    assert rep["E_shift_gap"] == pytest.approx(rep["E_ADM_conformal"] - rep["E_shift"])


def test_glue_on_hyperbolic_data_is_flat(run_hyp4):
    rep = run_hyp4.report("conformal")
    assert rep["glue_exponent"] is None
    assert all(g["sup"] < 1e-10 for g in rep["glue"])


def test_glue_decay_n4(run_n4):
    rep = run_n4.report("conformal")
    decays = [g["decay"] for g in rep["glue"]]
    assert max(decays) / min(decays) < 2.0
    assert rep["glue_exponent"] <= -3.5


def test_glue_refuses_annulus_outside_grid(run_n4):
    gu = run_n4.need("conformal")["conformal_metric"]
    with pytest.raises(DomainError, match="leaves the grid"):
        glue_to_schwarzschild(gu, 1.0, gu.r[-1])


def test_glue_of_schwarzschild_is_scalar_flat():
    g = _flat(R=100.0, N=800)
    E = 1.0
    psi = RadialField.from_function(g.grid, lambda r: 1 + E / (2 * r * r), lambda r: -E / r**3,
                                    lambda r: 3 * E / r**4)
    gl = glue_to_schwarzschild(g.conformal(psi), E, 20.0)
    assert gl.sup < 1e-10


def test_graph_metric_of_hyperboloid(run_hyp4):
    g = run_hyp4.need("conformal")["metric"]
    r = g.r[1:]
    # the graph of sqrt(1+r^2) over hyperbolic space is flat R^n
    assert np.max(np.abs(g.scalar_curvature())) < 1e-6
    assert g.B[0] == 0.0 and np.all(g.B[1:] > 0)
    assert np.all(r > 0)


def test_graph_metric_adds_slope():
    model = ModelData.spherical(4, 1.0)
    grid = RadialGrid(20.0, 200, "anchored", 3.0)
    f = RadialField.from_function(grid, lambda r: 0.5 * r, lambda r: 0.5 + 0 * r, lambda r: 0 * r)
    g = graph_metric(model, f)
    g0 = graph_metric(model, RadialField.from_function(grid, lambda r: 0 * r, lambda r: 0 * r, lambda r: 0 * r))
    assert np.allclose(g.A - g0.A, 0.25)
    assert np.array_equal(g.B, g0.B)
