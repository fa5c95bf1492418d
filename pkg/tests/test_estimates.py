import numpy as np
import pytest

from mfgcon.continuation import solve_path, trivial_solution
from mfgcon.estimates import (
    DerivedExponents,
    check_exponents,
    check_gradient_bound,
    check_integral_estimates,
    check_inverse_m,
    check_mass,
    check_uniqueness_integrand,
    check_value_bounds,
    run_all_checks,
)
from mfgcon.grids import Field, SpaceTimeField, fourier_interpolate, integrate
from mfgcon.system import LambdaData, Potential, SolutionPair

from conftest import make_problem


@pytest.fixture(scope="module")
def solved(small_problem):
    states = solve_path(small_problem)
    return states[-1]


def test_derived_exponents():
    der = DerivedExponents(gamma=1.5, alpha=0.5)
    assert der.alpha_bar == pytest.approx(0.25, abs=1e-15)
    assert der.q_of(2.0) == pytest.approx(3.0, abs=1e-12)
    assert der.q_of(5.0) > 5.0
    with pytest.raises(ValueError):
        DerivedExponents(gamma=1.9, alpha=1.2)  # (gamma-1)*alpha >= 1


def test_mass_check_trivial_and_corrupted(small_problem):
    state = trivial_solution(small_problem)
    rec = check_mass(state.pair)
    assert rec.passed and rec.values["max_deviation"] <= 1e-14

    corrupted = state.pair.copy()
    corrupted.m.values[5, 3] += 1e-3
    rec = check_mass(corrupted)
    assert not rec.passed
    assert rec.location == {"slice": 5}


def test_value_bound_on_trivial_pair(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    rec = check_value_bounds(state.pair, small_problem, lam)
    # u = (1 - pi/4)(t - T) sits above -(T - t) * arctan(1) since 1 - pi/4 < pi/4;
    # the terminal slice attains the bound exactly, so the margin is zero there
    assert rec.passed
    assert rec.values["v_max"] == pytest.approx(np.pi / 4.0, rel=1e-12)
    assert rec.values["margin"] >= 0.0
    slope_gap = np.pi / 4.0 - (1.0 - np.pi / 4.0)
    assert slope_gap > 0.0


def test_value_bound_degenerate_data(small_problem):
    # vanishing coupling and terminal cost collapse the bound to u >= -1e-8
    state = trivial_solution(small_problem)
    pair = SolutionPair(
        u=SpaceTimeField.zeros(small_problem.grid, small_problem.time),
        m=state.pair.m.copy(),
    )
    tiny = LambdaData(
        lam=0.0,
        hamiltonian=small_problem.hamiltonian,
        b_values=np.zeros_like(small_problem.b.values),
        psi_values=np.zeros(small_problem.grid.num_nodes),
        m_init_values=np.ones(small_problem.grid.num_nodes),
        potential=Potential(v2_kind="linear", coef=1e-15),
    )
    rec = check_value_bounds(pair, small_problem, tiny)
    assert rec.passed
    assert abs(rec.values["v_max"]) < 1e-12
    assert rec.values["margin"] >= -1e-8


def test_integral_estimates_trivial_pair(small_problem):
    state = trivial_solution(small_problem)
    rec = check_integral_estimates(state.pair, small_problem)
    assert rec.passed
    assert rec.values["momentum_over_density"] == pytest.approx(0.0, abs=1e-20)
    assert rec.values["momentum_weighted"] == pytest.approx(0.0, abs=1e-20)
    assert rec.values["density_power_max"] == pytest.approx(1.0, rel=1e-12)


def test_inverse_density_checks(small_problem):
    state = trivial_solution(small_problem)
    rec = check_inverse_m(state.pair)
    assert rec.passed
    assert rec.values["inverse_sup"] == pytest.approx(1.0, rel=1e-14)
    assert rec.values["int_m^-2_max"] == pytest.approx(1.0, rel=1e-14)

    # an initial slice with structure: quadrature matches the refined grid
    m0 = small_problem.m0
    coarse = integrate(Field(m0.grid, m0.values**-2.0))
    fine_field = fourier_interpolate(m0, 2 * m0.grid.points_per_dim)
    fine = integrate(Field(fine_field.grid, fine_field.values**-2.0))
    assert abs(coarse - fine) < 1e-8

    bad = state.pair.copy()
    bad.m.values[2, 4] = -0.1
    rec = check_inverse_m(bad)
    assert not rec.passed
    assert rec.location == {"slice": 2, "node": 4}


def test_uniqueness_integrand_trivial_pair(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    rec = check_uniqueness_integrand(state.pair, small_problem, lam)
    assert rec.passed
    # zero momentum everywhere: the sign check is vacuous there, while the
    # curvature equals gamma and the coupling slope is d/dz arctan at z = 1
    assert rec.values["hessian_eig_min"] == pytest.approx(1.5, rel=1e-12)
    assert rec.values["coupling_dz_min"] == pytest.approx(0.5, rel=1e-12)
    assert rec.values["alpha_bound_margin"] == pytest.approx(4 / 1.5 - 0.5, rel=1e-12)


def test_uniqueness_integrand_flags_large_alpha(small_problem):
    big_alpha = make_problem(alpha=3.0)
    lam = LambdaData.from_problem(big_alpha, 0.0)
    x = big_alpha.grid.coordinates()[0]
    sloped = SolutionPair(
        u=SpaceTimeField(
            big_alpha.grid,
            big_alpha.time,
            np.outer(np.ones(big_alpha.time.num_slices), 0.2 * np.sin(2 * np.pi * x)),
        ),
        m=SpaceTimeField(big_alpha.grid, big_alpha.time,
                         np.ones((big_alpha.time.num_slices, big_alpha.grid.num_nodes))),
    )
    rec = check_uniqueness_integrand(sloped, big_alpha, lam)
    assert not rec.passed
    assert rec.location is not None and "node" in rec.location


def test_gradient_bounds_trivial_pair(small_problem):
    state = trivial_solution(small_problem)
    rec = check_gradient_bound(state.pair)
    assert rec.passed
    assert rec.values["du_sup"] == 0.0
    assert rec.values["dm_sup"] == 0.0
    assert rec.values["m_sup"] == pytest.approx(1.0, abs=1e-15)


def test_exponent_record(small_problem):
    rec = check_exponents(small_problem)
    assert rec.passed
    assert rec.values["alpha_bar"] == pytest.approx(0.25)


def test_report_on_solved_state(small_problem, solved):
    lam = LambdaData.from_problem(small_problem, 0.0)
    report = run_all_checks(solved.pair, small_problem, lam)
    assert report.all_pass
    names = [r.name for r in report.records]
    assert "mass_conservation" in names
    assert "uniqueness_integrand" in names
    as_dict = report.to_dict()
    assert as_dict["all_pass"]
    assert len(as_dict["records"]) == len(report.records)
    text = report.lines()
    assert any("aggregate: pass" in line for line in text)
    assert report["gradient_bounds"].values["du_sup"] > 0.0
