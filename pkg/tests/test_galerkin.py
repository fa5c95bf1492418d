import numpy as np
import pytest

from mfgcon.continuation import trivial_solution
from mfgcon.galerkin import (
    FourierBasis,
    assemble_galerkin_system,
    shooting_matrix,
    solve_linearized_galerkin,
)
from mfgcon.grids import Field, SpaceTimeField
from mfgcon.linearized import LinearizedRHS, solve_linearized
from mfgcon.system import LambdaData, ResidualBundle, SolutionPair

from conftest import band_limited_spacetime, make_problem


def random_rhs(problem, rng, amp=1.0):
    grid, time = problem.grid, problem.time
    return LinearizedRHS(
        h=band_limited_spacetime(grid, time, rng, amp=amp),
        g=band_limited_spacetime(grid, time, rng, amp=amp),
        f0=Field(grid, band_limited_spacetime(grid, time, rng, amp=0.5 * amp).values[0]),
        vT=Field(grid, band_limited_spacetime(grid, time, rng, amp=0.5 * amp).values[-1]),
    )


def l2_time(stf):
    vol = stf.grid.cell_volume
    return float(np.sqrt(np.trapezoid(vol * np.sum(stf.values**2, axis=1), dx=stf.time.dt)))


def l2_space(field):
    return float(np.sqrt(field.grid.cell_volume * np.sum(field.values**2)))


def test_basis_orthonormal_and_h1_orthogonal(small_problem):
    basis = FourierBasis.build(small_problem.grid, 9)
    gram = basis.gram()
    assert np.max(np.abs(gram - np.eye(9))) < 1e-12
    vol = small_problem.grid.cell_volume
    stiff = vol * np.einsum("dkm,dlm->kl", basis.grads, basis.grads)
    off = stiff - np.diag(np.diag(stiff))
    assert np.max(np.abs(off)) < 1e-9
    # frequencies 0,1,1,2,2,3,3,4,4 -> stiffness 4 pi^2 k^2
    freqs = np.array([0, 1, 1, 2, 2, 3, 3, 4, 4])
    assert np.allclose(np.diag(stiff), 4 * np.pi**2 * freqs**2, rtol=1e-12)


def test_basis_parseval(small_problem, rng):
    basis = FourierBasis.build(small_problem.grid, 9)
    coeffs = rng.normal(size=9)
    values = basis.reconstruct(coeffs)
    vol = small_problem.grid.cell_volume
    assert vol * np.sum(values**2) == pytest.approx(np.sum(coeffs**2), rel=1e-12)


def test_basis_frequency_cap():
    grid_small = make_problem(n=8).grid
    with pytest.raises(ValueError):
        FourierBasis.build(grid_small, 9)  # would need frequency 4 = Nyquist


def test_trivial_base_blocks_are_diagonal_heat(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    basis = FourierBasis.build(small_problem.grid, 7)
    system = assemble_galerkin_system(small_problem, lam, state.pair, basis)
    freqs = np.array([0, 1, 1, 2, 2, 3, 3])
    assert np.allclose(np.diag(system.stiffness), 4 * np.pi**2 * freqs**2)
    assert np.max(np.abs(system.p_blocks)) < 1e-12
    assert np.max(np.abs(system.r_blocks)) < 1e-12
    # value rows couple to the density direction through alpha - 1/2
    expected_g = (small_problem.alpha - 0.5) * np.eye(7)
    assert np.max(np.abs(system.g_blocks[0] - expected_g)) < 1e-12
    # the gradient coupling block is gamma * stiffness for the unit Hessian
    assert np.allclose(system.s_blocks[0], 1.5 * system.stiffness, atol=1e-10)


def test_projected_data_zero_for_zero_sources(small_problem):
    basis = FourierBasis.build(small_problem.grid, 5)
    zeros = SpaceTimeField.zeros(small_problem.grid, small_problem.time)
    assert np.max(np.abs(basis.project(zeros.values))) == 0.0


def test_gradient_coupling_block_symmetric(small_problem, rng):
    # isotropic scalar Hessian coefficient makes the value-gradient block symmetric
    grid, time = small_problem.grid, small_problem.time
    base = SolutionPair(
        u=band_limited_spacetime(grid, time, rng, amp=0.3),
        m=SpaceTimeField(grid, time, 1.0 + 0.2 * band_limited_spacetime(grid, time, rng).values / 3),
    )
    lam = LambdaData.from_problem(small_problem, 0.4)
    basis = FourierBasis.build(grid, 7)
    system = assemble_galerkin_system(small_problem, lam, base, basis)
    for j in (0, time.num_slices // 2, time.num_slices - 1):
        block = system.s_blocks[j]
        assert np.max(np.abs(block - block.T)) < 1e-12


def test_shooting_matrix_structure_and_invertibility(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    for n_modes in (4, 8):
        basis = FourierBasis.build(small_problem.grid, n_modes)
        system = assemble_galerkin_system(small_problem, lam, state.pair, basis)
        phi = shooting_matrix(system)
        assert np.array_equal(phi[:n_modes, :n_modes], np.eye(n_modes))
        assert np.max(np.abs(phi[:n_modes, n_modes:])) == 0.0
        sigma_min = np.linalg.svd(phi, compute_uv=False)[-1]
        assert sigma_min > 0.0


def test_homogeneous_zero_data_gives_zero_trajectory(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    basis = FourierBasis.build(small_problem.grid, 8)
    zeros = SpaceTimeField.zeros(small_problem.grid, small_problem.time)
    rhs = LinearizedRHS(
        h=zeros,
        g=zeros,
        f0=Field.constant(small_problem.grid, 0.0),
        vT=Field.constant(small_problem.grid, 0.0),
    )
    pert, traj, info = solve_linearized_galerkin(
        small_problem, lam, state.pair, basis, rhs
    )
    assert max(pert.v.sup_norm(), pert.f.sup_norm()) <= 1e-10
    assert np.max(np.abs(traj.a_coeffs)) <= 1e-10
    assert info["sigma_min"] > 0.0


def test_cross_validation_against_monolithic_solve():
    # shared right-hand side, both paths, gap within the discretization error
    # of the coarser scheme and shrinking under time refinement
    gaps, self_errors = [], []
    solutions = {}
    for n_t in (32, 64):
        problem = make_problem(n=64, n_t=n_t, horizon=0.05)
        state = trivial_solution(problem)
        lam = LambdaData.from_problem(problem, 1.0)
        basis = FourierBasis.build(problem.grid, 8)
        rng = np.random.default_rng(3)
        rhs = random_rhs(problem, rng)
        pert_gal, _, _ = solve_linearized_galerkin(
            problem, lam, state.pair, basis, rhs
        )
        fp_rows = rhs.h.values.copy()
        fp_rows[0] = rhs.f0.values
        hjb_rows = -rhs.g.values
        hjb_rows[-1] = rhs.vT.values
        bundle = ResidualBundle(
            fp=SpaceTimeField(problem.grid, problem.time, fp_rows),
            hjb=SpaceTimeField(problem.grid, problem.time, hjb_rows),
            initial=rhs.f0,
            terminal=rhs.vT,
        )
        pert_mono = solve_linearized(problem, lam, state.pair, bundle)
        gap = max(
            np.max(np.abs(pert_gal.v.values - pert_mono.v.values)),
            np.max(np.abs(pert_gal.f.values - pert_mono.f.values)),
        )
        gaps.append(gap)
        solutions[n_t] = pert_mono
    # self-refinement error of the monolithic scheme at the shared slices
    coarse, fine = solutions[32], solutions[64]
    self_err = max(
        np.max(np.abs(coarse.v.values - fine.v.values[::2])),
        np.max(np.abs(coarse.f.values - fine.f.values[::2])),
    )
    assert gaps[1] < gaps[0]
    assert gaps[0] <= 10.0 * self_err


def test_energy_bound_single_constant(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    basis = FourierBasis.build(small_problem.grid, 8)
    rng = np.random.default_rng(12)
    ratios = []
    for _ in range(20):
        rhs = random_rhs(small_problem, rng)
        _, traj, _ = solve_linearized_galerkin(small_problem, lam, state.pair, basis, rhs)
        data = l2_time(rhs.h) + l2_time(rhs.g) + l2_space(rhs.f0) + l2_space(rhs.vT)
        ratios.append(np.max(traj.l2_norms()) / data)
    achieved = max(ratios)
    assert np.isfinite(achieved) and achieved < 10.0


@pytest.mark.parametrize("n_modes", [4, 8, 16])
def test_stepwise_energy_inequalities_uniform_in_modes(n_modes):
    # the two differential inequalities behind the energy estimate, evaluated
    # with the exact coefficient derivative of the projected system at every
    # slice; the required constant must not grow with the mode count
    problem = make_problem(n=64, n_t=32, horizon=0.05)
    state = trivial_solution(problem)
    lam = LambdaData.from_problem(problem, 1.0)
    basis = FourierBasis.build(problem.grid, n_modes)
    system = assemble_galerkin_system(problem, lam, state.pair, basis)
    rng = np.random.default_rng(8)
    rhs = random_rhs(problem, rng)
    _, traj, _ = solve_linearized_galerkin(problem, lam, state.pair, basis, rhs)
    hv = basis.project(rhs.h.values)
    gv = basis.project(rhs.g.values)
    k_mat = system.stiffness
    needed_f, needed_v = 0.0, 0.0
    for n in range(problem.time.num_slices):
        a, bb = traj.a_coeffs[:, n], traj.b_coeffs[:, n]
        t = system.times[n]
        block = system.rhs_matrix(t)
        adot = block[: n_modes, :] @ np.concatenate([a, bb]) + hv[n]
        bdot = block[n_modes :, :] @ np.concatenate([a, bb]) + gv[n]
        df2 = a @ k_mat @ a
        dv2 = bb @ k_mat @ bb
        lhs_f = 2 * a @ adot + df2
        rhs_f = np.sum(hv[n] ** 2) + dv2 + np.sum(a**2)
        if rhs_f > 1e-12:
            needed_f = max(needed_f, lhs_f / rhs_f)
        lhs_v = 2 * bb @ bdot - dv2
        rhs_v = np.sum(gv[n] ** 2) + np.sum(bb**2) + np.sum(a**2)
        if rhs_v > 1e-12:
            needed_v = max(needed_v, -lhs_v / rhs_v)
    # analytic constants at this base: C_f <= max(1, 2 gamma^2), C_v ~ 2
    assert needed_f <= 4.6
    assert needed_v <= 3.0


def test_zero_rhs_gives_zero_perturbation(small_problem):
    state = trivial_solution(small_problem)
    lam = LambdaData.from_problem(small_problem, 1.0)
    basis = FourierBasis.build(small_problem.grid, 6)
    zeros = SpaceTimeField.zeros(small_problem.grid, small_problem.time)
    rhs = LinearizedRHS(
        h=zeros, g=zeros,
        f0=Field.constant(small_problem.grid, 0.0),
        vT=Field.constant(small_problem.grid, 0.0),
    )
    pert, _, _ = solve_linearized_galerkin(small_problem, lam, state.pair, basis, rhs)
    assert pert.v.sup_norm() == 0.0
    assert pert.f.sup_norm() == 0.0
