import numpy as np
import pytest

from mfgcon.grids import Field, PeriodicGrid, SpaceTimeField, TimeGrid, VectorField
from mfgcon.hamiltonians import HamiltonianModel
from mfgcon.system import MFGProblem, Potential


def band_limited(grid, rng, k_max=3, amp=1.0):
    """Random trig polynomial with frequencies up to k_max per axis."""
    coords = grid.coordinates()
    out = np.zeros(grid.shape)
    if grid.dim == 1:
        freqs = [(k,) for k in range(1, k_max + 1)]
    else:
        freqs = [(kx, ky) for kx in range(0, k_max + 1) for ky in range(0, k_max + 1)
                 if (kx, ky) != (0, 0)]
    for kvec in freqs:
        phase = 2 * np.pi * sum(k * c for k, c in zip(kvec, coords))
        out = out + amp * rng.normal() * np.cos(phase) + amp * rng.normal() * np.sin(phase)
    return Field(grid, out.ravel())


def band_limited_spacetime(grid, time, rng, k_max=3, amp=1.0):
    rows = []
    profile = 1.0 + 0.5 * np.sin(np.linspace(0.0, 2.0, time.num_slices))
    base = band_limited(grid, rng, k_max, amp)
    second = band_limited(grid, rng, k_max, amp)
    for j in range(time.num_slices):
        rows.append(profile[j] * base.values + (1 - profile[j]) * second.values)
    return SpaceTimeField(grid, time, np.stack(rows))


def make_problem(
    n=32,
    n_t=16,
    horizon=0.04,
    dim=1,
    gamma=1.5,
    alpha=0.5,
    b_amp=0.1,
    psi_amp=0.05,
    m0_amp=0.2,
    v1_amp=0.05,
    v2_kind="arctan",
    weight=1.0,
):
    grid = PeriodicGrid(dim, n)
    time = TimeGrid(horizon, n_t)
    coords = grid.coordinates()
    phase = 2 * np.pi * coords[0]
    ham = HamiltonianModel.iso_power(gamma, weight)
    b_vals = np.zeros((dim, grid.num_nodes))
    b_vals[0] = b_amp * np.sin(phase).ravel()
    pot = Potential(v1=Field(grid, (v1_amp * np.cos(phase)).ravel()), v2_kind=v2_kind)
    m0 = Field(grid, (1.0 + m0_amp * np.cos(phase)).ravel())
    return MFGProblem(
        grid=grid,
        time=time,
        alpha=alpha,
        hamiltonian=ham,
        b=VectorField(grid, b_vals),
        potential=pot,
        psi=Field(grid, (psi_amp * np.cos(phase)).ravel()),
        m0=m0,
    )


@pytest.fixture(scope="session")
def small_problem():
    return make_problem()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
