"""Exact linearization of the discrete residual operator.

The derivative is taken of the discrete equations themselves, so Newton
inherits quadratic local convergence and a finite-difference check of the
directional derivative is exact up to the quadratic remainder.  Both a
matrix-free application and an assembled sparse matrix are provided; the
assembled path backs direct factorization at desk scale, the matrix-free
path a Krylov solve preconditioned by the two decoupled heat chains.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import (
    Field,
    PeriodicGrid,
    SpaceTimeField,
    _div_stack,
    _grad_stack,
    _lap_stack,
    _spectra,
)
from .system import (
    LambdaData,
    MFGProblem,
    ResidualBundle,
    SolutionPair,
    _check_strict_density,
    _congestion_stack,
)

__all__ = [
    "Perturbation",
    "LinearizedRHS",
    "MemoryBudgetError",
    "LinearSolveError",
    "apply_L",
    "assemble_L",
    "AssembledLinearized",
    "solve_linearized",
    "pair_to_vector",
    "vector_to_perturbation",
    "bundle_to_vector",
]


class Perturbation(NamedTuple):
    """Direction (v, f) in value-function and density components."""

    v: SpaceTimeField
    f: SpaceTimeField

    def sup_norm(self) -> float:
        return max(self.v.sup_norm(), self.f.sup_norm())


class LinearizedRHS(NamedTuple):
    """Right-hand side (h, g, f0, vT): sources for the two equations plus
    the initial density and terminal value data rows."""

    h: SpaceTimeField
    g: SpaceTimeField
    f0: Field
    vT: Field


class MemoryBudgetError(RuntimeError):
    """Assembling the operator would exceed the configured entry budget."""


class LinearSolveError(RuntimeError):
    """The inner linear solve did not reach the requested tolerance."""


@dataclass
class _BaseCoefficients:
    """Frozen per-slice coefficient fields of the linearization at a base pair."""

    q: np.ndarray            # (d, K, M) congestion ratio
    dp_h: np.ndarray         # (d, K, M) momentum gradient of H at q
    h_val: np.ndarray        # (K, M)
    hess_a: np.ndarray       # (K, M) isotropic Hessian coefficient
    hess_b: np.ndarray       # (K, M) rank-one Hessian coefficient
    m_pow: np.ndarray        # (K, M) m^alpha (floored)
    m: np.ndarray            # (K, M)
    dv_dz: np.ndarray        # (K, M) derivative of the blended coupling
    drift_coef: np.ndarray   # (d, K, M) flux coefficient in front of f
    zero_order_u: np.ndarray  # (K, M) coefficient of f in the value equation


def _base_coefficients(
    problem: MFGProblem, lam_data: LambdaData, base: SolutionPair, strict: bool
) -> _BaseCoefficients:
    alpha = problem.alpha
    u, m = base.u.values, base.m.values
    _check_strict_density(m, strict)
    du = _grad_stack(u, problem.grid)
    m_safe = np.maximum(m, problem.m_floor)
    q = _congestion_stack(du, m, alpha, problem.m_floor)
    ham = lam_data.hamiltonian
    h_val = ham.value(q)
    dp_h = ham.grad(q)
    hess_a, hess_b = ham.hess_coeffs(q)
    q_sq = np.sum(q * q, axis=0)
    hess_q = (hess_a + hess_b * q_sq) * q  # D^2H . q, radial for this family
    drift_coef = dp_h - alpha * hess_q + lam_data.b_values[:, None, :]
    q_dot_dp = np.sum(q * dp_h, axis=0)
    m_pow = m_safe**alpha
    zero_order_u = alpha * m_safe ** (alpha - 1.0) * (h_val - q_dot_dp) - lam_data.potential_dz(m)
    return _BaseCoefficients(
        q=q,
        dp_h=dp_h,
        h_val=h_val,
        hess_a=hess_a,
        hess_b=hess_b,
        m_pow=m_pow,
        m=m_safe,
        dv_dz=lam_data.potential_dz(m),
        drift_coef=drift_coef,
        zero_order_u=zero_order_u,
    )


def apply_L(
    problem: MFGProblem,
    lam_data: LambdaData,
    base: SolutionPair,
    direction: Perturbation,
    strict: bool = True,
) -> ResidualBundle:
    """Directional derivative of the residual at ``base`` along ``direction``.

    Rows mirror the residual layout: transport rows first (slice 0 is the
    initial-data row f(., 0)), then value rows (last slice is the terminal
    row v(., T)), plus those two data rows repeated as plain fields.
    """
    coef = _base_coefficients(problem, lam_data, base, strict)
    return _apply_from_coefficients(problem, lam_data, coef, direction)


def _apply_from_coefficients(
    problem: MFGProblem,
    lam_data: LambdaData,
    coef: _BaseCoefficients,
    direction: Perturbation,
) -> ResidualBundle:
    grid, dt = problem.grid, problem.time.dt
    alpha = problem.alpha
    v, f = direction.v.values, direction.f.values
    dv = _grad_stack(v, grid)
    q_dot_dv = np.sum(coef.q * dv, axis=0)
    hess_dv = coef.hess_a * dv + coef.hess_b * q_dot_dv * coef.q

    m_om = coef.m ** (1.0 - alpha)
    flux = coef.drift_coef * f[None, :, :] + m_om * hess_dv
    div_flux = _div_stack(flux, grid)
    lap_f = _lap_stack(f, grid)
    fp = np.empty_like(f)
    fp[1:] = (f[1:] - f[:-1]) / dt - lap_f[1:] - div_flux[1:]
    fp[0] = f[0]

    lap_v = _lap_stack(v, grid)
    transport = np.einsum("dkm,dkm->km", coef.dp_h, dv) + np.einsum(
        "dm,dkm->km", lam_data.b_values, dv
    )
    hjb = np.empty_like(v)
    hjb[:-1] = (
        (v[:-1] - v[1:]) / dt
        - lap_v[:-1]
        + coef.zero_order_u[:-1] * f[:-1]
        + transport[:-1]
    )
    hjb[-1] = v[-1]

    return ResidualBundle(
        fp=SpaceTimeField(grid, problem.time, fp),
        hjb=SpaceTimeField(grid, problem.time, hjb),
        initial=Field(grid, fp[0].copy()),
        terminal=Field(grid, hjb[-1].copy()),
    )


# ---------------------------------------------------------------------------
# vector packing: x = [v slices | f slices], rows = [value rows | transport rows]
# ---------------------------------------------------------------------------


def pair_to_vector(u: SpaceTimeField, m: SpaceTimeField) -> np.ndarray:
    return np.concatenate([u.values.ravel(), m.values.ravel()])


def vector_to_perturbation(x: np.ndarray, problem: MFGProblem) -> Perturbation:
    k, mm = problem.time.num_slices, problem.grid.num_nodes
    half = k * mm
    v = SpaceTimeField(problem.grid, problem.time, x[:half].reshape(k, mm).copy())
    f = SpaceTimeField(problem.grid, problem.time, x[half:].reshape(k, mm).copy())
    return Perturbation(v=v, f=f)


def bundle_to_vector(bundle: ResidualBundle) -> np.ndarray:
    return np.concatenate([bundle.hjb.values.ravel(), bundle.fp.values.ravel()])


# ---------------------------------------------------------------------------
# assembled operator
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _dense_operators(dim: int, n: int):
    """Dense spectral derivative and Laplacian matrices on the flat node index."""
    grid = PeriodicGrid(dim, n)
    eye = np.eye(grid.num_nodes)
    grads = _grad_stack(eye, grid)  # (d, M, M): row = input node, trailing = output
    d_mats = tuple(np.ascontiguousarray(grads[a].T) for a in range(dim))
    lap = np.ascontiguousarray(_lap_stack(eye, grid).T)
    return d_mats, lap


@dataclass
class AssembledLinearized:
    """Sparse matrix form of the linearized operator plus its factorization."""

    matrix: sp.csc_matrix
    problem: MFGProblem
    _lu: object = None

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._lu is None:
            self._lu = spla.splu(self.matrix)
        return self._lu.solve(rhs)

    @property
    def nnz_per_row(self) -> float:
        return self.matrix.nnz / self.matrix.shape[0]


def assemble_L(
    problem: MFGProblem,
    lam_data: LambdaData,
    base: SolutionPair,
    max_entries: int = 60_000_000,
    strict: bool = True,
) -> AssembledLinearized:
    """Assemble the linearized operator as one sparse matrix.

    Spectral derivatives couple every node along a grid line, so the spatial
    blocks are dense per slice; the estimated entry count is checked against
    ``max_entries`` and a :class:`MemoryBudgetError` asks the caller to fall
    back to the matrix-free path when the budget would be exceeded.
    """
    grid, time = problem.grid, problem.time
    mm, k, dt = grid.num_nodes, time.num_slices, time.dt
    estimate = 4 * k * mm * mm + 2 * k * mm
    if estimate > max_entries:
        raise MemoryBudgetError(
            f"assembly needs about {estimate:.2e} entries, budget is {max_entries:.2e}"
        )
    coef = _base_coefficients(problem, lam_data, base, strict)
    d_mats, lap = _dense_operators(grid.dim, grid.points_per_dim)
    alpha = problem.alpha
    eye = np.eye(mm)

    rows_list, cols_list, vals_list = [], [], []
    offset_f = k * mm  # column offset of the density slices

    def put(block: np.ndarray, row0: int, col0: int):
        r, c = np.nonzero(block)
        rows_list.append(r + row0)
        cols_list.append(c + col0)
        vals_list.append(block[r, c])

    b_vals = lam_data.b_values
    m_om = coef.m ** (1.0 - alpha)

    for n in range(k):
        vrow = n * mm
        frow = offset_f + n * mm
        vcol = n * mm
        fcol = offset_f + n * mm

        if n < k - 1:
            # value rows: time difference, diffusion, transport, density coupling
            a_vv = eye / dt - lap
            for a in range(grid.dim):
                a_vv = a_vv + (coef.dp_h[a, n] + b_vals[a])[:, None] * d_mats[a]
            put(a_vv, vrow, vcol)
            put(-eye / dt, vrow, vcol + mm)
            put(np.diag(coef.zero_order_u[n]), vrow, fcol)
        else:
            put(eye, vrow, vcol)

        if n > 0:
            # transport rows: flux divergence against both components
            a_ff = eye / dt - lap
            for a in range(grid.dim):
                a_ff = a_ff - d_mats[a] @ np.diag(coef.drift_coef[a, n])
            put(a_ff, frow, fcol)
            put(-eye / dt, frow, fcol - mm)

            w_mat = sum(np.diag(coef.q[a, n]) @ d_mats[a] for a in range(grid.dim))
            a_fv = np.zeros((mm, mm))
            for a in range(grid.dim):
                inner = np.diag(m_om[n] * coef.hess_a[n]) @ d_mats[a]
                inner += np.diag(m_om[n] * coef.hess_b[n] * coef.q[a, n]) @ w_mat
                a_fv -= d_mats[a] @ inner
            put(a_fv, frow, vcol)
        else:
            put(eye, frow, fcol)

    rows = np.concatenate(rows_list)
    cols = np.concatenate(cols_list)
    vals = np.concatenate(vals_list)
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(2 * k * mm, 2 * k * mm)).tocsc()
    return AssembledLinearized(matrix=matrix, problem=problem)


# ---------------------------------------------------------------------------
# linear solves
# ---------------------------------------------------------------------------


def _heat_chain_preconditioner(problem: MFGProblem):
    """Inverse of the two decoupled implicit heat chains, applied spectrally.

    The value chain is solved backward from the terminal row, the density
    chain forward from the initial row; both amount to dividing by
    1/dt + |omega|^2 mode by mode.
    """
    grid, time = problem.grid, problem.time
    mm, k, dt = grid.num_nodes, time.num_slices, time.dt
    _, ksq = _spectra(grid.dim, grid.points_per_dim)
    sym = 1.0 / (1.0 / dt + ksq)
    axes = tuple(range(-grid.dim, 0))

    def inv_heat(rhs_flat: np.ndarray) -> np.ndarray:
        spec = np.fft.fftn(rhs_flat.reshape(grid.shape), axes=axes)
        return np.fft.ifftn(sym * spec, axes=axes).real.ravel()

    def apply(x: np.ndarray) -> np.ndarray:
        rv = x[: k * mm].reshape(k, mm)
        rf = x[k * mm :].reshape(k, mm)
        v = np.empty_like(rv)
        f = np.empty_like(rf)
        v[k - 1] = rv[k - 1]
        for n in range(k - 2, -1, -1):
            v[n] = inv_heat(rv[n] + v[n + 1] / dt)
        f[0] = rf[0]
        for n in range(1, k):
            f[n] = inv_heat(rf[n] + f[n - 1] / dt)
        return np.concatenate([v.ravel(), f.ravel()])

    return spla.LinearOperator((2 * k * mm, 2 * k * mm), matvec=apply)


def solve_linearized(
    problem: MFGProblem,
    lam_data: LambdaData,
    base: SolutionPair,
    rhs: ResidualBundle,
    method: str = "auto",
    dof_budget: int = 120_000,
    rtol: float = 1e-12,
) -> Perturbation:
    """Solve the linearized system L w = rhs for the direction w = (v, f).

    ``rhs`` uses the residual row layout.  Direct sparse factorization is
    used at desk scale, a preconditioned Krylov iteration above the budget
    or on request (method in {"auto", "direct", "krylov"}).
    """
    n_dof = 2 * problem.time.num_slices * problem.grid.num_nodes
    rhs_vec = bundle_to_vector(rhs)
    if method not in ("auto", "direct", "krylov"):
        raise ValueError(f"unknown method {method!r}")
    if method == "direct" or (method == "auto" and n_dof <= dof_budget):
        op = assemble_L(problem, lam_data, base)
        x = op.solve(rhs_vec)
        return vector_to_perturbation(x, problem)

    coef = _base_coefficients(problem, lam_data, base, strict=True)

    def matvec(x: np.ndarray) -> np.ndarray:
        direction = vector_to_perturbation(x, problem)
        return bundle_to_vector(
            _apply_from_coefficients(problem, lam_data, coef, direction)
        )

    a_op = spla.LinearOperator((n_dof, n_dof), matvec=matvec)
    precond = _heat_chain_preconditioner(problem)
    scale = float(np.max(np.abs(rhs_vec)))
    if scale == 0.0:
        return vector_to_perturbation(np.zeros(n_dof), problem)
    x, info = spla.lgmres(
        a_op, rhs_vec, M=precond, rtol=rtol, atol=rtol * scale, maxiter=400
    )
    if info != 0:
        raise LinearSolveError(f"Krylov solve did not converge (info={info})")
    return vector_to_perturbation(x, problem)
