"""Homotopy continuation from the explicit endpoint to the target system.

At lam = 1 the blended system has the closed-form solution m == 1 and
u(x, t) = (1 - pi/4)(t - T); the representative with u(., T) = 0 is used so
the terminal row vanishes.  From there lam marches monotonically to 0 with
a damped Newton corrector at every step, an adaptive step that halves on
failure and grows on easy successes, and a residual certificate attached to
every accepted state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Field, SpaceTimeField, integrate
from .linearized import Perturbation, ResidualBundle, solve_linearized
from .system import LambdaData, MFGProblem, SolutionPair, residual_full

__all__ = [
    "SolverConfig",
    "ContinuationState",
    "NewtonDiagnostics",
    "NewtonFailure",
    "HorizonError",
    "trivial_solution",
    "newton_correct",
    "solve_path",
]


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    newton_max_iters: int = 12
    dlambda_init: float = 0.1
    dlambda_min: float = 1e-4
    dlambda_max: float = 0.25
    m_positivity_margin: float = 1e-6
    linear_method: str = "auto"

    def __post_init__(self):
        if self.newton_tol <= 0.0 or self.m_positivity_margin <= 0.0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.dlambda_min <= self.dlambda_init <= self.dlambda_max <= 1.0:
            raise ValueError("need 0 < dlambda_min <= dlambda_init <= dlambda_max <= 1")


@dataclass
class ContinuationState:
    """An accepted point on the homotopy path with its residual certificate."""

    lam: float
    pair: SolutionPair
    residual_norm: float
    newton_iters: int
    step: float

    def min_density(self) -> float:
        return self.pair.min_density()

    def mass_deviation(self) -> float:
        masses = [integrate(self.pair.m.slice(n)) for n in range(self.pair.m.time.num_slices)]
        return float(np.max(np.abs(np.asarray(masses) - 1.0)))


@dataclass
class NewtonDiagnostics:
    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = False


class NewtonFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: NewtonDiagnostics):
        self.diagnostics = diagnostics
        super().__init__(message)


class HorizonError(RuntimeError):
    """The step size underflowed; the path left the tractable short-time regime."""

    def __init__(self, states: list, failed_lambda: float):
        self.states = states
        self.failed_lambda = failed_lambda
        last = states[-1].lam if states else float("nan")
        super().__init__(
            f"continuation stalled at lambda={failed_lambda:.4f}; last accepted lambda={last:.4f}"
        )


def trivial_solution(problem: MFGProblem) -> ContinuationState:
    """The exact lam = 1 state: uniform density, spatially flat value function."""
    times = problem.time.times()
    horizon = problem.time.horizon
    slope = 1.0 - np.pi / 4.0
    u_vals = np.repeat(
        (slope * (times - horizon))[:, None], problem.grid.num_nodes, axis=1
    )
    m_vals = np.ones((problem.time.num_slices, problem.grid.num_nodes))
    pair = SolutionPair(
        u=SpaceTimeField(problem.grid, problem.time, u_vals),
        m=SpaceTimeField(problem.grid, problem.time, m_vals),
    )
    lam_data = LambdaData.from_problem(problem, 1.0)
    res = residual_full(problem, lam_data, pair).sup_norm()
    return ContinuationState(lam=1.0, pair=pair, residual_norm=res, newton_iters=0, step=0.0)


def _negate(bundle: ResidualBundle) -> ResidualBundle:
    return ResidualBundle(
        fp=SpaceTimeField(bundle.fp.grid, bundle.fp.time, -bundle.fp.values),
        hjb=SpaceTimeField(bundle.hjb.grid, bundle.hjb.time, -bundle.hjb.values),
        initial=Field(bundle.initial.grid, -bundle.initial.values),
        terminal=Field(bundle.terminal.grid, -bundle.terminal.values),
    )


def newton_correct(
    problem: MFGProblem,
    lam_data: LambdaData,
    pair: SolutionPair,
    config: SolverConfig = SolverConfig(),
) -> tuple[SolutionPair, NewtonDiagnostics]:
    """Damped Newton iteration on the full residual.

    Accepts once the sup-norm drops below ``newton_tol``.  Each step is
    halved until the residual decreases and the density keeps its positivity
    margin; running out of damping or iterations raises NewtonFailure.
    """
    current = pair.copy()
    bundle = residual_full(problem, lam_data, current)
    res = bundle.sup_norm()
    diag = NewtonDiagnostics(iterations=0, residual_history=[res])
    for it in range(config.newton_max_iters):
        if res <= config.newton_tol:
            diag.converged = True
            return current, diag
        direction: Perturbation = solve_linearized(
            problem, lam_data, current, _negate(bundle), method=config.linear_method
        )
        step = 1.0
        accepted = None
        for _ in range(40):
            cand = SolutionPair(
                u=SpaceTimeField(
                    problem.grid, problem.time, current.u.values + step * direction.v.values
                ),
                m=SpaceTimeField(
                    problem.grid, problem.time, current.m.values + step * direction.f.values
                ),
            )
            if cand.min_density() < config.m_positivity_margin:
                step *= 0.5
                continue
            cand_bundle = residual_full(problem, lam_data, cand)
            cand_res = cand_bundle.sup_norm()
            if cand_res < res:
                accepted = (cand, cand_bundle, cand_res)
                break
            step *= 0.5
        if accepted is None:
            raise NewtonFailure(
                "line search could not decrease the residual while keeping m positive",
                diag,
            )
        current, bundle, res = accepted
        diag.iterations = it + 1
        diag.residual_history.append(res)
    if res <= config.newton_tol:
        diag.converged = True
        return current, diag
    raise NewtonFailure(
        f"no convergence in {config.newton_max_iters} iterations (residual {res:.3e})",
        diag,
    )


def solve_path(
    problem: MFGProblem,
    config: SolverConfig = SolverConfig(),
    fixed_dlambda: float | None = None,
    on_state=None,
) -> list[ContinuationState]:
    """March lam from 1 to 0, Newton-correcting at every step.

    Returns the accepted states in order (lam = 1 first, lam = 0 last).
    The step adapts unless ``fixed_dlambda`` pins it: it halves when Newton
    fails and grows by 1.5x after a step that needed at most two iterations.
    Underflow of the step below ``dlambda_min`` raises :class:`HorizonError`
    carrying the states accepted so far.
    """
    state = trivial_solution(problem)
    states = [state]
    if on_state is not None:
        on_state(state)
    dl = fixed_dlambda if fixed_dlambda is not None else config.dlambda_init
    lam = 1.0
    while lam > 0.0:
        lam_next = max(0.0, lam - dl)
        if lam_next < 1e-9:
            lam_next = 0.0
        lam_data = LambdaData.from_problem(problem, lam_next)
        try:
            pair, diag = newton_correct(problem, lam_data, state.pair, config)
        except NewtonFailure:
            if fixed_dlambda is not None:
                raise HorizonError(states, lam_next)
            dl *= 0.5
            if dl < config.dlambda_min:
                raise HorizonError(states, lam_next)
            continue
        res = residual_full(problem, lam_data, pair).sup_norm()
        state = ContinuationState(
            lam=lam_next,
            pair=pair,
            residual_norm=res,
            newton_iters=diag.iterations,
            step=lam - lam_next,
        )
        states.append(state)
        if on_state is not None:
            on_state(state)
        lam = lam_next
        if fixed_dlambda is None and diag.iterations <= 2:
            dl = min(dl * 1.5, config.dlambda_max)
    return states
