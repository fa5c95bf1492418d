"""Solver and verification suite for congestion mean-field games on the torus.

The package couples a backward value-function equation with a forward density
transport equation, solves the pair by homotopy continuation from an explicit
endpoint with exact-Jacobian Newton corrections, cross-validates the inner
linear solves with a Fourier-Galerkin shooting construction, and re-checks
every accepted solution against the a priori bounds the theory guarantees.
"""

from .continuation import (
    ContinuationState,
    HorizonError,
    NewtonFailure,
    SolverConfig,
    newton_correct,
    solve_path,
    trivial_solution,
)
from .estimates import DerivedExponents, EstimateReport, run_all_checks
from .galerkin import (
    FourierBasis,
    GalerkinTrajectory,
    assemble_galerkin_system,
    shooting_matrix,
    solve_linearized_galerkin,
)
from .grids import (
    Field,
    PeriodicGrid,
    SpaceTimeField,
    TimeGrid,
    VectorField,
    divergence,
    gradient,
    heat_smoothing_norm,
    heat_step,
    integrate,
    laplacian,
)
from .hamiltonians import (
    AssumptionReport,
    HamiltonianModel,
    LagrangianModel,
    SampleSpec,
    check_assumptions,
    legendre_transform,
)
from .linearized import (
    LinearizedRHS,
    Perturbation,
    apply_L,
    assemble_L,
    solve_linearized,
)
from .montecarlo import SDEConfig, l1_distance, simulate_density
from .system import (
    LambdaData,
    MFGProblem,
    Potential,
    ResidualBundle,
    SolutionPair,
    congestion_ratio,
    residual_fp,
    residual_full,
    residual_hjb,
)

__version__ = "0.1.0"
