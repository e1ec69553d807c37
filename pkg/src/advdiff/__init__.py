"""Forward and inverse solvers for linear advection-diffusion with a separable source.

The model is ``u_t - L u = rho(t) f(x)`` on a box with homogeneous Dirichlet
data and zero initial state, ``L u = div(a grad u) + b . grad u + c u``.
Given ``rho`` and the final state ``u(., T)``, the inverse problem recovers ``f``.
"""

from .amplitude import AmplitudeFunction
from .coefficients import CoefficientSet, EllipticityError, Profile, build_coefficients, check_ellipticity
from .config import ConfigError, Experiment, load_config
from .forward import (
    LinearSolveError,
    Problem,
    TimeGrid,
    Trajectory,
    make_problem,
    observe_final,
    solve_forward,
)
from .grid import Field, Grid, GridError, build_grid, read_field_csv, write_field_csv
from .inverse import (
    DivergenceError,
    InverseRun,
    ReconstructionResult,
    SourceToFinalMap,
    add_noise,
    adjoint_map,
    forward_map,
    reconstruct,
    singular_spectrum,
)
from .operator import PecletWarning, SparseOperator, adjoint_operator, apply_operator, assemble_operator
from .transform import (
    ExponentOverflowError,
    classify_sector,
    rho_hat,
    sample_plan,
    u_hat,
    verify_lemma_rho,
    verify_lemma_uhat,
)

__version__ = "0.1.0"

__all__ = [
    "AmplitudeFunction",
    "CoefficientSet",
    "ConfigError",
    "DivergenceError",
    "EllipticityError",
    "Experiment",
    "ExponentOverflowError",
    "Field",
    "Grid",
    "GridError",
    "InverseRun",
    "LinearSolveError",
    "PecletWarning",
    "Problem",
    "Profile",
    "ReconstructionResult",
    "SourceToFinalMap",
    "SparseOperator",
    "TimeGrid",
    "Trajectory",
    "add_noise",
    "adjoint_map",
    "adjoint_operator",
    "apply_operator",
    "assemble_operator",
    "build_coefficients",
    "build_grid",
    "check_ellipticity",
    "classify_sector",
    "forward_map",
    "load_config",
    "make_problem",
    "observe_final",
    "read_field_csv",
    "reconstruct",
    "rho_hat",
    "sample_plan",
    "singular_spectrum",
    "solve_forward",
    "u_hat",
    "verify_lemma_rho",
    "verify_lemma_uhat",
    "write_field_csv",
]
