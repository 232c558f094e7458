"""Solvers and certificates for degenerate quasilinear elliptic Dirichlet problems."""

from .barriers import (
    Barrier,
    ConcaveMajorant,
    Modulus,
    boundary_modulus_check,
    build_barrier,
    concave_majorant,
    verify_barrier,
)
from .coefficients import (
    BoxRegion,
    CoefficientField,
    ConditionReport,
    check_diagonal_equivalence,
    check_nondegeneracy_box,
    check_subordination_suite,
    make_builtin_family,
    with_lower_order,
)
from .errors import (
    ConfigError,
    ConstructionError,
    DataError,
    DegenSolveError,
    EmissionError,
    NondegeneracyViolation,
    NumericalError,
    ParameterError,
    SingularPointError,
)
from .grid import StructuredGrid
from .oracle import (
    SharpnessExample,
    oracle_diagnostics,
    sharpness_conjugate_f,
    sharpness_grad_w,
    sharpness_w,
)
from .principles import (
    PrincipleReport,
    check_comparison,
    check_maximum_principle,
    interior_regularity_report,
)
from .solver import (
    DiscreteSolution,
    SolverConfig,
    TruncationProfile,
    assemble_residual,
    build_truncation,
    newton_solve,
    viscosity_continuation,
)

__version__ = "0.1.0"
