"""Stabilizing feedback for linear systems from weak observability certificates."""

from ._kernels import BACKEND
from .errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    InputError,
    InternalPositivityViolation,
    NotStabilizedAtRate,
    NumericalError,
    PrecisionError,
    RateUnattainable,
    ShapeError,
    StabkitError,
)
from .feedback import (
    FeedbackLaw,
    komornik_feedback,
    lqr_feedback,
    solve_care,
    synthesize_for_rate,
    synthesize_general,
    synthesize_main,
    urquiza_feedback,
)
from .gramian import GramianBundle, admissible, lambda_slice, pi_integral, q_operator
from .numerics import (
    QuadSpec,
    chol_spd,
    expm,
    integrate_mat,
    solve_lyapunov,
    sym_pencil_extremes,
)
from .observability import (
    ObservabilityCertificate,
    StaticCert,
    certify_static,
    constants_from_feedback,
    dynamic_to_static,
    iterate_static,
    static_to_dynamic,
    validate_certificate,
)
from .systems import ControllabilityReport, SystemDef, analyze, load_system, make_example
from .verify import (
    Tolerances,
    VerificationReport,
    closed_loop_report,
    energy_monotonicity,
    lyapunov_residual,
    positivity_report,
    riccati_residual,
    verify_law,
)

__version__ = "0.1.0"
