"""Action functionals, minimum-action paths and large-deviation checks for
SDEs driven by Brownian motion and Lévy processes with exponential moments."""

from .action import (
    action_brownian,
    action_entropy_form,
    action_general,
    action_joint,
    action_levy,
    action_sde_brownian,
    dual_lower_bound,
)
from .errors import (
    InfiniteMomentError,
    LevyActionError,
    NonConvexError,
    NumericalError,
    QuadratureError,
    ValidationError,
)
from .legendre import ConvexFn, LegendreResult, hamiltonian, lagrangian, legendre_transform
from .levy_core import (
    AtomicMeasure,
    DensityMeasure,
    ExponentialTail,
    LevyTriplet,
    MomentDiagnostic,
    TemperedStable,
    check_exponential_moments,
    log_mgf,
    psi_eval,
)
from .minimize import BoundaryProblem, MinimizationResult, euler_lagrange_residual, minimize_action
from .model import CoefficientSet, ModelSpec, brownian_model
from .montecarlo import EventSpec, LdpEstimate, equivalence_gap, estimate_event, rate_table
from .paths import Path, StepFunction
from .simulate import (
    RngStream,
    SamplePath,
    discretize_Zn,
    euler_maruyama,
    fm_scheme,
    sample_scaled_brownian,
    sample_scaled_levy,
)

__version__ = "0.1.0"
