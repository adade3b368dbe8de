"""Gradient bounds for vector-valued variational problems with g(x, |Du|) integrands.

Submodules:
    integrands  builtin families, clamp regularization, comparison profiles
    dsl         expression language with second-order forward differentiation
    structural  growth-condition certification, exponents, window search
    lemmas      randomized checks of the auxiliary inequalities
    solver      Q1 finite elements and nonlinear CG minimization
    bound       bound evaluation and mesh or clamp sweeps
    config, cli experiment files and the command line
"""

from .bound import (
    BoundSample,
    SweepConfig,
    SweepResult,
    clamp_sweep,
    evaluate_bound,
    read_report_csv,
    refinement_sweep,
    report_csv,
    write_svg,
)
from .coefficients import Box, CoefficientField
from .config import ConfigError, ExperimentConfig, parse_config
from .dsl import Dual2, ParseError, eval_dual2, parse, to_integrand, to_text
from .errors import (
    ConvexityError,
    GradBoundError,
    InfeasibleExponentsError,
    InputDomainError,
    IntegrandRangeError,
    LineSearchError,
    NumericError,
)
from .integrands import (
    Family,
    HProfile,
    IntegrandSpec,
    IntegrandValues,
    RegularizationClamp,
    clamp_regularize,
    default_h_profile,
    eval_all,
    make_builtin,
)
from .lemmas import LemmaReport, LemmaResult, lemma_suite
from .quadrature import adaptive_simpson
from .solver import (
    BoundaryDatum,
    DiscreteField,
    Grid,
    Method,
    Solution,
    SolveOptions,
    cell_gradients,
    discrete_energy,
    energy_gradient,
    euler_residual,
    minimize,
)
from .structural import (
    AssumptionReport,
    ExponentSet,
    MoserSchedule,
    ParameterWindow,
    PhiBranch,
    PhiFamily,
    StructuralParams,
    admissible_window_search,
    check_h_growth,
    check_main_assumptions,
    exponents,
    g_function,
    moser_schedule,
    phi_eval,
)

__version__ = "0.1.0"
