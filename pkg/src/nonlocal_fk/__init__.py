"""Nonlocal jump-driven parabolic equations on a periodic lattice.

Spectral time steppers, Feynman-Kac Monte Carlo over compound Poisson paths,
stability certificates for the spatial logistic equation and Gaussian random
initial perturbations.
"""

__version__ = "0.1.0"

from .errors import (
    AssumptionViolated,
    ConfigurationError,
    ConvergenceFailure,
    CoverageError,
    DomainError,
    EstimatorOverflow,
    GridMismatchError,
    InvalidRateFunction,
    NonlocalFKError,
    PositivityWarning,
    StepSizeError,
    UnresolvableKernelError,
)
from .lattice import (
    Field,
    FieldSeries,
    Gaussian,
    Grid,
    Kernel,
    ModelParams,
    SignedKernel,
    Tabulated,
    TopHat,
    apply_generator,
    build_kernel,
    combined_kernel,
    convolve,
    semigroup_apply,
)
from .jumps import PathEnsemble, SeedSpec, sample_ensemble, sample_path
from .feynman_kac import (
    duhamel_series,
    fk_linear_estimate,
    fk_logistic_identity_check,
    fk_nonlinear_fixed_point,
    psi_operator,
)
from .solvers import (
    comparison_check,
    logistic_closed_form,
    solve_logistic,
    solve_perturbed,
    solve_taylor_hierarchy,
    taylor_sum,
)
from .stability import (
    cn_coefficients,
    decay_envelope,
    generating_function,
    k1_decay_check,
    logistic_decay_rate,
    taylor_bound_check,
)
from .random_fields import (
    JumpSymbolProfile,
    SpectrumProfile,
    TabulatedSpectrum,
    decay_exponent_fit,
    mc_second_moment,
    sample_field,
    second_moment_spectral,
)
