"""Spectral cut-off regularization for backward reaction-diffusion problems.

Recover earlier states of ``u_t + (I - Laplacian) u = F(u)`` on a periodic
cube from noisy final data, with the parameter-choice rules that yield
Holder rates for ``t > 0`` and a logarithmic bound at ``t = 0``.
"""

from .errors import (
    BackwardRDError,
    BlowUpError,
    ConfigurationError,
    DivergenceError,
    DomainError,
    GridError,
    InfeasibleError,
    OverflowGuardError,
)
from .forward import Trajectory, evolve, export_trajectory, gevrey_profile, self_convergence_order
from .harness import ExperimentConfig, RateFit, emit, inject_noise, load_config, parse_config, run_rate_study
from .iterative import (
    IterationReport,
    SchemeState,
    cesaro_mean,
    choose_K,
    convergence_report,
    gamma,
    gamma_bar,
    iterate,
)
from .nonlinearity import (
    CATALOG_NAMES,
    Nonlinearity,
    ReactionNetwork,
    catalog,
    choose_M_eps,
    clamp,
    mass_action_field,
)
from .regularizer import (
    BackwardSolution,
    LogBound,
    RegularizationPlan,
    make_plan,
    predicted_rate,
    select_C_eps,
    select_t_eps,
    solve_backward,
    stability_gap,
)
from .spectral import (
    GridSpec,
    SpectralField,
    gevrey_norm,
    inverse_transform,
    load_field,
    project_cutoff,
    save_field,
    sobolev_norm,
    transform,
)

__version__ = "0.1.0"
