"""Simulation and short-time density analysis for chained hypoelliptic SDEs."""

from .errors import (
    DegenerateModelError,
    HypochainError,
    InsufficientDataError,
    NumericalError,
    SimulationError,
    StructureError,
    UnsupportedModelError,
)
from .model_registry import (
    REGISTRY,
    ChainedSystem,
    CoefficientField,
    bs_asian,
    build_model,
    check_H1,
    kolmogorov_linear,
    quadratic_asian,
    validate_structure,
)
from .flow_scaling import rescale, scaling_diagonal, solve_theta
from .limit_gaussian import build_hormander_matrix, build_limit_model, limit_density, limit_gradient, limit_hessian
from .mc_engine import SimConfig, residuals, simulate_joint_N, simulate_paths
from .density_lab import (
    convergence_experiment,
    diagonal_decay,
    estimate_density,
    fit_envelope,
    moment_slopes,
    tail_curve,
)
from .asian_pricing import BasketSpec, atm_asymptotic_price, limit_variance, mc_price, to_chained_system

__version__ = "0.1.0"
