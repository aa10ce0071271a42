"""Stability certification for randomly perturbed dynamical systems.

The package simulates discrete-time systems driven by finite-state ergodic
Markov environments, certifies local stability of their random fixed points
through ergodic averages of log-contraction data, and ships a two-strategy
evolutionary asset market whose benchmark (generalized Kelly) strategy it
solves and whose stability it verifies against the exactly computable rate.
"""

from .environment import (
    EnvironmentChain,
    OmegaStream,
    ScalarSystem,
    Trajectory,
    advance,
    compose_cocycle,
    simulate_path,
    stationary_distribution,
)
from .errors import (
    ConfigError,
    DomainError,
    DomainEscapeError,
    EstimationError,
    IrreducibilityError,
    NumericalError,
    RdstabError,
    UsageError,
    ValidationError,
)
from .market import (
    MarketModel,
    as_scalar_system,
    check_kelly_positive,
    check_no_redundant_assets,
    contraction_fixed_point,
    derivative_at_zero,
    evolutionary_stability_report,
    lyapunov_exponent_exact,
    solve_kelly,
    wealth_map,
)
from .model_config import Diagnostic, validate_config
from .stability import (
    FKLadder,
    HolderCheck,
    LinearizationData,
    LipschitzData,
    SlopeFit,
    StabilityReport,
    basin_radius,
    batch_means,
    birkhoff_average,
    birkhoff_ladder,
    certify_contraction,
    check_holder,
    find_contracting_neighborhood,
    furstenberg_kesten_ladder,
    lipschitz_from_bound,
    lipschitz_from_derivative_sup,
    operator_norm,
    per_step_rate,
    product_cocycle_from_step,
    verify_exponential_convergence,
)

__version__ = "0.1.0"
