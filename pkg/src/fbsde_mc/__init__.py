"""Particle Monte Carlo for nonlinear forward-backward systems via a
perturbative expansion: each order is an interacting-particle cascade with
Poisson interaction times and stochastic flows, validated against
deterministic oracles."""

from .errors import (
    ConfigurationError,
    FbsdeError,
    OracleFailure,
    SimulationError,
)
from .model import (
    CATALOG,
    DriverOnZeroth,
    ModelSpec,
    ZerothOrderFunctions,
    builtin_model,
    fit_zeroth_order,
    verify_partials,
)
from .sde import (
    AugmentedPath,
    PathSimulation,
    RngStream,
    TimeGrid,
    build_grid,
    malliavin_x,
    simulate_batch,
    simulate_path,
)
from .cascade import (
    ExpansionResult,
    InteractionSchedule,
    MonteCarloConfig,
    OrderEstimate,
    combine_orders,
    estimate_v0,
    estimate_v1,
    estimate_v2,
    estimate_v3,
    estimate_z0,
    estimate_z1,
    estimate_z2,
    sample_interactions,
    weight_fhat,
)
from .coupled import (
    CoupledSources,
    build_sources,
    estimate_v1_coupled,
    estimate_v2_coupled,
    estimate_z1_coupled,
)
from .oracle import (
    GradientReport,
    Grid1D,
    OdeReduction,
    PdeSurface,
    check_gradient_vs_bump,
    ode_reduction,
    quadrature_v1,
    solve_semilinear_pde,
)
from .cli import RunConfig, main, parse_config, run_experiment, write_report

__version__ = "0.1.0"
