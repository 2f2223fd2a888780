"""Geometric receding-horizon control of spacecraft attitude on SO(3).

The package couples a structure-preserving variational integrator on the
rotation group with a receding-horizon controller whose terminal cost,
terminal set, and local law come from a Riccati design in exponential
coordinates.  The control law is globally stabilizing and necessarily
discontinuous at the 180-degree branch cut, which the experiment suite
demonstrates executably.
"""

from .attitude import (
    AttitudeMpc,
    SpacecraftAttitudeSystem,
    rest_state,
    spinning_state,
)
from .errors import (
    ConfigError,
    DegenerateMatrix,
    Infeasible,
    NoConvergence,
    NoFeasibleLevel,
    NotPositiveDefinite,
    NotRotation,
    NotSkewSymmetric,
    NotSolvable,
    NotStabilizable,
    OutOfChart,
    RolloutFailure,
    So3MpcError,
)
from .experiments import (
    ExperimentReport,
    audit_lyapunov,
    certify_local_law,
    probe_discontinuity,
    verify_conservation,
)
from .flat import DoubleIntegratorSystem
from .lgvi import (
    DEFAULT_INERTIA,
    DEFAULT_STEP_SECONDS,
    SpacecraftState,
    Solvability,
    check_solvability,
    lgvi_step,
    momentum_matrix,
    riccati_residual,
    rollout,
    solve_step_riccati,
    spatial_momentum,
    step_with_margin,
)
from .mpc import (
    ClosedLoopRun,
    ManifoldSystem,
    MpcConfig,
    MpcController,
    OcpSolution,
    SolverSettings,
    closed_loop,
    horizon_cost,
    solve_ocp,
    warm_start_shift,
)
from .so3 import exp_so3, geodesic_distance, hat, log_so3, project_so3, vee
from .terminal import (
    Certification,
    Linearization,
    QuadraticCostData,
    StageWeights,
    TerminalDesign,
    build_cost_data,
    build_linearization,
    calibrate_level,
    default_weights,
    design_terminal,
    lqr_gain,
    skew_trace_identity_check,
    solve_dare,
    tilde_transform,
)

__version__ = "0.1.0"

__all__ = [
    "AttitudeMpc",
    "Certification",
    "ClosedLoopRun",
    "ConfigError",
    "DEFAULT_INERTIA",
    "DEFAULT_STEP_SECONDS",
    "DegenerateMatrix",
    "DoubleIntegratorSystem",
    "ExperimentReport",
    "Infeasible",
    "Linearization",
    "ManifoldSystem",
    "MpcConfig",
    "MpcController",
    "NoConvergence",
    "NoFeasibleLevel",
    "NotPositiveDefinite",
    "NotRotation",
    "NotSkewSymmetric",
    "NotSolvable",
    "NotStabilizable",
    "OcpSolution",
    "OutOfChart",
    "QuadraticCostData",
    "RolloutFailure",
    "So3MpcError",
    "Solvability",
    "SolverSettings",
    "SpacecraftAttitudeSystem",
    "SpacecraftState",
    "StageWeights",
    "TerminalDesign",
    "audit_lyapunov",
    "build_cost_data",
    "build_linearization",
    "calibrate_level",
    "certify_local_law",
    "check_solvability",
    "closed_loop",
    "default_weights",
    "design_terminal",
    "exp_so3",
    "geodesic_distance",
    "hat",
    "horizon_cost",
    "lgvi_step",
    "log_so3",
    "lqr_gain",
    "momentum_matrix",
    "probe_discontinuity",
    "project_so3",
    "rest_state",
    "riccati_residual",
    "rollout",
    "skew_trace_identity_check",
    "solve_dare",
    "solve_ocp",
    "solve_step_riccati",
    "spatial_momentum",
    "spinning_state",
    "step_with_margin",
    "tilde_transform",
    "vee",
    "verify_conservation",
    "warm_start_shift",
]
