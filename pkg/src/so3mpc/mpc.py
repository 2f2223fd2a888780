"""Receding-horizon control for systems whose state lives on a manifold.

The layer is generic: any :class:`ManifoldSystem` supplies the discrete
dynamics, a metric, stage and terminal costs, a terminal set level, and a
local feedback law.  The finite-horizon problem is transcribed by single
shooting over the control sequence, with box bounds handled by projection,
the terminal-set and step-solvability constraints by a growing quadratic
penalty, and gradients by central finite differences of the rollout cost.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import Infeasible, NotSolvable, RolloutFailure

_BIG = 1e30


class ManifoldSystem(abc.ABC):
    """Contract between the receding-horizon layer and a concrete system.

    States are opaque to this layer; only the operations below touch them.
    Subclasses must set ``control_dim``.
    """

    control_dim: int = 0

    @abc.abstractmethod
    def step(self, x, u):
        """Discrete dynamics; must map the state set into itself."""

    @abc.abstractmethod
    def distance(self, x1, x2) -> float:
        """Metric used for convergence monitoring."""

    @property
    @abc.abstractmethod
    def equilibrium_state(self):
        """State fixed by the dynamics under the equilibrium control."""

    @property
    def equilibrium_control(self) -> np.ndarray:
        return np.zeros(self.control_dim)

    @abc.abstractmethod
    def stage_cost(self, x, u) -> float:
        """Running cost; zero exactly at the equilibrium pair."""

    @abc.abstractmethod
    def terminal_cost(self, x) -> float:
        """Terminal penalty; zero at the equilibrium state."""

    @property
    @abc.abstractmethod
    def terminal_level(self) -> float:
        """Level c of the terminal set {x: terminal_cost(x) <= c}."""

    def in_terminal_set(self, x, tol: float = 0.0) -> bool:
        return self.terminal_cost(x) <= self.terminal_level + tol

    @abc.abstractmethod
    def local_law(self, x) -> np.ndarray:
        """Feedback law valid on the terminal set."""

    def steering_control(self, x) -> np.ndarray:
        """Heuristic control used to build cold-start guesses; defaults to
        the equilibrium control."""
        return self.equilibrium_control

    def project_control(self, u) -> np.ndarray:
        """Exact projection onto the control set; identity by default."""
        return np.asarray(u, dtype=float)

    def control_violation(self, u) -> float:
        """Distance-to-control-set surrogate; zero inside the set."""
        return 0.0

    def in_control_set(self, u, tol: float = 0.0) -> bool:
        return self.control_violation(u) <= tol

    def state_violation(self, x) -> float:
        """State-constraint surrogate; zero means feasible (default: free)."""
        return 0.0

    def in_state_set(self, x, tol: float = 0.0) -> bool:
        return self.state_violation(x) <= tol

    def step_with_margin(self, x, u):
        """Dynamics step plus the solvability margin it consumed.

        Systems without an implicit step report an infinite margin.
        """
        return self.step(x, u), np.inf

    @property
    def step_margin_floor(self) -> float:
        """Required solvability margin inside predicted rollouts."""
        return 0.0


@dataclass(frozen=True)
class SolverSettings:
    """Tuning knobs of the penalized projected-gradient shooting solver.

    ``grad_tol`` bounds the projected-gradient norm at acceptance and
    ``ftol_rel`` stops the iteration once an accepted step improves the
    penalized objective by less than this relative amount; the defaults
    favor closed-loop throughput, where warm starts carry most of the
    optimality and the stability guarantees do not depend on solving to
    high precision.
    """

    max_iters: int = 200
    grad_tol: float = 1e-3
    ftol_rel: float = 1e-4
    fd_step: float = 1e-6
    penalty_weight: float = 1e4
    penalty_growth: float = 10.0
    outer_rounds: int = 6
    constraint_tol: float = 1e-8
    armijo_c1: float = 1e-4
    armijo_shrink: float = 0.5
    step_init: float = 1.0
    step_min: float = 1e-14
    step_max: float = 1e3

    def __post_init__(self):
        positive = {
            "max_iters": self.max_iters,
            "grad_tol": self.grad_tol,
            "ftol_rel": self.ftol_rel,
            "fd_step": self.fd_step,
            "penalty_weight": self.penalty_weight,
            "penalty_growth": self.penalty_growth,
            "outer_rounds": self.outer_rounds,
            "constraint_tol": self.constraint_tol,
            "armijo_c1": self.armijo_c1,
            "armijo_shrink": self.armijo_shrink,
            "step_init": self.step_init,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class MpcConfig:
    """Horizon length and solver settings of the receding-horizon law."""

    horizon: int = 10
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be at least 1, got {self.horizon}")


@dataclass(frozen=True)
class OcpSolution:
    """Result of one finite-horizon solve."""

    torques: np.ndarray
    cost: float
    terminal_value: float
    feasible: bool
    iterations: int
    kkt_residual: float
    violation: float
    states: tuple

    @property
    def first_control(self) -> np.ndarray:
        return self.torques[0]


class _RolloutData(NamedTuple):
    states: list
    stage: np.ndarray
    shortfalls: np.ndarray
    terminal: float


def _rollout_data(system: ManifoldSystem, x0, torques) -> _RolloutData:
    floor = system.step_margin_floor
    states = [x0]
    stage = np.empty(len(torques))
    shortfalls = np.zeros(len(torques))
    x = x0
    for i, u in enumerate(torques):
        stage[i] = system.stage_cost(x, u)
        x, margin = system.step_with_margin(x, u)
        if margin < floor:
            shortfalls[i] = floor - margin
        states.append(x)
    return _RolloutData(states, stage, shortfalls, system.terminal_cost(x))


def horizon_cost(system: ManifoldSystem, x0, torques) -> float:
    """Cost of a candidate control sequence: summed stage costs plus the
    terminal penalty at the rolled-out endpoint."""
    torques = _as_control_array(torques, system.control_dim)
    try:
        data = _rollout_data(system, x0, torques)
    except NotSolvable as err:
        raise RolloutFailure(f"prediction rollout failed: {err}") from err
    return float(data.stage.sum() + data.terminal)


def _as_control_array(torques, control_dim: int) -> np.ndarray:
    arr = np.asarray(torques, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, control_dim)
    if arr.ndim == 1:
        arr = arr.reshape(-1, control_dim)
    if arr.ndim != 2 or arr.shape[1] != control_dim:
        raise ValueError(f"controls must have shape (n, {control_dim}), got {arr.shape}")
    return arr


class _Objective:
    """Penalized shooting objective with cheap tail re-evaluation for
    finite differences."""

    def __init__(self, system: ManifoldSystem, x0, weight: float):
        self.system = system
        self.x0 = x0
        self.weight = weight
        self.level = system.terminal_level

    def full(self, torques: np.ndarray) -> float:
        try:
            data = _rollout_data(self.system, self.x0, torques)
        except NotSolvable:
            return _BIG
        return self._value(
            data.stage.sum(), (data.shortfalls**2).sum(), data.terminal
        )

    def _value(self, stage_sum: float, shortfall_sq: float, terminal: float) -> float:
        excess = max(0.0, terminal - self.level)
        return float(stage_sum + terminal + self.weight * (excess**2 + shortfall_sq))

    def details(self, torques: np.ndarray) -> tuple[float, _RolloutData, float]:
        """(penalized value, rollout data, violation)."""
        data = _rollout_data(self.system, self.x0, torques)
        value = self._value(data.stage.sum(), (data.shortfalls**2).sum(), data.terminal)
        violation = max(
            max(0.0, data.terminal - self.level),
            float(data.shortfalls.max(initial=0.0)),
        )
        return value, data, violation

    def gradient(self, torques: np.ndarray, fd_step: float) -> tuple[np.ndarray, float]:
        """Central-difference gradient, re-simulating only the rollout tail
        affected by each perturbed control entry."""
        system = self.system
        try:
            data = _rollout_data(system, self.x0, torques)
        except NotSolvable as err:
            raise RolloutFailure(f"prediction rollout failed: {err}") from err
        base_value = self._value(
            data.stage.sum(), (data.shortfalls**2).sum(), data.terminal
        )
        stage_prefix = np.concatenate([[0.0], np.cumsum(data.stage)])
        short_prefix = np.concatenate([[0.0], np.cumsum(data.shortfalls**2)])
        n, m = torques.shape
        grad = np.zeros((n, m))
        for i in range(n):
            x_i = data.states[i]
            tail = torques[i:].copy()
            base_entry = tail[0].copy()
            for j in range(m):
                values = []
                for sign in (1.0, -1.0):
                    tail[0] = base_entry
                    tail[0, j] = base_entry[j] + sign * fd_step
                    values.append(
                        self._tail_value(x_i, tail, stage_prefix[i], short_prefix[i])
                    )
                tail[0] = base_entry
                grad[i, j] = (values[0] - values[1]) / (2.0 * fd_step)
        return grad, base_value

    def _tail_value(self, x_start, tail, stage_prefix: float, short_prefix: float) -> float:
        try:
            data = _rollout_data(self.system, x_start, tail)
        except NotSolvable:
            return _BIG
        return self._value(
            stage_prefix + data.stage.sum(),
            short_prefix + (data.shortfalls**2).sum(),
            data.terminal,
        )


def _project_rows(system: ManifoldSystem, torques: np.ndarray) -> np.ndarray:
    return np.vstack([system.project_control(u) for u in torques])


def _projected_gradient(
    objective: _Objective,
    system: ManifoldSystem,
    torques: np.ndarray,
    settings: SolverSettings,
) -> tuple[np.ndarray, int, float]:
    grad, value = objective.gradient(torques, settings.fd_step)
    if value >= _BIG:
        raise RolloutFailure("shooting objective could not be evaluated at the initial guess")
    # First trial step scaled by the gradient so penalty-dominated starts do
    # not waste dozens of backtracks.
    bb_step = settings.step_init / max(1.0, float(np.linalg.norm(grad)))
    iterations = 0
    small_improvements = 0
    kkt = _kkt_residual(system, torques, grad)
    for _ in range(settings.max_iters):
        if kkt <= settings.grad_tol:
            break
        iterations += 1
        alpha = float(np.clip(bb_step, settings.step_min, settings.step_max))
        accepted = False
        for _ in range(60):
            candidate = _project_rows(system, torques - alpha * grad)
            cand_value = objective.full(candidate)
            decrease_ref = float((grad * (candidate - torques)).sum())
            if cand_value <= value + settings.armijo_c1 * decrease_ref:
                accepted = True
                break
            alpha *= settings.armijo_shrink
            if alpha < settings.step_min:
                break
        if not accepted:
            break
        improvement = value - cand_value
        new_grad, _ = objective.gradient(candidate, settings.fd_step)
        step_vec = candidate - torques
        grad_vec = new_grad - grad
        curvature = float((step_vec * grad_vec).sum())
        if curvature > 0.0:
            bb_step = float((step_vec * step_vec).sum()) / curvature
        else:
            bb_step = settings.step_init
        torques, grad, value = candidate, new_grad, cand_value
        kkt = _kkt_residual(system, torques, grad)
        # One tiny improvement can be an artifact of a backtracked step that
        # the Barzilai-Borwein step recovers from; require two in a row.
        if improvement <= settings.ftol_rel * max(1.0, abs(value)):
            small_improvements += 1
            if small_improvements >= 2:
                break
        else:
            small_improvements = 0
    return torques, iterations, kkt


def _kkt_residual(system: ManifoldSystem, torques: np.ndarray, grad: np.ndarray) -> float:
    projected = _project_rows(system, torques - grad)
    return float(np.linalg.norm(torques - projected))


def steering_rollout(system: ManifoldSystem, x0, horizon: int) -> np.ndarray:
    """Cold-start guess: roll the projected steering control forward.

    Deterministic, and inherits the branch choice of the system's chart at
    states where several descent directions tie.
    """
    x = x0
    controls = np.zeros((horizon, system.control_dim))
    for i in range(horizon):
        u = system.project_control(system.steering_control(x))
        try:
            x_next, _ = system.step_with_margin(x, u)
        except NotSolvable:
            break
        controls[i] = u
        x = x_next
    return controls


def solve_ocp(
    system: ManifoldSystem,
    x0,
    config: MpcConfig,
    warm_start: Optional[np.ndarray] = None,
) -> OcpSolution:
    """Solve the finite-horizon problem at ``x0`` by penalized shooting.

    The reported ``feasible`` flag certifies that the terminal value is
    within ``constraint_tol`` of the terminal level and that every predicted
    step kept its solvability margin; an infeasible result signals that the
    solver could not steer ``x0`` into the terminal set, i.e. that ``x0``
    is numerically outside the horizon's domain of attraction.
    """
    settings = config.solver
    if warm_start is None:
        torques = steering_rollout(system, x0, config.horizon)
    else:
        torques = _as_control_array(np.array(warm_start, dtype=float, copy=True), system.control_dim)
        if torques.shape[0] != config.horizon:
            raise ValueError(
                f"warm start has {torques.shape[0]} steps, expected {config.horizon}"
            )
    torques = _project_rows(system, torques)

    weight = settings.penalty_weight
    total_iterations = 0
    kkt = np.inf
    for round_index in range(settings.outer_rounds):
        objective = _Objective(system, x0, weight)
        torques, iterations, kkt = _projected_gradient(
            objective, system, torques, settings
        )
        total_iterations += iterations
        try:
            _, data, violation = objective.details(torques)
        except NotSolvable as err:
            raise RolloutFailure(f"prediction rollout failed: {err}") from err
        if violation <= settings.constraint_tol:
            break
        weight *= settings.penalty_growth

    cost = float(data.stage.sum() + data.terminal)
    return OcpSolution(
        torques=torques,
        cost=cost,
        terminal_value=float(data.terminal),
        feasible=bool(violation <= settings.constraint_tol),
        iterations=total_iterations,
        kkt_residual=float(kkt),
        violation=float(violation),
        states=tuple(data.states),
    )


def warm_start_shift(previous: OcpSolution, system: ManifoldSystem) -> np.ndarray:
    """Shift the previous solution one step and append the local law applied
    at its predicted terminal state.

    By construction the result is feasible at the successor state whenever
    the previous solution was feasible, which is what makes the closed loop
    recursively feasible.
    """
    terminal_state = previous.states[-1]
    tail = system.project_control(system.local_law(terminal_state))
    return np.vstack([previous.torques[1:], tail[None, :]])


class MpcController:
    """Stateful receding-horizon driver: carries the shifted warm start
    from one solve to the next.  Use one instance per closed-loop run."""

    def __init__(self, system: ManifoldSystem, config: MpcConfig):
        self.system = system
        self.config = config
        self._previous: Optional[OcpSolution] = None

    def reset(self) -> None:
        self._previous = None

    def candidate_sequence(self) -> Optional[np.ndarray]:
        """Shifted candidate from the previous solve, if one exists."""
        if self._previous is None or not self._previous.feasible:
            return None
        return warm_start_shift(self._previous, self.system)

    def step(self, x) -> tuple[np.ndarray, OcpSolution]:
        """Solve at ``x`` and return the first control of the solution.

        Raises :class:`~so3mpc.errors.Infeasible` when the solver cannot
        reach feasibility at ``x``.
        """
        warm = self.candidate_sequence()
        solution = solve_ocp(self.system, x, self.config, warm_start=warm)
        if not solution.feasible:
            raise Infeasible(
                f"finite-horizon problem infeasible (violation {solution.violation:.3e})"
            )
        self._previous = solution
        return solution.first_control, solution


@dataclass
class ClosedLoopRun:
    """Trajectory and per-step diagnostics of a closed-loop simulation."""

    states: list
    controls: np.ndarray
    optimal_costs: np.ndarray
    candidate_costs: np.ndarray
    stage_costs: np.ndarray
    terminal_values: np.ndarray
    violations: np.ndarray
    iterations: np.ndarray
    kkt_residuals: np.ndarray
    distances: np.ndarray
    converged: bool
    converged_step: Optional[int]

    @property
    def n_steps(self) -> int:
        return len(self.controls)


def closed_loop(
    system: ManifoldSystem,
    x0,
    config: MpcConfig,
    n_steps: int,
    distance_tol: float = 1e-2,
    stop_when_converged: bool = False,
) -> ClosedLoopRun:
    """Run the receding-horizon law for ``n_steps`` steps from ``x0``.

    Each record holds, per step, the optimal cost, the cost of the shifted
    candidate evaluated at the current state (the recursive-feasibility
    witness; NaN at the first step where no candidate exists yet), the stage
    cost actually paid, and solver diagnostics.

    Raises :class:`~so3mpc.errors.Infeasible` with the failing step index
    if any solve fails.
    """
    controller = MpcController(system, config)
    x = x0
    states = [x0]
    controls = []
    optimal_costs = []
    candidate_costs = []
    stage_costs = []
    terminal_values = []
    violations = []
    iterations = []
    kkts = []
    distances = [system.distance(x0, system.equilibrium_state)]
    converged_step = None

    for k in range(n_steps):
        candidate = controller.candidate_sequence()
        if candidate is None:
            candidate_costs.append(np.nan)
        else:
            candidate_costs.append(horizon_cost(system, x, candidate))
        try:
            u, solution = controller.step(x)
        except Infeasible as err:
            raise Infeasible(f"closed loop infeasible at step {k}: {err}", step=k) from err
        stage_costs.append(system.stage_cost(x, u))
        x = system.step(x, u)
        states.append(x)
        controls.append(u)
        optimal_costs.append(solution.cost)
        terminal_values.append(solution.terminal_value)
        violations.append(solution.violation)
        iterations.append(solution.iterations)
        kkts.append(solution.kkt_residual)
        distance = system.distance(x, system.equilibrium_state)
        distances.append(distance)
        if converged_step is None and distance < distance_tol:
            converged_step = k + 1
        if stop_when_converged and converged_step is not None:
            break

    return ClosedLoopRun(
        states=states,
        controls=np.asarray(controls, dtype=float),
        optimal_costs=np.asarray(optimal_costs, dtype=float),
        candidate_costs=np.asarray(candidate_costs, dtype=float),
        stage_costs=np.asarray(stage_costs, dtype=float),
        terminal_values=np.asarray(terminal_values, dtype=float),
        violations=np.asarray(violations, dtype=float),
        iterations=np.asarray(iterations, dtype=int),
        kkt_residuals=np.asarray(kkts, dtype=float),
        distances=np.asarray(distances, dtype=float),
        converged=converged_step is not None,
        converged_step=converged_step,
    )
