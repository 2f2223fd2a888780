"""Terminal cost, local feedback law, and terminal-set calibration.

The pipeline linearizes the attitude dynamics in exponential coordinates,
turns the trace-form stage cost into a quadratic form through the tilde
transform, solves a discrete-time algebraic Riccati equation for the
terminal weight, extracts the feedback gain, and then calibrates the
largest ellipsoid level on which the resulting local law provably (by
dense sampling) keeps the nonlinear closed loop inside the set while
decreasing the terminal cost by at least the stage cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    NoConvergence,
    NoFeasibleLevel,
    NotPositiveDefinite,
    NotSolvable,
    NotStabilizable,
    OutOfChart,
)
from .lgvi import SpacecraftState, lgvi_step
from .so3 import exp_so3, hat, log_so3
from .validation import check_spd

_EYE3 = np.eye(3)


@dataclass(frozen=True)
class StageWeights:
    """Weights of the running cost: attitude, rate, torque, and the decay
    factor splitting the stage cost from the terminal design."""

    attitude: np.ndarray
    rate: np.ndarray
    torque: np.ndarray
    decay: float

    def __post_init__(self):
        object.__setattr__(self, "attitude", check_spd(self.attitude, "attitude weight"))
        object.__setattr__(self, "rate", check_spd(self.rate, "rate weight"))
        object.__setattr__(self, "torque", check_spd(self.torque, "torque weight"))
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")


def default_weights(inertia) -> StageWeights:
    """Identity attitude weight, inertia-matched rate weight, 2I torque weight."""
    return StageWeights(np.eye(3), np.asarray(inertia, dtype=float), 2.0 * np.eye(3), 0.1)


class Linearization(NamedTuple):
    """Discrete-time (A, B) pair used for the terminal design."""

    A: np.ndarray
    B: np.ndarray


class QuadraticCostData(NamedTuple):
    """Quadratic-form data (state block, cross block, control block) fed to
    the Riccati equation."""

    Q: np.ndarray
    N_cross: np.ndarray
    R_dare: np.ndarray


class Certification(NamedTuple):
    """Sampling certificate attached to a calibrated terminal level."""

    n_samples: int
    max_violation: float


def tilde_transform(q) -> np.ndarray:
    """Map a symmetric matrix Q to trace(Q) I - Q.

    Converts trace-form rotation costs into quadratic forms on rotation
    vectors.  Each output eigenvalue is the sum of the complementary input
    eigenvalues, so positive-definite inputs stay positive-definite.
    """
    q = np.asarray(q, dtype=float)
    if np.linalg.norm(q - q.T) > 1e-12 * max(1.0, np.linalg.norm(q)):
        raise ValueError("tilde_transform requires a symmetric matrix")
    return np.trace(q) * np.eye(q.shape[0]) - q


def skew_trace_identity_check(a, b, r) -> float:
    """Gap |trace(hat(a)^T R hat(b)) - a^T (trace(R) I - R) b|.

    The identity underlies the quadratic expansion of the trace-form cost;
    this helper exists so tests and diagnostics can confirm it numerically.
    """
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    r = np.asarray(r, dtype=float)
    lhs = float(np.trace(hat(a).T @ r @ hat(b)))
    rhs = float(a @ (np.trace(r) * _EYE3 - r) @ b)
    return abs(lhs - rhs)


def build_linearization(h: float, inertia=None) -> Linearization:
    """Double-integrator structure of the attitude dynamics in exponential
    coordinates: rotation vector integrates the rate, rate integrates the
    torque.

    With ``inertia`` given, the control enters the rate row through the
    inverse of trace(J) I - J, which is the exact Jacobian of the implicit
    integrator step about the equilibrium; this is required for the terminal
    decrease condition to hold on the nonlinear dynamics.  Without it the
    rate row uses the identity coupling h I.
    """
    if h <= 0.0:
        raise ValueError(f"step must be positive, got {h}")
    a = np.block([[_EYE3, h * _EYE3], [np.zeros((3, 3)), _EYE3]])
    if inertia is None:
        coupling = _EYE3
    else:
        coupling = np.linalg.inv(tilde_transform(np.asarray(inertia, dtype=float)))
    b = np.vstack([np.zeros((3, 3)), h * coupling])
    return Linearization(a, b)


def build_cost_data(weights: StageWeights) -> QuadraticCostData:
    """Quadratic cost blocks for the Riccati design, scaled by 1/decay.

    The attitude and rate blocks are the tilde transforms of the trace-form
    weights; there is no state-control cross term.
    """
    q_att = tilde_transform(weights.attitude)
    q_rate = tilde_transform(weights.rate)
    r_t = tilde_transform(weights.torque)
    scale = 1.0 / weights.decay
    q = scale * np.block(
        [[q_att, np.zeros((3, 3))], [np.zeros((3, 3)), q_rate]]
    )
    r = scale * r_t
    try:
        check_spd(q, "state cost block")
        check_spd(r, "control cost block")
    except NotPositiveDefinite as err:
        raise NotPositiveDefinite(
            f"tilde transform lost positive-definiteness: {err}"
        ) from err
    return QuadraticCostData(q, np.zeros((6, 3)), r)


def _controllable(a: np.ndarray, b: np.ndarray) -> bool:
    n = a.shape[0]
    blocks = [b]
    for _ in range(n - 1):
        blocks.append(a @ blocks[-1])
    return np.linalg.matrix_rank(np.hstack(blocks)) == n


def dare_residual(p, lin: Linearization, cost: QuadraticCostData) -> float:
    """Frobenius norm of the fixed-point defect of the Riccati equation."""
    a, b = lin
    q, ncross, r = cost
    apb = a.T @ p @ b + ncross
    defect = a.T @ p @ a - p + q - apb @ np.linalg.solve(b.T @ p @ b + r, apb.T)
    return float(np.linalg.norm(defect))


def solve_dare(
    lin: Linearization,
    cost: QuadraticCostData,
    tol: float = 1e-12,
    max_iters: int = 1_000_000,
    residual_tol: float = 1e-8,
) -> np.ndarray:
    """Stabilizing solution of the discrete-time algebraic Riccati equation.

    Iterates the Riccati difference equation from P = Q until successive
    iterates agree to ``tol`` in the Frobenius norm, then checks the residual.

    Raises:
        NotStabilizable: if the controllability matrix of (A, B) is rank
            deficient.
        NoConvergence: if the iteration stalls or the residual check fails.
    """
    a, b = lin
    q, ncross, r = cost
    if not _controllable(a, b):
        raise NotStabilizable("(A, B) has a rank-deficient controllability matrix")
    p = np.asarray(q, dtype=float).copy()
    converged = False
    for _ in range(max_iters):
        apb = a.T @ p @ b + ncross
        p_next = a.T @ p @ a + q - apb @ np.linalg.solve(b.T @ p @ b + r, apb.T)
        p_next = 0.5 * (p_next + p_next.T)
        gap = float(np.linalg.norm(p_next - p))
        p = p_next
        if gap < tol:
            converged = True
            break
    if not converged:
        raise NoConvergence(f"Riccati iteration did not converge within {max_iters} steps")
    residual = dare_residual(p, lin, cost)
    if residual > residual_tol:
        raise NoConvergence(f"Riccati residual {residual:.3e} exceeds {residual_tol:.1e}")
    return p


def lqr_gain(p, lin: Linearization, cost: QuadraticCostData) -> np.ndarray:
    """Feedback gain K of the law u = -K x associated with the Riccati
    solution, computed as (B^T P B + R)^{-1} (A^T P B + N)^T."""
    a, b = lin
    _, ncross, r = cost
    inner = b.T @ p @ b + r
    try:
        check_spd(inner, "gain inner matrix")
    except NotPositiveDefinite as err:
        raise NotPositiveDefinite(f"gain inner matrix is singular: {err}") from err
    return np.linalg.solve(inner, (a.T @ p @ b + ncross).T)


def coordinates(state: SpacecraftState, h: float, cut_sign: float = 1.0) -> np.ndarray:
    """Chart coordinates (rotation vector of g, rotation vector of f over h)."""
    zeta = log_so3(state.g, cut_sign=cut_sign)
    omega = log_so3(state.f, cut_sign=cut_sign) / h
    return np.concatenate([zeta, omega])


def stage_cost_matrices(weights: StageWeights):
    """Precomputed pieces of the trace-form stage cost evaluation."""
    return (
        np.asarray(weights.attitude, dtype=float),
        np.asarray(weights.rate, dtype=float),
        tilde_transform(weights.torque),
    )


def attitude_stage_cost(state: SpacecraftState, torque, weights: StageWeights, h: float) -> float:
    """Trace-form running cost of one step: attitude error, rate error at
    scale 1/h^2, and the quadratic torque effort."""
    q_att, q_rate, torque_tilde = stage_cost_matrices(weights)
    torque = np.asarray(torque, dtype=float).reshape(3)
    g_term = np.trace(q_att) - float((q_att * state.g.T).sum())
    f_term = (np.trace(q_rate) - float((q_rate * state.f.T).sum())) / (h * h)
    u_term = 0.5 * float(torque @ torque_tilde @ torque)
    return g_term + f_term + u_term


@dataclass(frozen=True)
class TerminalDesign:
    """Everything the terminal cost, terminal set, and local law need."""

    h: float
    inertia: np.ndarray
    weights: StageWeights
    P: np.ndarray
    K: np.ndarray
    c: float
    certification: Certification

    def terminal_cost(self, state: SpacecraftState, cut_sign: float = 1.0) -> float:
        xi = coordinates(state, self.h, cut_sign=cut_sign)
        return float(xi @ self.P @ xi)

    def local_law(self, state: SpacecraftState, cut_sign: float = 1.0) -> np.ndarray:
        xi = coordinates(state, self.h, cut_sign=cut_sign)
        if np.linalg.norm(xi[:3]) >= np.pi or self.h * np.linalg.norm(xi[3:]) >= np.pi:
            raise OutOfChart("state lies outside the coordinate chart of the local law")
        return -(self.K @ xi)

    def to_json_dict(self) -> dict:
        return {
            "h": self.h,
            "J": self.inertia.tolist(),
            "Q_g": self.weights.attitude.tolist(),
            "Q_f": self.weights.rate.tolist(),
            "R": self.weights.torque.tolist(),
            "lambda": self.weights.decay,
            "P": [float(x) for x in self.P.reshape(36)],
            "K": [float(x) for x in self.K.reshape(18)],
            "c": self.c,
            "certification": {
                "n_samples": self.certification.n_samples,
                "max_violation": self.certification.max_violation,
            },
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TerminalDesign":
        weights = StageWeights(
            np.asarray(data["Q_g"], dtype=float),
            np.asarray(data["Q_f"], dtype=float),
            np.asarray(data["R"], dtype=float),
            float(data["lambda"]),
        )
        cert = Certification(
            int(data["certification"]["n_samples"]),
            float(data["certification"]["max_violation"]),
        )
        return cls(
            h=float(data["h"]),
            inertia=np.asarray(data["J"], dtype=float),
            weights=weights,
            P=np.asarray(data["P"], dtype=float).reshape(6, 6),
            K=np.asarray(data["K"], dtype=float).reshape(3, 6),
            c=float(data["c"]),
            certification=cert,
        )

    def save(self, path) -> None:
        with open(path, "w") as handle:
            json.dump(self.to_json_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")

    @classmethod
    def load(cls, path) -> "TerminalDesign":
        with open(path) as handle:
            return cls.from_json_dict(json.load(handle))


def _ellipsoid_samples(p: np.ndarray, n_samples: int, rng: np.random.Generator):
    """Unit-level samples: directions on the ellipsoid {x^T P x = 1}, half of
    them pulled inside with volume-uniform radii.  Scaling by sqrt(c) turns
    them into samples of the level-c set."""
    evals, evecs = np.linalg.eigh(p)
    p_inv_half = (evecs / np.sqrt(evals)) @ evecs.T
    directions = rng.standard_normal((n_samples, 6))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    radii = np.ones(n_samples)
    interior = n_samples // 2
    radii[:interior] = rng.uniform(0.0, 1.0, interior) ** (1.0 / 6.0)
    return (radii[:, None] * directions) @ p_inv_half.T


def evaluate_level(
    design_p: np.ndarray,
    design_k: np.ndarray,
    weights: StageWeights,
    h: float,
    inertia,
    torque_bound: float,
    level: float,
    unit_samples: np.ndarray,
    decrease_slack: float = 1e-10,
) -> dict:
    """Worst margins of the three local-law conditions over scaled samples.

    Returns a dict with the worst torque-bound excess, the worst terminal
    excess of the successor, and the worst decrease defect
    F(x+) - F(x) + L(x, u).  All are violations: negative or tiny values mean
    the condition holds.
    """
    inertia = np.asarray(inertia, dtype=float)
    scale = np.sqrt(level)
    worst_torque = -np.inf
    worst_invariance = -np.inf
    worst_decrease = -np.inf
    for xi in scale * unit_samples:
        state = SpacecraftState(exp_so3(xi[:3]), exp_so3(h * xi[3:]))
        coords = coordinates(state, h)
        torque = -(design_k @ coords)
        value = float(coords @ design_p @ coords)
        try:
            successor = lgvi_step(state, torque, h, inertia)
        except NotSolvable:
            # The level reaches spin rates the integrator cannot step; treat
            # as a hard violation of the invariance condition.
            worst_invariance = np.inf
            break
        succ_coords = coordinates(successor, h)
        succ_value = float(succ_coords @ design_p @ succ_coords)
        stage = attitude_stage_cost(state, torque, weights, h)
        worst_torque = max(worst_torque, float(np.max(np.abs(torque))) - torque_bound)
        worst_invariance = max(worst_invariance, succ_value - level)
        worst_decrease = max(worst_decrease, succ_value - value + stage)
    return {
        "torque": worst_torque,
        "invariance": worst_invariance,
        "decrease": worst_decrease,
        "passed": (
            worst_torque <= 0.0
            and worst_invariance <= 0.0
            and worst_decrease <= decrease_slack
        ),
    }


def calibrate_level(
    design_p: np.ndarray,
    design_k: np.ndarray,
    weights: StageWeights,
    h: float,
    inertia,
    torque_bound: float,
    n_samples: int = 1000,
    shrink: float = 0.9,
    seed: int = 0,
    grid_points: int = 48,
    level_floor: float = 1e-8,
    decrease_slack: float = 1e-10,
) -> tuple[float, Certification]:
    """Largest certified level of the terminal ellipsoid.

    Bisects a logarithmic grid between ``level_floor`` and the largest level
    that stays inside the coordinate chart, certifying each candidate on the
    same pre-drawn sample directions, then applies the safety ``shrink`` and
    re-certifies at the returned level.

    Raises :class:`~so3mpc.errors.NoFeasibleLevel` when even the smallest
    grid level fails.
    """
    rng = np.random.default_rng(seed)
    unit_samples = _ellipsoid_samples(design_p, n_samples, rng)
    lam_min = float(np.linalg.eigvalsh(design_p)[0])
    chart_radius = min(np.pi, np.pi / h) * (1.0 - 1e-9)
    level_ceiling = lam_min * chart_radius**2
    grid = np.geomspace(level_floor, level_ceiling, grid_points)

    def passes(level: float) -> bool:
        report = evaluate_level(
            design_p, design_k, weights, h, inertia, torque_bound,
            level, unit_samples, decrease_slack,
        )
        return report["passed"]

    if not passes(grid[0]):
        raise NoFeasibleLevel(
            f"no terminal level down to {level_floor:.1e} passes certification"
        )
    lo, hi = 0, len(grid) - 1
    if passes(grid[hi]):
        lo = hi
    else:
        # Largest passing index, assuming violations grow with the level.
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if passes(grid[mid]):
                lo = mid
            else:
                hi = mid
    level = float(grid[lo] * shrink)
    final = evaluate_level(
        design_p, design_k, weights, h, inertia, torque_bound,
        level, unit_samples, decrease_slack,
    )
    if not final["passed"]:
        raise NoFeasibleLevel("shrunken level failed re-certification")
    max_violation = max(final["torque"], final["invariance"], final["decrease"])
    return level, Certification(n_samples, float(max_violation))


def design_terminal(
    inertia,
    h: float,
    weights: StageWeights,
    torque_bound: float = 100.0,
    n_samples: int = 1000,
    shrink: float = 0.9,
    seed: int = 0,
    grid_points: int = 48,
    level_floor: float = 1e-8,
    decrease_slack: float = 1e-10,
) -> TerminalDesign:
    """Run the full terminal design pipeline and return the result."""
    inertia = check_spd(inertia, "inertia")
    lin = build_linearization(h, inertia)
    cost = build_cost_data(weights)
    p = solve_dare(lin, cost)
    k = lqr_gain(p, lin, cost)
    level, certification = calibrate_level(
        p, k, weights, h, inertia, torque_bound,
        n_samples=n_samples, shrink=shrink, seed=seed,
        grid_points=grid_points, level_floor=level_floor,
        decrease_slack=decrease_slack,
    )
    return TerminalDesign(
        h=float(h), inertia=inertia, weights=weights,
        P=p, K=k, c=level, certification=certification,
    )
