"""Flat-space double integrator used to validate the generic layer.

The system is linear-quadratic, so the receding-horizon solution with the
Riccati terminal cost has a known closed form: the optimal value equals
``x0 @ P @ x0`` and the first control equals ``-K @ x0`` whenever no
constraint is active.  Running it through the same shooting solver as the
attitude problem checks the generic layer against that classical answer.
"""

from __future__ import annotations

import numpy as np

from .mpc import ManifoldSystem
from .terminal import Linearization, QuadraticCostData, lqr_gain, solve_dare


class DoubleIntegratorSystem(ManifoldSystem):
    """Scalar position and velocity driven by a force input."""

    control_dim = 1

    def __init__(
        self,
        h: float = 0.1,
        position_weight: float = 1.0,
        velocity_weight: float = 0.5,
        control_weight: float = 0.1,
        terminal_level: float = 1e6,
        control_bound: float = np.inf,
    ):
        self.h = float(h)
        self.A = np.array([[1.0, self.h], [0.0, 1.0]])
        self.B = np.array([[0.0], [self.h]])
        self.Q = np.diag([float(position_weight), float(velocity_weight)])
        self.R = np.array([[float(control_weight)]])
        lin = Linearization(self.A, self.B)
        cost = QuadraticCostData(self.Q, np.zeros((2, 1)), self.R)
        self.P = solve_dare(lin, cost)
        self.K = lqr_gain(self.P, lin, cost)
        self._terminal_level = float(terminal_level)
        self.control_bound = float(control_bound)

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float).reshape(1)
        return self.A @ x + self.B @ u

    def distance(self, x1, x2) -> float:
        return float(np.linalg.norm(np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)))

    @property
    def equilibrium_state(self) -> np.ndarray:
        return np.zeros(2)

    def stage_cost(self, x, u) -> float:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float).reshape(1)
        return float(x @ self.Q @ x + u @ self.R @ u)

    def terminal_cost(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.P @ x)

    @property
    def terminal_level(self) -> float:
        return self._terminal_level

    def local_law(self, x) -> np.ndarray:
        return -(self.K @ np.asarray(x, dtype=float))

    def steering_control(self, x) -> np.ndarray:
        return self.local_law(x)

    def project_control(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if not np.isfinite(self.control_bound):
            return u
        return np.clip(u, -self.control_bound, self.control_bound)

    def control_violation(self, u) -> float:
        if not np.isfinite(self.control_bound):
            return 0.0
        return max(0.0, float(np.max(np.abs(u))) - self.control_bound)

    def lqr_control(self, x) -> np.ndarray:
        """Classical infinite-horizon feedback, for use as a test oracle."""
        return self.local_law(x)

    def lqr_value(self, x) -> float:
        """Classical infinite-horizon cost, for use as a test oracle."""
        return self.terminal_cost(x)

    def with_terminal_level(self, level: float) -> "DoubleIntegratorSystem":
        return DoubleIntegratorSystem(
            h=self.h,
            position_weight=self.Q[0, 0],
            velocity_weight=self.Q[1, 1],
            control_weight=self.R[0, 0],
            terminal_level=level,
            control_bound=self.control_bound,
        )
