import numpy as np
import pytest

from so3mpc.attitude import SpacecraftAttitudeSystem
from so3mpc.terminal import default_weights, design_terminal

J_REF = np.diag([1.0, 1.2, 1.5])
H_REF = 0.1
TORQUE_BOUND_REF = 100.0


@pytest.fixture(scope="session")
def ref_weights():
    return default_weights(J_REF)


@pytest.fixture(scope="session")
def ref_design(ref_weights):
    """Terminal design for the reference configuration; computed once."""
    return design_terminal(
        J_REF, H_REF, ref_weights, torque_bound=TORQUE_BOUND_REF, seed=0
    )


@pytest.fixture(scope="session")
def ref_system(ref_design):
    return SpacecraftAttitudeSystem(ref_design, torque_bound=TORQUE_BOUND_REF)
