import numpy as np
import pytest

from lanefree.dynamics import StateBounds, VehicleParams
from lanefree.geometry import IntersectionLayout, Pose
from lanefree.scenario import CavSpec, Scenario


def make_cav(cav_id, start, v0, goal, bounds=None):
    return CavSpec(cav_id=cav_id, params=VehicleParams(),
                   start=Pose(*start), v0=v0, goal=Pose(*goal),
                   bounds=bounds or StateBounds())


@pytest.fixture
def straight_scenario():
    """One vehicle, 70 m straight crossing at the paper's limits."""
    return Scenario(
        layout=IntersectionLayout(lane_width=5.0, arm_length=35.0),
        cavs=(make_cav("e0", (-35.0, -2.5, 0.0), 10.0, (35.0, -2.5, 0.0)),),
    )


@pytest.fixture
def crossing_scenario():
    """Two vehicles with genuinely conflicting straight paths."""
    return Scenario(
        layout=IntersectionLayout(lane_width=5.0, arm_length=35.0),
        cavs=(
            make_cav("e0", (-30.0, -2.5, 0.0), 10.0, (30.0, -2.5, 0.0)),
            make_cav("n0", (2.5, -30.0, np.pi / 2), 10.0,
                     (2.5, 30.0, np.pi / 2)),
        ),
    )
