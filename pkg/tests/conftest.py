import numpy as np
import pytest

from dragfly import Box, DroneState, Environment, SensorConfig


@pytest.fixture
def arena() -> Environment:
    """10x10x3 m arena with a single wall slab at x in [2.0, 2.4]."""
    return Environment(
        bounds=Box([-5, -5, 0], [5, 5, 3]),
        obstacles=(Box([2.0, -2.0, 0.0], [2.4, 2.0, 2.0]),),
    )


@pytest.fixture
def empty_arena() -> Environment:
    return Environment(bounds=Box([-5, -5, 0], [6, 5, 3]))


@pytest.fixture
def hover() -> DroneState:
    return DroneState(p=[0.0, 0.0, 0.8], v=[0.0, 0.0, 0.0], yaw=0.0)


@pytest.fixture
def sensor() -> SensorConfig:
    return SensorConfig()


def seeded(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
