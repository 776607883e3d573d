"""Shared fixtures: the reference dynamics/sensor setup used across tests."""
from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from tracksim.prediction import GaussianBelief
from tracksim.scenario import load_scenario, scenario_path
from tracksim.sensing import SensorModel
from tracksim.world import Cuboid, GoalRegion, build_dynamics

Q_DIAG = [30.0, 30.0, 1e-10, 3.0, 3.0, 1e-10]
SIGMA0_DIAG = [200.0, 200.0, 1e-10, 20.0, 20.0, 1e-10]


@pytest.fixture(scope="session")
def model():
    """dt=1 s, 20% friction, 1300 kg ground vehicle."""
    return build_dynamics(1.0, 0.2, 1300.0, Q_DIAG)


@pytest.fixture(scope="session")
def sensor():
    return SensorModel(sigma_phi=np.deg2rad(1.0), p_detect=0.95,
                       clutter_rate=1.0)


@pytest.fixture(scope="session")
def scenario():
    """The bundled four-target scenario."""
    return load_scenario(scenario_path())


@pytest.fixture()
def belief_far():
    """A target belief far from its goal, matching the bundled scenario."""
    return GaussianBelief(mean=[281.0, 925.0, 0.0, 0.0, 0.0, 0.0],
                          cov=np.diag(SIGMA0_DIAG))


@pytest.fixture()
def goal():
    return GoalRegion(center=[500.0, 100.0, 0.0], half_extents=[60.0, 60.0])


@pytest.fixture()
def box_obstacle():
    return Cuboid.from_box([350.0, 650.0, 50.0], [80.0, 70.0, 50.0])


def short_episode(config, steps: int):
    return dataclasses.replace(
        config, episode=dataclasses.replace(config.episode, steps=steps))
