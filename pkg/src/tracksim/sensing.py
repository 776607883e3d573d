"""Bearing generation: noisy detections, missed detections, Poisson clutter.

Bearings use the four-quadrant arctangent of (dx, dy) — note the x-over-y
argument order, so due +x is pi/2 and due +y is 0 — wrapped to (-pi, pi].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


class DegenerateGeometryError(ValueError):
    """Target and sensor planar positions coincide; bearing undefined."""


@dataclass(frozen=True)
class SensorModel:
    sigma_phi: float       # rad, bearing noise std
    p_detect: float
    clutter_rate: float    # expected clutter count per step

    def __post_init__(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError(f"p_detect must be in [0, 1], got {self.p_detect}")
        if self.sigma_phi <= 0:
            raise ValueError(f"sigma_phi must be > 0, got {self.sigma_phi}")
        if self.clutter_rate < 0:
            raise ValueError(f"clutter_rate must be >= 0, got {self.clutter_rate}")

    @property
    def clutter_density(self) -> float:
        # uniform over (-pi, pi]
        return 1.0 / TWO_PI


@dataclass(frozen=True)
class MeasurementSet:
    """Unordered bearings for one target channel at one step.

    `is_clutter` is ground truth kept for analysis logs only; the filter
    never sees it.
    """

    bearings: np.ndarray
    is_clutter: np.ndarray

    def __len__(self) -> int:
        return self.bearings.shape[0]


def wrap_angle(a):
    """Wrap to (-pi, pi]; works on scalars and arrays."""
    return np.pi - (np.pi - np.asarray(a)) % TWO_PI


def true_bearing(target_pos, agent_pos) -> float:
    d = np.asarray(target_pos, float)[:2] - np.asarray(agent_pos, float)[:2]
    if np.hypot(d[0], d[1]) < 1e-12:
        raise DegenerateGeometryError(
            f"coincident planar positions near {np.asarray(agent_pos)[:2]}")
    return float(wrap_angle(np.arctan2(d[0], d[1])))


def bearings_to(positions: np.ndarray, agent_pos) -> np.ndarray:
    """Vectorized true_bearing for an (N, >=2) stack of positions."""
    d = np.atleast_2d(positions)[:, :2] - np.asarray(agent_pos, float)[:2]
    return wrap_angle(np.arctan2(d[:, 0], d[:, 1]))


def generate_measurements(target_state: np.ndarray, agent_pos,
                          model: SensorModel,
                          rng: np.random.Generator) -> MeasurementSet:
    """Detection with probability p_detect plus Poisson-count uniform clutter."""
    bearings = []
    clutter_flags = []
    if rng.random() < model.p_detect:
        phi = true_bearing(target_state[:3], agent_pos) \
            + rng.normal(0.0, model.sigma_phi)
        bearings.append(float(wrap_angle(phi)))
        clutter_flags.append(False)
    n_clutter = rng.poisson(model.clutter_rate)
    for _ in range(n_clutter):
        bearings.append(float(wrap_angle(rng.uniform(-np.pi, np.pi))))
        clutter_flags.append(True)
    order = rng.permutation(len(bearings))
    b = np.asarray(bearings, float)[order] if bearings else np.zeros(0)
    c = np.asarray(clutter_flags, bool)[order] if bearings else np.zeros(0, bool)
    return MeasurementSet(bearings=b, is_clutter=c)
