"""tracksim: bearings-only multi-target monitoring simulator.

Ground targets are guided to goal regions by a receding-horizon controller
that avoids cuboid obstacles; a single mobile sensor collects cluttered
bearing measurements, tracks each target with a particle filter, and moves
to minimize the summed posterior covariance trace.
"""

__version__ = "0.1.0"

from .prediction import GaussianBelief, one_step_predict, rollout_cov, \
    rollout_mean
from .scenario import ScenarioConfig, load_scenario
from .world import Cuboid, DynamicsModel, GoalRegion, build_dynamics

__all__ = [
    "GaussianBelief", "one_step_predict", "rollout_cov", "rollout_mean",
    "ScenarioConfig", "load_scenario",
    "Cuboid", "DynamicsModel", "GoalRegion", "build_dynamics",
    "__version__",
]
