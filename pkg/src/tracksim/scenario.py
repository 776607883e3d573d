"""Scenario file loading and validation.

Scenario files are YAML with sections environment / dynamics / targets /
obstacles / sensor / agent / planner / filter / episode (and an optional
baseline section with fixed sensor positions). All units SI; angle keys may
use a `_deg` suffix instead of radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .controller import AgentMotionModel
from .filtering import FilterParams
from .guidance import PlannerParams
from .sensing import SensorModel
from .world import Cuboid, DynamicsModel, GoalRegion, ValidationError, \
    build_dynamics, contains


class ScenarioParseError(ValueError):
    """The document is not parseable / not a mapping."""


@dataclass(frozen=True)
class TargetSpec:
    mu0: np.ndarray            # (6,)
    sigma0: np.ndarray         # (6, 6)
    goal: GoalRegion


@dataclass(frozen=True)
class EpisodeParams:
    steps: int = 120
    seed: int = 0


DEFAULT_BASELINE_SENSORS = ((150.0, 200.0), (800.0, 200.0), (500.0, 900.0))


@dataclass(frozen=True)
class ScenarioConfig:
    env_min: np.ndarray
    env_max: np.ndarray
    dynamics: DynamicsModel
    targets: tuple[TargetSpec, ...]
    obstacles: tuple[Cuboid, ...]
    sensor: SensorModel
    agent: AgentMotionModel
    agent_init: np.ndarray     # (3,)
    planner: PlannerParams
    filter: FilterParams
    episode: EpisodeParams
    baseline_sensors: tuple = DEFAULT_BASELINE_SENSORS
    trace_position_only: bool = False


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ValidationError(f"{where}.{key}", "missing required key")
    return section[key]


def _angle(section: dict, key: str, where: str, default=None) -> float:
    if key in section and f"{key}_deg" in section:
        raise ValidationError(f"{where}.{key}", "give radians or _deg, not both")
    if f"{key}_deg" in section:
        return math.radians(float(section[f"{key}_deg"]))
    if key in section:
        return float(section[key])
    if default is not None:
        return default
    raise ValidationError(f"{where}.{key}", "missing required key")


def _diag_or_full(value, name: str) -> np.ndarray:
    arr = np.asarray(value, float)
    if arr.ndim == 1:
        if arr.shape != (6,):
            raise ValidationError(name, f"expected 6 entries, got {arr.shape}")
        return np.diag(arr)
    if arr.shape != (6, 6):
        raise ValidationError(name, f"expected (6,) or (6,6), got {arr.shape}")
    return arr


def scenario_path() -> str:
    """Filesystem path of the bundled four-target example scenario."""
    return str(resources.files("tracksim") / "scenarios"
               / "scenario_v1.example")


def load_scenario(source) -> ScenarioConfig:
    """Parse and validate a scenario from a path, file object, or YAML string."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        source = str(source)
        if "\n" in source:
            text = source
        else:
            with open(source) as f:
                text = f.read()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioParseError(f"YAML parse error: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario document must be a mapping")
    return scenario_from_dict(doc)


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    env = _require(doc, "environment", "scenario")
    env_min = np.asarray(_require(env, "min", "environment"), float)
    env_max = np.asarray(_require(env, "max", "environment"), float)
    if env_min.shape != (3,) or env_max.shape != (3,) or np.any(env_min >= env_max):
        raise ValidationError("environment", "min must be < max, 3-vectors")

    dyn = _require(doc, "dynamics", "scenario")
    model = build_dynamics(
        dt=float(_require(dyn, "dt", "dynamics")),
        friction=float(_require(dyn, "friction", "dynamics")),
        mass=float(_require(dyn, "mass", "dynamics")),
        q_diag=_require(dyn, "q_diag", "dynamics"))

    targets = []
    for k, tsec in enumerate(_require(doc, "targets", "scenario")):
        where = f"targets[{k}]"
        mu0 = np.asarray(_require(tsec, "mu0", where), float)
        if mu0.shape != (6,):
            raise ValidationError(f"{where}.mu0", "must be a 6-vector")
        if np.any(mu0[:3] < env_min) or np.any(mu0[:3] > env_max):
            raise ValidationError(f"{where}.mu0",
                                  "initial mean outside environment bounds")
        sigma0 = _diag_or_full(_require(tsec, "sigma0", where), f"{where}.sigma0")
        gsec = _require(tsec, "goal", where)
        goal = GoalRegion(
            center=np.asarray(_require(gsec, "center", f"{where}.goal"), float),
            half_extents=np.asarray(
                _require(gsec, "half_extents", f"{where}.goal"), float))
        targets.append(TargetSpec(mu0=mu0, sigma0=sigma0, goal=goal))
    if not targets:
        raise ValidationError("targets", "at least one target required")

    obstacles = []
    for k, osec in enumerate(doc.get("obstacles") or []):
        where = f"obstacles[{k}]"
        if "center" in osec:
            obstacles.append(Cuboid.from_box(
                center=np.asarray(osec["center"], float),
                half_extents=np.asarray(_require(osec, "half_extents", where),
                                        float)))
        else:
            obstacles.append(Cuboid(
                normals=np.asarray(_require(osec, "normals", where), float),
                offsets=np.asarray(_require(osec, "offsets", where), float)))

    ssec = _require(doc, "sensor", "scenario")
    sensor = SensorModel(
        sigma_phi=_angle(ssec, "sigma_phi", "sensor"),
        p_detect=float(_require(ssec, "p_detect", "sensor")),
        clutter_rate=float(_require(ssec, "clutter_rate", "sensor")))

    asec = _require(doc, "agent", "scenario")
    agent = AgentMotionModel(
        radial_step=float(_require(asec, "radial_step", "agent")),
        n_radial=int(_require(asec, "n_radial", "agent")),
        n_theta=int(_require(asec, "n_theta", "agent")),
        altitude=float(_require(asec, "altitude", "agent")))
    agent_init = np.asarray(_require(asec, "initial", "agent"), float)
    if agent_init.shape != (3,):
        raise ValidationError("agent.initial", "must be a 3-vector")

    psec = _require(doc, "planner", "scenario")
    planner = PlannerParams(
        horizon=int(_require(psec, "horizon", "planner")),
        u_max=float(_require(psec, "u_max", "planner")),
        speed_max=float(_require(psec, "speed_max", "planner")),
        clearance=float(psec.get("clearance", 0.5)),
        big_m=float(psec.get("big_m", 1e4)),
        max_outer=int(psec.get("max_outer", 12)),
        refine_sides=bool(psec.get("refine_sides", True)))

    fsec = _require(doc, "filter", "scenario")
    fparams = FilterParams(
        n_particles=int(_require(fsec, "particles", "filter")),
        ess_fraction=float(fsec.get("ess_threshold", 0.5)),
        jitter=float(fsec.get("jitter", 0.0)))
    if fparams.n_particles < 100:
        raise ValidationError("filter.particles", "must be >= 100")
    if not 0.0 < fparams.ess_fraction <= 1.0:
        raise ValidationError("filter.ess_threshold", "must be in (0, 1]")

    esec = doc.get("episode") or {}
    episode = EpisodeParams(steps=int(esec.get("steps", 120)),
                            seed=int(esec.get("seed", 0)))
    if episode.steps < 0:
        raise ValidationError("episode.steps", "must be >= 0")

    bsec = doc.get("baseline") or {}
    baseline = tuple(tuple(float(v) for v in p)
                     for p in bsec.get("sensors", DEFAULT_BASELINE_SENSORS))

    cfg = ScenarioConfig(
        env_min=env_min, env_max=env_max, dynamics=model,
        targets=tuple(targets), obstacles=tuple(obstacles), sensor=sensor,
        agent=agent, agent_init=agent_init, planner=planner, filter=fparams,
        episode=episode, baseline_sensors=baseline,
        trace_position_only=bool(doc.get("trace_position_only", False)))

    for k, t in enumerate(cfg.targets):
        for n, obs in enumerate(cfg.obstacles):
            if contains(obs, t.mu0[:3]):
                raise ValidationError(f"targets[{k}].mu0",
                                      f"initial mean inside obstacles[{n}]")
    return cfg
