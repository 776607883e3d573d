"""Episode orchestration, Monte-Carlo experiments, RMSE metrics, and the
fixed-sensor baseline.

Randomness is counter-based: every draw comes from a fresh generator seeded
by (base seed, purpose, trial, step, target[, sensor]), so trials are
reproducible bit-for-bit and independent of worker scheduling.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import filtering, guidance
from .controller import select_next_state
from .filtering import ParticleBelief, belief_moments, init_belief, pf_predict, \
    pf_update, systematic_resample
from .guidance import GuidancePlan, plan_trajectory
from .prediction import GaussianBelief
from .scenario import ScenarioConfig
from .sensing import MeasurementSet, generate_measurements, true_bearing, \
    wrap_angle
from .world import all_face_slacks

log = logging.getLogger(__name__)

# purpose codes for the counter-based RNG streams
_TRUTH_INIT, _PF_INIT, _PROC_NOISE, _PF_NOISE, _MEAS, _RESAMPLE, _AGENT_INIT = \
    range(7)


def substream(base_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(key)))


@dataclass
class TrialLog:
    seed: int
    trial: int
    policy: str
    truth: np.ndarray          # (steps+1, M, 6)
    agent: np.ndarray          # (steps+1, 3)
    est_mean: np.ndarray       # (steps, M, 6)
    cov_trace: np.ndarray      # (steps, M)
    ess: np.ndarray            # (steps, M)
    resampled: np.ndarray      # (steps, M) bool
    n_meas: np.ndarray         # (steps, M) int
    plan_feasible: np.ndarray  # (steps, M) bool
    plan_objective: np.ndarray  # (steps, M)
    trace_sum: np.ndarray      # (steps,)
    measurements: list = field(default_factory=list)  # [step][target] sets
    duration: float = 0.0

    @property
    def steps(self) -> int:
        return self.est_mean.shape[0]


@dataclass
class RmseSeries:
    per_target: np.ndarray    # (steps, M)
    averaged: np.ndarray      # (steps,)
    n_trials: int


def _held_plan(plan: GuidancePlan) -> GuidancePlan:
    """Shift a plan one step forward, repeating the last control."""
    controls = np.vstack([plan.controls[1:], plan.controls[-1:]])
    return replace(plan, controls=controls, feasible=plan.feasible)


def _replan(config: ScenarioConfig, belief: GaussianBelief, goal,
            warm: GuidancePlan) -> tuple[GuidancePlan, bool]:
    plan = plan_trajectory(config.dynamics, config.planner, belief,
                           list(config.obstacles), goal, warm=warm)
    if plan.feasible:
        return plan, True
    log.debug("planner infeasible; holding previous plan")
    return _held_plan(warm), False


def _agent_start(config: ScenarioConfig, base_seed: int, trial: int,
                 random_init: bool) -> np.ndarray:
    if not random_init:
        return np.asarray(config.agent_init, float).copy()
    rng = substream(base_seed, _AGENT_INIT, trial)
    xy = rng.uniform(config.env_min[:2], config.env_max[:2])
    return np.array([xy[0], xy[1], config.agent.altitude])


def _baseline_update(belief: ParticleBelief, bearings, sensor_positions,
                     sigma_phi: float, rng, ess_fraction: float):
    """Multiply the per-sensor single-bearing Gaussian likelihoods."""
    w = belief.weights.copy()
    s2 = sigma_phi ** 2
    for phi, spos in zip(bearings, sensor_positions):
        d = belief.particles[:, :2] - np.asarray(spos, float)[:2]
        pred = wrap_angle(np.arctan2(d[:, 0], d[:, 1]))
        w = w * np.exp(-0.5 * wrap_angle(phi - pred) ** 2 / s2)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0:
        log.warning("degenerate baseline update; keeping prior weights")
        w = belief.weights
    else:
        w = w / total
    posterior = ParticleBelief(particles=belief.particles, weights=w)
    if posterior.ess < ess_fraction * belief.n:
        return systematic_resample(posterior, rng), True
    return posterior, False


def simulate_truth(config: ScenarioConfig, seed: int,
                   trial: int = 0) -> np.ndarray:
    """Ground-truth trajectories: each target runs the receding-horizon
    controller on its own noisy state.  Independent of the sensing setup and
    of the agent policy, so paired comparisons may share one rollout.
    Deterministic given (config, seed, trial)."""
    model = config.dynamics
    M = len(config.targets)
    steps = config.episode.steps
    truth = np.zeros((steps + 1, M, 6))
    plans: list[GuidancePlan] = []
    for j, tg in enumerate(config.targets):
        rng = substream(seed, _TRUTH_INIT, trial, j)
        truth[0, j] = rng.multivariate_normal(tg.mu0, tg.sigma0, method="eigh")
        plans.append(plan_trajectory(
            model, config.planner,
            GaussianBelief(mean=truth[0, j], cov=tg.sigma0),
            list(config.obstacles), tg.goal))
    for t in range(1, steps + 1):
        for j, tg in enumerate(config.targets):
            noise = substream(seed, _PROC_NOISE, trial, t, j) \
                .multivariate_normal(np.zeros(6), model.Q, method="eigh")
            truth[t, j] = model.A @ truth[t - 1, j] \
                + model.B @ plans[j].controls[0] + noise
            plans[j], _ = _replan(
                config, GaussianBelief(mean=truth[t, j], cov=tg.sigma0),
                tg.goal, plans[j])
    return truth


def run_trial(config: ScenarioConfig, seed: int, trial: int = 0,
              policy: str = "adaptive", random_agent_init: bool = False,
              keep_measurements: bool = True,
              truth_states: np.ndarray | None = None) -> TrialLog:
    """One full episode; deterministic given (config, seed, trial).

    policy: "adaptive" (trace-minimizing motion), "stationary" (agent never
    moves), or "baseline" (three fixed sensors, certain detection,
    no clutter, no agent).

    truth_states: optional precomputed simulate_truth output; passing it in
    lets paired arms (policies, clutter rates) share one ground truth, and is
    bit-identical to omitting it.
    """
    t_start = time.perf_counter()
    model = config.dynamics
    sensor = config.sensor
    M = len(config.targets)
    steps = config.episode.steps
    N = config.filter.n_particles
    ess_frac = config.filter.ess_fraction
    baseline = policy == "baseline"

    if truth_states is None:
        truth = simulate_truth(config, seed, trial)
    else:
        if truth_states.shape != (steps + 1, M, 6):
            raise ValueError("truth_states shape mismatch")
        truth = np.asarray(truth_states, float)
    agent_pos = _agent_start(config, seed, trial, random_agent_init)
    agent = np.tile(agent_pos, (steps + 1, 1))

    beliefs: list[ParticleBelief] = []
    uav_plans: list[GuidancePlan] = []
    for j, t in enumerate(config.targets):
        beliefs.append(init_belief(t.mu0, t.sigma0, N,
                                   substream(seed, _PF_INIT, trial, j)))
        prior = GaussianBelief(mean=t.mu0, cov=t.sigma0)
        uav_plans.append(plan_trajectory(model, config.planner, prior,
                                         list(config.obstacles), t.goal))

    est_mean = np.zeros((steps, M, 6))
    cov_trace = np.zeros((steps, M))
    ess = np.zeros((steps, M))
    resampled = np.zeros((steps, M), dtype=bool)
    n_meas = np.zeros((steps, M), dtype=int)
    plan_feasible = np.ones((steps, M), dtype=bool)
    plan_objective = np.zeros((steps, M))
    trace_sum = np.full(steps, np.nan)
    all_meas: list[list[MeasurementSet]] = []

    for t in range(1, steps + 1):
        # 1. ground truth advanced (precomputed by simulate_truth)
        # 2. filter prediction with the hypothesized first control
        predicted = [pf_predict(beliefs[j], model, uav_plans[j].controls[0],
                                substream(seed, _PF_NOISE, trial, t, j))
                     for j in range(M)]

        # 3. agent motion
        if policy == "adaptive":
            agent_pos, info = select_next_state(
                predicted, agent_pos, config.agent, sensor,
                env_min=config.env_min, env_max=config.env_max,
                position_only=config.trace_position_only)
            trace_sum[t - 1] = info["trace_sum"]
        agent[t] = agent_pos

        # 4. measurements and update
        step_meas: list[MeasurementSet] = []
        for j in range(M):
            if baseline:
                bearings = []
                for si, spos in enumerate(config.baseline_sensors):
                    rng = substream(seed, _MEAS, trial, t, j, si)
                    phi = true_bearing(truth[t, j, :3], (spos[0], spos[1], 0.0)) \
                        + rng.normal(0.0, sensor.sigma_phi)
                    bearings.append(float(wrap_angle(phi)))
                meas = MeasurementSet(bearings=np.asarray(bearings),
                                      is_clutter=np.zeros(len(bearings), bool))
                posterior, did_resample = _baseline_update(
                    predicted[j], bearings, config.baseline_sensors,
                    sensor.sigma_phi, substream(seed, _RESAMPLE, trial, t, j),
                    ess_frac)
            else:
                meas = generate_measurements(
                    truth[t, j], agent_pos, sensor,
                    substream(seed, _MEAS, trial, t, j))
                posterior, did_resample = pf_update(
                    predicted[j], meas, agent_pos, sensor,
                    substream(seed, _RESAMPLE, trial, t, j), ess_frac,
                    jitter=config.filter.jitter)
            beliefs[j] = posterior
            step_meas.append(meas)
            n_meas[t - 1, j] = len(meas)
            resampled[t - 1, j] = did_resample
            ess[t - 1, j] = posterior.ess
            mom = belief_moments(posterior)
            est_mean[t - 1, j] = mom.mean
            cov_trace[t - 1, j] = float(np.trace(mom.cov))

            # 5. replan from the new posterior
            uav_plans[j], ok = _replan(config, mom, config.targets[j].goal,
                                       uav_plans[j])
            plan_feasible[t - 1, j] = ok
            plan_objective[t - 1, j] = uav_plans[j].objective
        if keep_measurements:
            all_meas.append(step_meas)

    return TrialLog(
        seed=seed, trial=trial, policy=policy, truth=truth, agent=agent,
        est_mean=est_mean, cov_trace=cov_trace, ess=ess, resampled=resampled,
        n_meas=n_meas, plan_feasible=plan_feasible,
        plan_objective=plan_objective, trace_sum=trace_sum,
        measurements=all_meas, duration=time.perf_counter() - t_start)


def run_baseline_trial(config: ScenarioConfig, seed: int,
                       trial: int = 0) -> TrialLog:
    """Three fixed bearing sensors, certain detection, no clutter, no agent."""
    return run_trial(config, seed, trial=trial, policy="baseline")


def rmse_from_logs(logs: list[TrialLog]) -> RmseSeries:
    """Per-step planar position RMSE across trials, per target and averaged."""
    steps = logs[0].steps
    M = logs[0].truth.shape[1]
    err2 = np.zeros((steps, M))
    for lg in logs:
        d = lg.est_mean[:, :, :2] - lg.truth[1:, :, :2]
        err2 += np.sum(d ** 2, axis=2)
    per_target = np.sqrt(err2 / len(logs))
    return RmseSeries(per_target=per_target,
                      averaged=per_target.mean(axis=1),
                      n_trials=len(logs))


def trial_rmse(log_: TrialLog, from_step: int = 0) -> float:
    """Mean planar position error of one trial from `from_step` on."""
    d = log_.est_mean[from_step:, :, :2] - log_.truth[1 + from_step:, :, :2]
    return float(np.mean(np.linalg.norm(d, axis=2)))


def _trial_worker(args):
    config, seed, trial, policy, random_init = args
    return run_trial(config, seed, trial=trial, policy=policy,
                     random_agent_init=random_init, keep_measurements=False)


def run_monte_carlo(config: ScenarioConfig, n_trials: int, base_seed: int,
                    workers: int = 1, policy: str = "adaptive",
                    random_agent_init: bool = True) -> tuple[RmseSeries, list[TrialLog]]:
    """Run n_trials independent trials and fold them into an RMSE series.

    Trials are keyed by (base_seed, trial index) so the result is identical
    for any worker count; logs are merged in trial order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    jobs = [(config, base_seed, k, policy, random_agent_init)
            for k in range(n_trials)]
    if workers > 1:
        with get_context("spawn").Pool(workers) as pool:
            logs = pool.map(_trial_worker, jobs)
    else:
        logs = [_trial_worker(j) for j in jobs]
    return rmse_from_logs(logs), logs


# --- guidance-only episode (no sensing): receding-horizon mean rollout ---

@dataclass
class GuidanceEpisode:
    reached_step: np.ndarray     # (M,) first step whose plan terminal mean is
                                 # in the goal; -1 if never
    min_face_slack: float        # over all planned mean positions and obstacles
    max_control: float
    all_feasible: bool
    mean_paths: np.ndarray       # (steps+1, M, 6) executed mean trajectory
    plans0: list[GuidancePlan]   # the step-1 plans, for CSV emission


def run_guidance_episode(config: ScenarioConfig,
                         max_steps: int | None = None) -> GuidanceEpisode:
    """Receding-horizon guidance on the deterministic mean dynamics."""
    model = config.dynamics
    M = len(config.targets)
    steps = max_steps if max_steps is not None else config.episode.steps
    mu = np.stack([t.mu0 for t in config.targets])
    paths = np.zeros((steps + 1, M, 6))
    paths[0] = mu
    plans = [plan_trajectory(model, config.planner,
                             GaussianBelief(mean=t.mu0, cov=t.sigma0),
                             list(config.obstacles), t.goal)
             for t in config.targets]
    plans0 = list(plans)
    reached = np.full(M, -1, dtype=int)
    min_slack = math.inf
    max_u = 0.0
    all_feasible = True

    def audit(plan: GuidancePlan):
        nonlocal min_slack, max_u, all_feasible
        all_feasible &= plan.feasible
        max_u = max(max_u, float(np.max(np.abs(plan.controls))))
        for obs in config.obstacles:
            slacks = all_face_slacks(obs, plan.means[:, :3])
            min_slack = min(min_slack, float(np.min(np.max(slacks, axis=1))))

    def mark_reached(t: int):
        for j in range(M):
            if reached[j] < 0 and config.targets[j].goal.reached(mu[j, :3]):
                reached[j] = t

    for j in range(M):
        audit(plans[j])
    mark_reached(0)
    for t in range(1, steps + 1):
        for j in range(M):
            mu[j] = model.A @ mu[j] + model.B @ plans[j].controls[0]
            paths[t, j] = mu[j]
            plans[j], _ = _replan(
                config, GaussianBelief(mean=mu[j], cov=config.targets[j].sigma0),
                config.targets[j].goal, plans[j])
            audit(plans[j])
        mark_reached(t)
        if np.all(reached >= 0):
            paths = paths[:t + 1]
            break
    return GuidanceEpisode(reached_step=reached, min_face_slack=min_slack,
                           max_control=max_u, all_feasible=all_feasible,
                           mean_paths=paths, plans0=plans0)


# --- result emission ---

SCHEMA_VERSION = "1"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def config_digest(config: ScenarioConfig) -> str:
    def convert(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if hasattr(obj, "__dataclass_fields__"):
            return {k: convert(getattr(obj, k))
                    for k in obj.__dataclass_fields__}
        if isinstance(obj, (list, tuple)):
            return [convert(v) for v in obj]
        return obj
    text = json.dumps(convert(config), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def emit_rmse(series: RmseSeries, path: Path) -> None:
    with open(path, "w") as f:
        f.write("step,target,rmse\n")
        steps, M = series.per_target.shape
        for t in range(steps):
            for j in range(M):
                f.write(f"{t + 1},{j},{_fmt(series.per_target[t, j])}\n")
            f.write(f"{t + 1},avg,{_fmt(series.averaged[t])}\n")


def emit_trial(log_: TrialLog, outdir: Path, prefix: str = "trial") -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    made = []
    M = log_.truth.shape[1]

    p = outdir / f"{prefix}_estimates.csv"
    with open(p, "w") as f:
        f.write("step,target,est_x,est_y,cov_trace,ess,resampled,"
                "plan_feasible,plan_objective,n_meas\n")
        for t in range(log_.steps):
            for j in range(M):
                f.write(",".join([
                    str(t + 1), str(j),
                    _fmt(log_.est_mean[t, j, 0]), _fmt(log_.est_mean[t, j, 1]),
                    _fmt(log_.cov_trace[t, j]), _fmt(log_.ess[t, j]),
                    _fmt(log_.resampled[t, j]), _fmt(log_.plan_feasible[t, j]),
                    _fmt(log_.plan_objective[t, j]),
                    str(int(log_.n_meas[t, j]))]) + "\n")
    made.append(p)

    p = outdir / f"{prefix}_truth.csv"
    with open(p, "w") as f:
        f.write("step,target,x,y,z,vx,vy,vz\n")
        for t in range(log_.truth.shape[0]):
            for j in range(M):
                f.write(f"{t},{j}," +
                        ",".join(_fmt(v) for v in log_.truth[t, j]) + "\n")
    made.append(p)

    p = outdir / f"{prefix}_agent.csv"
    with open(p, "w") as f:
        f.write("step,x,y,z,trace_sum\n")
        for t in range(log_.agent.shape[0]):
            ts = _fmt(log_.trace_sum[t - 1]) if 1 <= t <= log_.steps \
                and np.isfinite(log_.trace_sum[t - 1]) else ""
            f.write(f"{t}," + ",".join(_fmt(v) for v in log_.agent[t])
                    + f",{ts}\n")
    made.append(p)

    if log_.measurements:
        p = outdir / f"{prefix}_measurements.csv"
        with open(p, "w") as f:
            f.write("step,target,bearing,is_clutter\n")
            for t, step_meas in enumerate(log_.measurements, start=1):
                for j, meas in enumerate(step_meas):
                    for b, c in zip(meas.bearings, meas.is_clutter):
                        f.write(f"{t},{j},{_fmt(b)},{_fmt(c)}\n")
        made.append(p)
    return made


def emit_summary(config: ScenarioConfig, seeds: list[int], outdir: Path,
                 extra: dict | None = None) -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION,
           "config_sha256": config_digest(config),
           "seeds": list(seeds)}
    if extra:
        doc.update(extra)
    p = outdir / "summary.json"
    with open(p, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return p
