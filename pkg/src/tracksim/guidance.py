"""Receding-horizon target guidance with obstacle-face restriction.

The mixed-integer avoidance disjunction (stay outside at least one face of
every box, every step) is handled by iterating {assign one face per
(step, obstacle) near or inside an obstacle -> solve the resulting convex QP
-> re-assign from the new rollout}. An exhaustive enumeration over all face
assignments is provided as an exact oracle for small instances.

Decision variables are the 2T planar control components; vertical control is
identically zero. The scalar ground-speed cap is imposed as an inscribed
regular octagon on each predicted mean velocity, which never exceeds the
true circular cap.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .prediction import GaussianBelief, matrix_powers, rollout_cov, rollout_mean
from .qp import QpSolution, QpStatus, QuadraticProgram, solve_qp
from .world import Cuboid, DynamicsModel, GoalRegion, all_face_slacks

_OCT_ANGLES = np.pi / 8 + np.arange(8) * np.pi / 4
_OCT_NORMALS = np.stack([np.cos(_OCT_ANGLES), np.sin(_OCT_ANGLES)], axis=1)
_OCT_SCALE = np.cos(np.pi / 8)


class InstanceTooLargeError(ValueError):
    """Exhaustive enumeration refused; the assignment space is too big."""


@dataclass(frozen=True)
class PlannerParams:
    horizon: int = 50
    u_max: float = 6000.0        # N, per planar component
    speed_max: float = 16.0      # m/s ground speed
    clearance: float = 0.5       # m, margin replacing the strict inequality
    big_m: float = 1e4           # retained for the enumeration oracle docs
    max_outer: int = 12
    # refine the obstacle-side choice after a feasible plan is found; costs
    # extra QP solves per replan, worth it for one-shot planning but not for
    # long closed-loop episodes where feasibility is what matters
    refine_sides: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.u_max, self.speed_max, self.clearance) <= 0:
            raise ValueError("u_max, speed_max, clearance must be > 0")


# FaceAssignment: {(horizon step, obstacle index): face index}; a missing key
# means that (step, obstacle) pair is unconstrained.
FaceAssignment = dict[tuple[int, int], int]


@dataclass
class GuidancePlan:
    controls: np.ndarray         # (T, 3), z column zero
    means: np.ndarray            # (T, 6)
    covs: np.ndarray             # (T, 6, 6), control-independent
    faces: FaceAssignment
    objective: float
    feasible: bool
    iterations: int = 0
    max_penetration: float = 0.0
    active_set: list[int] = field(default_factory=list)


_MAPS_CACHE: dict = {}


def control_maps(model: DynamicsModel, T: int):
    """Linear maps from stacked planar controls to predicted mean positions,
    velocities, and full states; cached per (dynamics, horizon)."""
    key = (model.dt, model.friction, model.mass, T)
    hit = _MAPS_CACHE.get(key)
    if hit is not None:
        return hit
    powers = matrix_powers(model.A, T)
    pb = powers @ model.B[:, :2]                 # (T+1, 6, 2)
    F = np.zeros((T, 6, 2 * T))
    for tau in range(T):
        for k in range(tau + 1):
            F[tau][:, 2 * k:2 * k + 2] = pb[tau - k]
    maps = {"powers": powers, "F": F,
            "Fpos": F[:, 0:2, :], "Fvel": F[:, 3:5, :]}
    _MAPS_CACHE[key] = maps
    return maps


def objective_value(model: DynamicsModel, mu: np.ndarray,
                    controls: np.ndarray, goal_center: np.ndarray) -> float:
    """Terminal distance-to-goal squared plus control-increment smoothness."""
    controls = np.atleast_2d(np.asarray(controls, float))
    means = rollout_mean(model, mu, controls)
    term = float(np.sum((means[-1, :2] - np.asarray(goal_center, float)[:2]) ** 2))
    smooth = float(np.sum(np.diff(controls[:, :2], axis=0) ** 2))
    return term + smooth


def objective_quadratic(model: DynamicsModel, mu: np.ndarray, T: int,
                        goal_center: np.ndarray):
    """The same objective as (P, q, const) over stacked planar controls."""
    maps = control_maps(model, T)
    Fp = maps["Fpos"][T - 1]                     # (2, 2T)
    a = maps["powers"][T] @ np.asarray(mu, float)
    r = a[:2] - np.asarray(goal_center, float)[:2]
    n = 2 * T
    D = np.zeros((max(2 * (T - 1), 0), n))
    for tau in range(1, T):
        D[2 * (tau - 1):2 * tau, 2 * tau:2 * tau + 2] = np.eye(2)
        D[2 * (tau - 1):2 * tau, 2 * (tau - 1):2 * (tau - 1) + 2] = -np.eye(2)
    P = 2.0 * (Fp.T @ Fp + D.T @ D)
    q = 2.0 * Fp.T @ r
    const = float(r @ r)
    return P, q, const


def build_restricted_qp(model: DynamicsModel, params: PlannerParams,
                        belief: GaussianBelief, obstacles: list[Cuboid],
                        goal: GoalRegion,
                        faces: FaceAssignment) -> QuadraticProgram:
    """Convex restriction of the guidance problem under a fixed face choice."""
    T = params.horizon
    maps = control_maps(model, T)
    P, q, _ = objective_quadratic(model, belief.mean, T, goal.center)
    n = 2 * T

    affine = maps["powers"][1:T + 1] @ belief.mean      # (T, 6)
    rows, rhs = [], []
    # ground-speed octagon on each predicted mean velocity
    for tau in range(T):
        rows.append(_OCT_NORMALS @ maps["Fvel"][tau])
        rhs.append(params.speed_max * _OCT_SCALE - _OCT_NORMALS @ affine[tau, 3:5])
    # assigned obstacle faces: stay on the outward side with clearance
    for (tau, n_obs), i in sorted(faces.items()):
        normal = obstacles[n_obs].normals[i]
        offset = obstacles[n_obs].offsets[i]
        rows.append(-(normal[:2] @ maps["Fpos"][tau]).reshape(1, n))
        rhs.append(np.atleast_1d(
            -(offset + params.clearance) + normal @ affine[tau, 0:3]))
    G = np.vstack(rows)
    h = np.concatenate(rhs)
    bound = np.full(n, params.u_max)
    return QuadraticProgram(P=P, q=q, G=G, h=h, lower=-bound, upper=bound)


def assign_faces(positions: np.ndarray, obstacles: list[Cuboid],
                 clearance: float) -> FaceAssignment:
    """Assign the least-violated face wherever a rollout position is inside an
    obstacle or within the clearance margin; ties break to the lowest index.

    Faces with a purely vertical normal are skipped: altitude is not
    controllable for ground targets, so their half-space constraints could
    never be enforced by the QP (e.g. the bottom face of a ground-sitting
    box, whose slack is exactly zero on the ground plane).
    """
    faces: FaceAssignment = {}
    for n_obs, obs in enumerate(obstacles):
        planar = np.abs(obs.normals[:, 0]) + np.abs(obs.normals[:, 1]) > 1e-9
        slacks = all_face_slacks(obs, positions[:, 0:3])
        for tau in range(positions.shape[0]):
            if float(np.max(slacks[tau])) < clearance:
                masked = np.where(planar, slacks[tau], -np.inf)
                faces[(tau, n_obs)] = int(np.argmax(masked))
    return faces


def _harmonize_faces(positions: np.ndarray, obstacles: list[Cuboid],
                     faces: FaceAssignment) -> FaceAssignment:
    """Force a single face per contiguous run of assigned steps per obstacle.

    Per-step argmax can flip between opposite faces mid-crossing (enter near
    +y, exit near -y), and those half-spaces are jointly unsatisfiable under
    the speed cap.  For each run, pick the planar face with the best
    worst-case slack over the whole run; that is the side requiring the
    smallest detour.
    """
    out = dict(faces)
    for n_obs, obs in enumerate(obstacles):
        taus = sorted(t for (t, n) in faces if n == n_obs)
        if not taus:
            continue
        planar = np.abs(obs.normals[:, 0]) + np.abs(obs.normals[:, 1]) > 1e-9
        slacks = all_face_slacks(obs, positions[:, 0:3])
        runs: list[list[int]] = [[taus[0]]]
        for t in taus[1:]:
            if t == runs[-1][-1] + 1:
                runs[-1].append(t)
            else:
                runs.append([t])
        for run in runs:
            worst = np.where(planar, slacks[run].min(axis=0), -np.inf)
            face = int(np.argmax(worst))
            for t in run:
                out[(t, n_obs)] = face
    return out


def _embed_controls(x: np.ndarray, T: int) -> np.ndarray:
    controls = np.zeros((T, 3))
    controls[:, :2] = x.reshape(T, 2)
    return controls


def _penetration(positions: np.ndarray, obstacles: list[Cuboid],
                 clearance: float) -> float:
    worst = 0.0
    for obs in obstacles:
        slacks = all_face_slacks(obs, positions)
        worst = max(worst, float(np.max(clearance - np.max(slacks, axis=1),
                                        initial=0.0)))
    return worst


def _make_plan(model, params, belief, obstacles, goal, sol: QpSolution,
               faces, covs, iterations) -> GuidancePlan:
    T = params.horizon
    controls = _embed_controls(sol.x, T)
    means = rollout_mean(model, belief.mean, controls)
    pen = _penetration(means[:, 0:3], obstacles, params.clearance)
    feasible = sol.status != QpStatus.INFEASIBLE and pen <= 1e-6
    return GuidancePlan(
        controls=controls, means=means, covs=covs, faces=dict(faces),
        objective=objective_value(model, belief.mean, controls, goal.center),
        feasible=feasible, iterations=iterations, max_penetration=pen,
        active_set=list(sol.active_set))


def plan_trajectory(model: DynamicsModel, params: PlannerParams,
                    belief: GaussianBelief, obstacles: list[Cuboid],
                    goal: GoalRegion,
                    warm: GuidancePlan | None = None) -> GuidancePlan:
    """Iterative convex restriction; returns the best feasible plan found,
    or the least-penetrating plan with feasible=False."""
    T = params.horizon
    covs = rollout_cov(model, belief.cov, T)
    if warm is not None and warm.controls.shape[0] == T:
        # shift the previous plan one step for the receding horizon
        x0 = np.vstack([warm.controls[1:, :2], warm.controls[-1:, :2]]).ravel()
        seed_means = rollout_mean(model, belief.mean, _embed_controls(x0, T))
        faces = _harmonize_faces(
            seed_means, obstacles,
            assign_faces(seed_means[:, 0:3], obstacles, params.clearance))
    else:
        x0 = np.zeros(2 * T)
        faces = {}

    # bound and speed rows keep their combined-row indices across face
    # reassignments, so the previous active set warm-starts the next solve
    n_stable = 2 * (2 * T) + 8 * T
    ws = [r for r in warm.active_set if r < n_stable] if warm is not None \
        else None

    incumbent: GuidancePlan | None = None
    fallback: GuidancePlan | None = None
    plan: GuidancePlan | None = None
    seen = {frozenset(faces.items())}
    for it in range(1, params.max_outer + 1):
        qp = build_restricted_qp(model, params, belief, obstacles, goal, faces)
        sol = solve_qp(qp, x0=x0, warm_start=ws)
        ws = [r for r in sol.active_set if r < n_stable]
        plan = _make_plan(model, params, belief, obstacles, goal, sol,
                          faces, covs, it)
        if plan.feasible and (incumbent is None
                              or plan.objective < incumbent.objective - 1e-12):
            incumbent = plan
        if fallback is None or plan.max_penetration < fallback.max_penetration:
            fallback = plan
        # accumulate: keep the enforced faces, add newly flagged steps, so a
        # detour that trades one crossing step for another converges instead
        # of dropping the constraint that caused the detour
        fresh = _harmonize_faces(
            plan.means, obstacles,
            assign_faces(plan.means[:, 0:3], obstacles, params.clearance))
        # an infeasible restriction must change, so drop it and restart from
        # the fresh assignment instead of merging
        if sol.status == QpStatus.INFEASIBLE:
            new_faces = fresh
        else:
            new_faces = {**fresh, **faces}
        key = frozenset(new_faces.items())
        if new_faces == faces or key in seen:
            break
        seen.add(key)
        faces = new_faces
        x0 = sol.x
    if incumbent is None:
        incumbent = _rescue(model, params, belief, obstacles, goal, covs)
    if incumbent is not None:
        # polish only when the set of obstacle sides differs from the warm
        # plan's: a receding-horizon replan that keeps the same sides was
        # already side-optimized on the previous step
        sides = {(n, f) for (_, n), f in incumbent.faces.items()}
        warm_sides = {(n, f) for (_, n), f in warm.faces.items()} \
            if warm is not None else set()
        changed = {n for (n, f) in sides - warm_sides} \
            if warm is not None else None
        if params.refine_sides and (changed is None or changed):
            incumbent = _polish(model, params, belief, obstacles, goal, covs,
                                incumbent, only_obstacles=changed)
        incumbent.iterations = plan.iterations
        return incumbent
    return fallback


def _polish(model: DynamicsModel, params: PlannerParams,
            belief: GaussianBelief, obstacles: list[Cuboid], goal: GoalRegion,
            covs: np.ndarray, plan: GuidancePlan,
            only_obstacles: set[int] | None = None) -> GuidancePlan:
    """Coordinate descent over the face chosen for each crossing run.

    The worst-case-slack pick is geometry-only; routing around the other
    side of a box is sometimes much cheaper.  Try each alternative planar
    face per run with the rest of the assignment held fixed and keep
    feasible improvements.
    """
    if not plan.faces:
        return plan
    T = params.horizon
    n_stable = 2 * (2 * T) + 8 * T
    best = plan
    for _ in range(4):
        # steepest descent: apply the single best slot move per sweep, since
        # greedily taking the first improvement can stall in a local minimum
        sweep_best: GuidancePlan | None = None
        for n_obs, obs in enumerate(obstacles):
            if only_obstacles is not None and n_obs not in only_obstacles:
                continue
            taus = sorted(t for (t, n) in best.faces if n == n_obs)
            if not taus:
                continue
            planar = [i for i in range(6)
                      if abs(obs.normals[i, 0]) + abs(obs.normals[i, 1])
                      > 1e-9]
            # a slot is a maximal stretch of consecutive steps already on the
            # same face, so mixed-face crossings can be refined step by step
            runs: list[list[int]] = [[taus[0]]]
            for t in taus[1:]:
                if t == runs[-1][-1] + 1 and \
                        best.faces[(t, n_obs)] == \
                        best.faces[(runs[-1][-1], n_obs)]:
                    runs[-1].append(t)
                else:
                    runs.append([t])
            for run in runs:
                current = best.faces[(run[0], n_obs)]
                x0 = best.controls[:, :2].ravel()
                ws = [r for r in best.active_set if r < n_stable]
                for alt in planar:
                    if alt == current:
                        continue
                    trial = dict(best.faces)
                    for t in run:
                        trial[(t, n_obs)] = alt
                    qp = build_restricted_qp(model, params, belief, obstacles,
                                             goal, trial)
                    sol = solve_qp(qp, x0=x0, warm_start=ws)
                    if sol.status == QpStatus.INFEASIBLE:
                        continue
                    cand = _make_plan(model, params, belief, obstacles, goal,
                                      sol, trial, covs, best.iterations)
                    if cand.feasible and \
                            cand.objective < best.objective - 1e-9 and \
                            (sweep_best is None
                             or cand.objective < sweep_best.objective):
                        sweep_best = cand
        if sweep_best is None:
            break
        best = sweep_best
    return best


def _rescue(model: DynamicsModel, params: PlannerParams,
            belief: GaussianBelief, obstacles: list[Cuboid], goal: GoalRegion,
            covs: np.ndarray) -> GuidancePlan | None:
    """Small search over per-crossing-run face choices when the harmonized
    argmax pick never produced a feasible restricted QP: the least-violated
    side of a box is not always the side a feasible detour exists on."""
    qp0 = build_restricted_qp(model, params, belief, obstacles, goal, {})
    sol0 = solve_qp(qp0)
    if sol0.status == QpStatus.INFEASIBLE:
        return None
    plan0 = _make_plan(model, params, belief, obstacles, goal, sol0, {},
                       covs, 1)
    if plan0.feasible:
        return plan0
    raw = assign_faces(plan0.means[:, 0:3], obstacles, params.clearance)
    runs: list[tuple[int, list[int], list[int]]] = []   # (obstacle, taus, faces)
    for n_obs, obs in enumerate(obstacles):
        taus = sorted(t for (t, n) in raw if n == n_obs)
        if not taus:
            continue
        planar = [i for i in range(6)
                  if abs(obs.normals[i, 0]) + abs(obs.normals[i, 1]) > 1e-9]
        groups: list[list[int]] = [[taus[0]]]
        for t in taus[1:]:
            if t == groups[-1][-1] + 1:
                groups[-1].append(t)
            else:
                groups.append([t])
        slacks = all_face_slacks(obs, plan0.means[:, 0:3])
        for g in groups:
            # try the least-violated side of each crossing first
            worst = slacks[g].min(axis=0)
            order = sorted(planar, key=lambda i: -worst[i])
            runs.append((n_obs, g, order))
    if not runs:
        return None
    best: GuidancePlan | None = None
    n_tried = 0
    for combo in itertools.product(*(r[2] for r in runs)):
        if n_tried >= 64:
            break
        n_tried += 1
        faces: FaceAssignment = {}
        for (n_obs, g, _), f in zip(runs, combo):
            for t in g:
                faces[(t, n_obs)] = f
        qp = build_restricted_qp(model, params, belief, obstacles, goal,
                                 faces)
        sol = solve_qp(qp, x0=sol0.x)
        plan = _make_plan(model, params, belief, obstacles, goal, sol, faces,
                          covs, 1)
        if plan.feasible and (best is None or plan.objective < best.objective):
            best = plan
            if not params.refine_sides:
                break
    return best


def exhaustive_plan(model: DynamicsModel, params: PlannerParams,
                    belief: GaussianBelief, obstacles: list[Cuboid],
                    goal: GoalRegion) -> GuidancePlan:
    """Global optimum over every face assignment; small instances only."""
    T = params.horizon
    n_slots = T * len(obstacles)
    if T > 6 or len(obstacles) > 2 or 7 ** n_slots > 200_000:
        raise InstanceTooLargeError(
            f"assignment space 7^{n_slots} exceeds the enumeration cap")
    covs = rollout_cov(model, belief.cov, T)
    if not obstacles:
        return plan_trajectory(model, params, belief, obstacles, goal)

    slots = [(tau, n) for n in range(len(obstacles)) for tau in range(T)]
    best: GuidancePlan | None = None
    fallback: GuidancePlan | None = None
    n_solved = 0
    for combo in itertools.product([None, 0, 1, 2, 3, 4, 5], repeat=n_slots):
        faces = {slot: f for slot, f in zip(slots, combo) if f is not None}
        qp = build_restricted_qp(model, params, belief, obstacles, goal, faces)
        sol = solve_qp(qp)
        n_solved += 1
        if sol.status == QpStatus.INFEASIBLE:
            continue
        plan = _make_plan(model, params, belief, obstacles, goal, sol,
                          faces, covs, n_solved)
        if plan.feasible:
            if best is None or plan.objective < best.objective:
                best = plan
        elif fallback is None or plan.max_penetration < fallback.max_penetration:
            fallback = plan
    if best is not None:
        return best
    if fallback is not None:
        return fallback
    return plan_trajectory(model, params, belief, obstacles, goal)
