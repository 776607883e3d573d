"""Obstacle-avoiding guidance: restricted QPs, face assignment, planning."""
from __future__ import annotations

import numpy as np
import pytest

from tracksim.guidance import (
    GuidancePlan,
    InstanceTooLargeError,
    PlannerParams,
    assign_faces,
    build_restricted_qp,
    exhaustive_plan,
    objective_quadratic,
    objective_value,
    plan_trajectory,
)
from tracksim.prediction import GaussianBelief, rollout_cov, rollout_mean
from tracksim.qp import solve_qp
from tracksim.world import Cuboid, GoalRegion, all_face_slacks, build_dynamics


def small_model():
    return build_dynamics(1.0, 0.2, 10.0, np.zeros(6))


def static_belief(x, y, vx=0.0, vy=0.0):
    return GaussianBelief(
        mean=[x, y, 0.0, vx, vy, 0.0],
        cov=np.diag([1.0, 1.0, 1e-12, 0.1, 0.1, 1e-12]))


class TestObjective:
    def test_zero_at_goal_constant_controls(self, model):
        # start at the goal centroid at rest, apply zero controls
        goal = np.array([300.0, 300.0, 0.0])
        mu = np.array([300.0, 300.0, 0.0, 0.0, 0.0, 0.0])
        controls = np.zeros((5, 3))
        assert objective_value(model, mu, controls, goal) \
            == pytest.approx(0.0, abs=1e-18)

    def test_single_step_terminal_distance(self, model):
        goal = np.array([0.0, 0.0, 0.0])
        mu = np.array([3.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        controls = np.zeros((1, 3))
        assert objective_value(model, mu, controls, goal) == pytest.approx(9.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_quadratic_form_equals_direct(self, model, seed):
        # (P, q) evaluation vs direct evaluation on the rolled-out mean
        rng = np.random.default_rng(seed)
        T = 8
        mu = rng.normal(size=6) * 100
        goal = rng.normal(size=3) * 100
        goal[2] = 0.0
        P, q, const = objective_quadratic(model, mu, T, goal)
        for _ in range(10):
            x = rng.normal(size=2 * T) * 1000
            controls = np.zeros((T, 3))
            controls[:, :2] = x.reshape(T, 2)
            direct = objective_value(model, mu, controls, goal)
            quad = 0.5 * x @ P @ x + q @ x + const
            assert quad == pytest.approx(direct, rel=1e-9, abs=1e-6)


class TestBuildRestrictedQp:
    def test_row_count_no_obstacles(self):
        params = PlannerParams(horizon=2)
        qp = build_restricted_qp(small_model(), params, static_belief(0, 0),
                                 [], GoalRegion(center=[10, 0, 0],
                                                half_extents=[1, 1]), {})
        assert qp.G.shape == (16, 4)          # 8 octagon rows per step
        assert np.all(qp.upper == params.u_max)
        assert np.all(qp.lower == -params.u_max)

    def test_assigned_face_respected(self):
        # unit cube straddling the straight path; keep +x side
        model = small_model()
        params = PlannerParams(horizon=6, u_max=50.0, speed_max=16.0,
                               clearance=0.5)
        cube = Cuboid.from_box([3.0, 0.0, 0.5], [0.5, 0.5, 0.5])
        plus_x = int(np.argmax(cube.normals[:, 0]))
        faces = {(tau, 0): plus_x for tau in range(6)}
        goal = GoalRegion(center=[6.0, 0.0, 0.0], half_extents=[0.5, 0.5])
        belief = static_belief(4.5, 0.0)
        qp = build_restricted_qp(model, params, belief, [cube], goal, faces)
        sol = solve_qp(qp)
        controls = np.zeros((6, 3))
        controls[:, :2] = sol.x.reshape(6, 2)
        means = rollout_mean(model, belief.mean, controls)
        for tau in range(6):
            slack = cube.normals[plus_x] @ means[tau, :3] \
                - cube.offsets[plus_x]
            assert slack >= 0.5 - 1e-6

    def test_control_bound_active(self):
        # far goal, tiny horizon: unconstrained optimum wants |u| > u_max
        model = small_model()
        params = PlannerParams(horizon=2, u_max=6000.0, speed_max=1e6)
        goal = GoalRegion(center=[1e5, 0.0, 0.0], half_extents=[1.0, 1.0])
        qp = build_restricted_qp(model, params, static_belief(0, 0), [],
                                 goal, {})
        sol = solve_qp(qp)
        assert np.max(np.abs(sol.x)) == pytest.approx(6000.0, abs=1e-6)
        assert np.any(sol.duals_upper > 0.0) or np.any(sol.duals_lower > 0.0)


class TestAssignFaces:
    def test_clear_path_unconstrained(self, box_obstacle):
        pts = np.tile([10.0, 10.0, 0.0], (20, 1))
        assert assign_faces(pts, [box_obstacle], 0.5) == {}

    def test_center_tie_break_lowest_index(self):
        cube = Cuboid.from_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        faces = assign_faces(np.zeros((1, 3)), [cube], 0.5)
        assert (0, 0) in faces
        i = faces[(0, 0)]
        planar = [j for j in range(6)
                  if abs(cube.normals[j, 0]) + abs(cube.normals[j, 1]) > 1e-9]
        assert i == min(planar)
        # slack at the center is minus the half-extent
        assert cube.normals[i] @ np.zeros(3) - cube.offsets[i] \
            == pytest.approx(-1.0)

    def test_just_inside_plus_y(self):
        cube = Cuboid.from_box([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        plus_y = int(np.argmax(cube.normals[:, 1]))
        faces = assign_faces(np.array([[0.0, 0.95, 0.0]]), [cube], 0.5)
        assert faces[(0, 0)] == plus_y


class TestPlanTrajectory:
    def test_obstacle_free_straight_run(self, model):
        goal = GoalRegion(center=[500.0, 100.0, 0.0], half_extents=[60, 60])
        belief = GaussianBelief(
            mean=[281.0, 925.0, 0.0, 0.0, 0.0, 0.0],
            cov=np.diag([200, 200, 1e-10, 20, 20, 1e-10]))
        plan = plan_trajectory(model, PlannerParams(horizon=50), belief, [],
                               goal)
        assert plan.feasible
        zero = objective_value(model, np.asarray(belief.mean),
                               np.zeros((50, 3)), np.asarray(goal.center))
        assert plan.objective <= zero

    def test_initialized_in_goal(self, model):
        goal = GoalRegion(center=[500.0, 100.0, 0.0], half_extents=[60, 60])
        belief = GaussianBelief(
            mean=[500.0, 100.0, 0.0, 0.0, 0.0, 0.0],
            cov=np.diag([1.0, 1.0, 1e-12, 0.1, 0.1, 1e-12]))
        plan = plan_trajectory(model, PlannerParams(horizon=20), belief, [],
                               goal)
        assert plan.feasible
        assert plan.objective == pytest.approx(0.0, abs=1e-6)
        assert np.abs(plan.controls).max() < 1.0

    def test_reference_instance_is_feasible(self, model, belief_far, goal,
                                            box_obstacle):
        plan = plan_trajectory(model, PlannerParams(horizon=50), belief_far,
                               [box_obstacle], goal)
        assert plan.feasible
        slacks = all_face_slacks(box_obstacle, plan.means[:, :3])
        assert np.min(np.max(slacks, axis=1)) >= 0.5 - 1e-6
        assert np.abs(plan.controls).max() <= 6000.0 + 1e-9
        assert np.linalg.norm(plan.means[:, 3:5], axis=1).max() <= 16.0 + 1e-9

    def test_means_match_rollout(self, model, belief_far, goal, box_obstacle):
        plan = plan_trajectory(model, PlannerParams(horizon=30), belief_far,
                               [box_obstacle], goal)
        ref = rollout_mean(model, np.asarray(belief_far.mean), plan.controls)
        assert np.abs(plan.means - ref).max() <= 1e-9

    def test_covs_control_independent(self, model, belief_far, goal,
                                      box_obstacle):
        plan = plan_trajectory(model, PlannerParams(horizon=10), belief_far,
                               [box_obstacle], goal)
        ref = rollout_cov(model, np.asarray(belief_far.cov), 10)
        assert np.allclose(plan.covs, ref, atol=1e-12)

    def test_deterministic(self, model, belief_far, goal, box_obstacle):
        p1 = plan_trajectory(model, PlannerParams(horizon=25), belief_far,
                             [box_obstacle], goal)
        p2 = plan_trajectory(model, PlannerParams(horizon=25), belief_far,
                             [box_obstacle], goal)
        assert np.array_equal(p1.controls, p2.controls)


def small_instance(seed):
    """T=4 planning instance with one cube near the straight-line path."""
    rng = np.random.default_rng(seed)
    model = small_model()
    params = PlannerParams(horizon=4, u_max=30.0, speed_max=5.0,
                           clearance=0.2)
    start = np.array([0.0, 0.0, 0.0, 1.0 + rng.uniform(0, 1.5),
                      rng.uniform(-0.5, 0.5), 0.0])
    belief = GaussianBelief(mean=start,
                            cov=np.diag([1, 1, 1e-12, 0.1, 0.1, 1e-12]))
    cube = Cuboid.from_box(
        [rng.uniform(2.0, 4.0), rng.uniform(-0.5, 0.5), 0.5],
        [rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9), 0.5])
    goal = GoalRegion(center=[8.0, 0.0, 0.0], half_extents=[0.5, 0.5])
    return model, params, belief, cube, goal


class TestExhaustivePlan:
    def test_size_guard(self, model, belief_far, goal, box_obstacle):
        with pytest.raises(InstanceTooLargeError):
            exhaustive_plan(model, PlannerParams(horizon=50), belief_far,
                            [box_obstacle], goal)

    def test_obstacle_free_matches_heuristic(self):
        model, params, belief, _, goal = small_instance(0)
        heur = plan_trajectory(model, params, belief, [], goal)
        ex = exhaustive_plan(model, params, belief, [], goal)
        assert ex.objective == pytest.approx(heur.objective, rel=1e-9)

    def test_goal_inside_obstacle_still_feasible(self):
        # terminal attraction is soft: no hard terminal constraint exists
        model = small_model()
        params = PlannerParams(horizon=3, u_max=30.0, speed_max=5.0,
                               clearance=0.2)
        cube = Cuboid.from_box([8.0, 0.0, 0.5], [1.0, 1.0, 0.5])
        goal = GoalRegion(center=[8.0, 0.0, 0.0], half_extents=[0.5, 0.5])
        belief = static_belief(0.0, 0.0)
        plan = exhaustive_plan(model, params, belief, [cube], goal)
        assert plan.feasible

    @pytest.mark.parametrize("seed", range(5))
    def test_heuristic_near_optimal(self, seed):
        model, params, belief, cube, goal = small_instance(seed)
        heur = plan_trajectory(model, params, belief, [cube], goal)
        ex = exhaustive_plan(model, params, belief, [cube], goal)
        if ex.feasible:
            assert heur.feasible
            assert heur.objective <= 1.05 * ex.objective + 1e-9
