import json

import numpy as np
import pytest

from otmpc.controllers import ar1_noise, rollout
from otmpc.envs import (
    DIFFICULTY_PRESETS,
    TOY_FIELD,
    BicycleEnv,
    BicycleParams,
    DoubleIntegratorEnv,
    ObstacleField,
    TaskCostWeights,
    bicycle_step,
    bimodal_toy,
    generate_obstacle_field,
    success_check,
    task_cost,
    wrap_angle,
)
from otmpc.errors import ConfigError, FieldGenerationError

from .oracles import verify_field_constraints


class TestBicycleStep:
    def test_rest_is_equilibrium(self):
        s = np.array([1.0, 2.0, 0.5, 0.0])
        out = bicycle_step(s, np.zeros(2), dt=0.1, wheelbase=1.0)
        assert np.allclose(out, s)

    def test_unit_speed_straight_line(self):
        s = np.array([0.0, 0.0, 0.0, 1.0])
        out = bicycle_step(s, np.zeros(2), dt=0.1, wheelbase=1.0)
        assert out[0] == pytest.approx(0.1)
        assert out[1] == pytest.approx(0.0)

    def test_heading_advances_along_current_direction(self):
        theta = 0.7
        s = np.array([0.0, 0.0, theta, 1.0])
        out = bicycle_step(s, np.zeros(2), dt=0.1, wheelbase=1.0)
        assert out[0] == pytest.approx(0.1 * np.cos(theta))
        assert out[1] == pytest.approx(0.1 * np.sin(theta))

    def test_constant_curvature_matches_analytic_rate(self):
        dt, steps = 1e-3, 1000
        s = np.array([0.0, 0.0, 0.0, 1.0])
        for _ in range(steps):
            s = bicycle_step(s, np.array([0.0, 0.2]), dt=dt, wheelbase=1.0)
        expected = np.tan(0.2) * dt * steps  # v/L tan(delta) * t with v = L = 1
        assert s[2] == pytest.approx(expected, abs=1e-3)

    def test_velocity_clamped(self):
        s = np.array([0.0, 0.0, 0.0, 2.9])
        for _ in range(10):
            s = bicycle_step(s, np.array([5.0, 0.0]), dt=0.1, wheelbase=1.0)
        assert s[3] == pytest.approx(3.0)
        s = bicycle_step(np.array([0, 0, 0, 0.05]), np.array([-5.0, 0.0]), dt=0.1, wheelbase=1.0)
        assert s[3] == 0.0

    def test_controls_clamped_not_rejected(self):
        out = bicycle_step(np.array([0, 0, 0, 1.0]), np.array([99.0, 99.0]),
                           dt=0.1, wheelbase=1.0)
        params = BicycleParams()
        expected_theta = wrap_angle(1.0 * np.tan(params.steer_limit) * 0.1)
        assert out[2] == pytest.approx(expected_theta)

    def test_batched_states(self):
        s = np.tile([0.0, 0.0, 0.0, 1.0], (5, 1))
        u = np.tile([0.0, 0.0], (5, 1))
        out = bicycle_step(s, u, dt=0.1, wheelbase=1.0)
        assert out.shape == (5, 4)
        assert np.allclose(out[:, 0], 0.1)

    def test_steer_limit_guard(self):
        with pytest.raises(ConfigError):
            BicycleParams(steer_limit=1.5)


def test_wrap_angle_half_open_interval():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_angle(0.3) == pytest.approx(0.3)


class TestObstacleField:
    def test_easy_preset_ranges(self):
        rng = np.random.default_rng(0)
        field = generate_obstacle_field("easy", rng)
        (lo, hi), clearance = DIFFICULTY_PRESETS["easy"]
        assert (lo, hi) == (0.2, 0.5) and clearance == 0.75
        assert np.all(field.radii >= lo) and np.all(field.radii <= hi)
        for i in range(field.num_obstacles):
            for j in range(i + 1, field.num_obstacles):
                gap = (np.linalg.norm(field.centers[i] - field.centers[j])
                       - field.radii[i] - field.radii[j])
                assert gap >= clearance - 1e-12

    def test_hard_preset(self):
        (lo, hi), clearance = DIFFICULTY_PRESETS["hard"]
        assert (lo, hi) == (0.2, 0.6) and clearance == 0.5

    def test_hundred_seeds_pass_independent_verifier(self):
        for seed in range(100):
            difficulty = "easy" if seed % 2 == 0 else "hard"
            field = generate_obstacle_field(difficulty, np.random.default_rng(seed))
            preset = DIFFICULTY_PRESETS[difficulty]
            problems = verify_field_constraints(field, preset[0], preset[1], 0.8)
            assert problems == [], problems

    def test_deterministic_per_seed(self):
        a = generate_obstacle_field("easy", np.random.default_rng(42))
        b = generate_obstacle_field("easy", np.random.default_rng(42))
        assert np.array_equal(a.centers, b.centers)
        assert np.array_equal(a.radii, b.radii)
        assert np.array_equal(a.start, b.start)
        assert np.array_equal(a.goal, b.goal)

    def test_zero_obstacle_override(self):
        field = generate_obstacle_field("easy", np.random.default_rng(1), num_obstacles=0)
        assert field.num_obstacles == 0
        xmin, ymin, xmax, ymax = field.bounds
        for point in (field.start, field.goal):
            assert xmin <= point[0] <= xmax and ymin <= point[1] <= ymax
        assert np.linalg.norm(field.goal - field.start) >= 8.0

    def test_generation_error_reports_seed(self):
        # far more obstacles than the workspace can hold: the attempt budget
        # runs out during placement
        with pytest.raises(FieldGenerationError, match="seed 7"):
            generate_obstacle_field("hard", np.random.default_rng(7),
                                    num_obstacles=2000, seed=7)

    def test_json_round_trip(self, tmp_path):
        field = generate_obstacle_field("easy", np.random.default_rng(3))
        path = tmp_path / "field.json"
        field.save(path)
        loaded = ObstacleField.load(path)
        assert np.array_equal(loaded.centers, field.centers)
        assert np.array_equal(loaded.radii, field.radii)
        assert loaded.bounds == field.bounds

    def test_unknown_difficulty(self):
        with pytest.raises(ConfigError):
            generate_obstacle_field("extreme", np.random.default_rng(0))


class TestTaskCost:
    def setup_method(self):
        self.env = bimodal_toy()

    def test_zero_at_goal(self):
        state = np.array([5.0, 0.0, 0.0, 0.0])
        assert task_cost(self.env, state, np.zeros(2)) == pytest.approx(0.0)

    def test_indicator_fires_inside_obstacle(self):
        state = np.array([2.5, 0.0, 0.0, 0.0])
        cost = task_cost(self.env, state, np.zeros(2))
        assert cost >= self.env.weights.w_obstacle

    def test_matches_independent_recomputation(self):
        rng = np.random.default_rng(5)
        w = self.env.weights
        for _ in range(50):
            state = rng.uniform(-1, 6, size=4)
            control = rng.uniform(-2, 2, size=2)
            expected = w.w_goal * ((state[0] - 5.0) ** 2 + state[1] ** 2)
            if (state[0] - 2.5) ** 2 + state[1] ** 2 < 0.8 ** 2:
                expected += w.w_obstacle
            expected += w.w_control * (control[0] ** 2 + control[1] ** 2)
            assert task_cost(self.env, state, control) == pytest.approx(expected, abs=1e-12)

    def test_nonnegative_weights_required(self):
        with pytest.raises(ConfigError):
            TaskCostWeights(w_goal=-1.0)


class TestBimodalToy:
    def test_straight_line_crashes(self):
        env = bimodal_toy()
        controls = np.tile([2.0, 0.0], (40, 1))
        result = rollout(env, env.initial_state(), controls)
        assert result.crashed
        assert result.total_cost >= env.weights.w_obstacle

    def test_mirror_symmetry_of_costs(self):
        env = bimodal_toy()
        rng = np.random.default_rng(2)
        controls = np.column_stack([rng.uniform(-2, 2, 25), rng.uniform(-0.6, 0.6, 25)])
        mirrored = controls * np.array([1.0, -1.0])
        a = rollout(env, env.initial_state(), controls)
        b = rollout(env, env.initial_state(), mirrored)
        assert a.total_cost == pytest.approx(b.total_cost, abs=1e-12)
        assert np.allclose(a.states[:, 1], -b.states[:, 1], atol=1e-12)

    def test_random_smooth_rollouts_find_both_passing_sides(self):
        env = bimodal_toy()
        rng = np.random.default_rng(3)
        x0 = env.initial_state()
        driver = rng.standard_normal((2000, 50, 2))
        noise = ar1_noise(driver, np.array([1.0, 0.25]), 0.9)
        controls = np.clip(np.array([1.0, 0.0]) + noise, env.control_lower, env.control_upper)
        sides = set()
        for u in controls:
            result = rollout(env, x0, u)
            past = result.states[:, 0] > 3.3  # beyond the obstacle's far edge
            if not result.crashed and past.any():
                crossing = int(np.argmax(result.states[:, 0] > 2.5))
                sides.add(np.sign(result.states[crossing, 1]))
        assert {1.0, -1.0} <= sides

    def test_initial_state_points_at_goal(self):
        env = bimodal_toy()
        assert np.allclose(env.initial_state(), [0.0, 0.0, 0.0, 0.0])


class TestDoubleIntegrator:
    def test_zero_controls_from_origin(self):
        field = ObstacleField(centers=np.zeros((0, 2)), radii=np.zeros(0),
                              bounds=(-5, -5, 5, 5), start=np.zeros(2),
                              goal=np.array([3.0, 0.0]))
        env = DoubleIntegratorEnv(field=field)
        result = rollout(env, env.initial_state(), np.zeros((10, 2)))
        assert np.all(result.states == 0.0)
        # only the goal-distance terms remain: no control, no obstacle cost
        assert result.total_cost == pytest.approx(11 * env.weights.w_goal * 9.0)

    def test_step_integrates_velocity(self):
        env = DoubleIntegratorEnv()
        s = np.array([0.0, 0.0, 1.0, -0.5])
        out = env.step(s, np.array([2.0, 0.0]))
        assert np.allclose(out, [0.1, -0.05, 1.2, -0.5])


class TestSuccessCheck:
    def setup_method(self):
        self.env = bimodal_toy()

    def test_close_finish_is_success(self):
        states = np.array([[0, 0, 0, 0], [4.9, 0.0, 0, 0]], dtype=float)
        assert success_check(states, self.env) == "success"

    def test_first_step_penetration_is_crash(self):
        states = np.array([[0, 0, 0, 0], [2.5, 0.0, 0, 0]], dtype=float)
        assert success_check(states, self.env) == "crash"

    def test_boundary_distance_is_timeout(self):
        # 0.25 and 4.75 are exact in binary, so the distance equals the
        # radius exactly and the strict inequality must reject it
        states = np.array([[0, 0, 0, 0], [4.75, 0.0, 0, 0]], dtype=float)
        assert float(self.env.goal_distance(states[-1])) == 0.25
        assert success_check(states, self.env, success_radius=0.25) == "timeout"
        assert success_check(states, self.env, success_radius=0.2500001) == "success"

    def test_crash_after_goal_still_success(self):
        states = np.array([[4.9, 0, 0, 0], [2.5, 0, 0, 0]], dtype=float)
        assert success_check(states, self.env) == "success"

    def test_accepts_rollout_result(self):
        env = bimodal_toy()
        result = rollout(env, env.initial_state(), np.zeros((3, 2)))
        assert success_check(result, env) == "timeout"
