"""Desk-scale deterministic navigation environments.

A kinematic bicycle in a randomized disk-obstacle field, a fixed symmetric
two-route toy (one disk between start and goal, so exactly two homotopy
classes), and a planar double integrator. All dynamics and costs are
vectorized over arbitrary leading batch dimensions and are pure functions of
their inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DomainError, FieldGenerationError


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    return -(np.mod(-np.asarray(theta) + np.pi, 2.0 * np.pi) - np.pi)


@dataclass(frozen=True)
class TaskCostWeights:
    """Weights of the running cost: squared goal distance, crash indicator,
    squared control effort."""

    w_goal: float = 0.704
    w_obstacle: float = 479.0
    w_control: float = 0.08

    def __post_init__(self):
        if min(self.w_goal, self.w_obstacle, self.w_control) < 0:
            raise ConfigError("cost weights must be nonnegative")


@dataclass(frozen=True)
class ObstacleField:
    """Disk obstacles in a rectangular workspace, plus start and goal points."""

    centers: np.ndarray            # (K, 2)
    radii: np.ndarray              # (K,)
    bounds: Tuple[float, float, float, float]   # xmin, ymin, xmax, ymax
    start: np.ndarray              # (2,)
    goal: np.ndarray               # (2,)

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float).reshape(-1))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(2))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).reshape(2))
        if self.centers.shape[0] != self.radii.shape[0]:
            raise DomainError("obstacle centers/radii length mismatch")

    @property
    def num_obstacles(self) -> int:
        return self.radii.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "start": self.start.tolist(),
            "goal": self.goal.tolist(),
            "obstacles": [{"center": c.tolist(), "radius": float(r)}
                          for c, r in zip(self.centers, self.radii)],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ObstacleField":
        obstacles = d.get("obstacles", [])
        centers = np.array([o["center"] for o in obstacles], dtype=float).reshape(-1, 2)
        radii = np.array([o["radius"] for o in obstacles], dtype=float)
        return cls(centers=centers, radii=radii, bounds=tuple(d["bounds"]),
                   start=np.asarray(d["start"]), goal=np.asarray(d["goal"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ObstacleField":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


DIFFICULTY_PRESETS = {
    # radius range (m), pairwise surface clearance (m)
    "easy": ((0.2, 0.5), 0.75),
    "hard": ((0.2, 0.6), 0.5),
}

DEFAULT_BOUNDS = (-7.0, -7.0, 7.0, 7.0)
MAX_GENERATION_ATTEMPTS = 10_000


def generate_obstacle_field(
    difficulty: str,
    rng: np.random.Generator,
    *,
    num_obstacles: int = 50,
    bounds: Tuple[float, float, float, float] = DEFAULT_BOUNDS,
    min_start_goal_separation: float = 8.0,
    start_goal_clearance: float = 0.8,
    wall_margin: float = 0.8,
    seed: Optional[int] = None,
) -> ObstacleField:
    """Rejection-sample a start/goal pair and up to ``num_obstacles`` disks.

    Start and goal are drawn first (inside the wall margin, separated by at
    least ``min_start_goal_separation``); obstacles are then placed one at a
    time, each keeping the difficulty preset's surface clearance from every
    placed obstacle and ``start_goal_clearance`` from both endpoints.
    Deterministic per rng state. Exceeding 1e4 total rejection attempts
    aborts generation.
    """
    if difficulty not in DIFFICULTY_PRESETS:
        raise ConfigError(f"unknown difficulty {difficulty!r}; valid: {', '.join(DIFFICULTY_PRESETS)}")
    (r_lo, r_hi), clearance = DIFFICULTY_PRESETS[difficulty]
    xmin, ymin, xmax, ymax = bounds

    def fail(stage: str):
        label = f" (seed {seed})" if seed is not None else ""
        raise FieldGenerationError(
            f"obstacle-field generation exhausted {MAX_GENERATION_ATTEMPTS} attempts "
            f"during {stage}{label}")

    attempts = 0
    lo = np.array([xmin + wall_margin, ymin + wall_margin])
    hi = np.array([xmax - wall_margin, ymax - wall_margin])
    if np.any(hi <= lo):
        raise ConfigError("workspace too small for the wall margin")
    span = np.hypot(hi[0] - lo[0], hi[1] - lo[1])
    if span < min_start_goal_separation:
        raise ConfigError("workspace cannot hold the requested start/goal separation")

    start = lo + rng.random(2) * (hi - lo)
    while True:
        attempts += 1
        if attempts > MAX_GENERATION_ATTEMPTS:
            fail("start/goal placement")
        goal = lo + rng.random(2) * (hi - lo)
        if np.hypot(*(goal - start)) >= min_start_goal_separation:
            break

    centers: list[np.ndarray] = []
    radii: list[float] = []
    placed = np.zeros((0, 2))
    placed_r = np.zeros(0)
    while len(radii) < num_obstacles:
        attempts += 1
        if attempts > MAX_GENERATION_ATTEMPTS:
            fail("obstacle placement")
        r = r_lo + rng.random() * (r_hi - r_lo)
        c = np.array([xmin + r, ymin + r]) + rng.random(2) * np.array(
            [xmax - xmin - 2 * r, ymax - ymin - 2 * r])
        if placed_r.size:
            gaps = np.hypot(*(placed - c).T) - placed_r - r
            if gaps.min() < clearance:
                continue
        if (np.hypot(*(c - start)) - r < start_goal_clearance
                or np.hypot(*(c - goal)) - r < start_goal_clearance):
            continue
        centers.append(c)
        radii.append(r)
        placed = np.vstack([placed, c[None]])
        placed_r = np.append(placed_r, r)

    return ObstacleField(centers=np.array(centers).reshape(-1, 2), radii=np.array(radii),
                         bounds=bounds, start=start, goal=goal)


def task_cost(env, state, control, weights: Optional[TaskCostWeights] = None):
    """Running cost w_goal * ||pos - goal||^2 + w_obstacle * crash + w_control * ||u||^2."""
    w = weights if weights is not None else env.weights
    state = np.asarray(state, dtype=float)
    control = np.asarray(control, dtype=float)
    pos = state[..., :2]
    d2 = np.sum((pos - env.field.goal) ** 2, axis=-1)
    hit = env.collided(state).astype(float)
    u2 = np.sum(control * control, axis=-1)
    return w.w_goal * d2 + w.w_obstacle * hit + w.w_control * u2


class _PlanarEnv:
    """Shared geometry: disk collisions, goal distance, running cost pieces."""

    def __init__(self, field: ObstacleField, weights: TaskCostWeights, inflation_radius: float = 0.0):
        self.field = field
        self.weights = weights
        self.inflation_radius = float(inflation_radius)

    def collided(self, state):
        pos = np.asarray(state, dtype=float)[..., :2]
        if self.field.num_obstacles == 0:
            return np.zeros(pos.shape[:-1], dtype=bool)
        d = np.linalg.norm(pos[..., None, :] - self.field.centers, axis=-1)
        return np.any(d < self.field.radii + self.inflation_radius, axis=-1)

    def goal_distance(self, state):
        pos = np.asarray(state, dtype=float)[..., :2]
        return np.linalg.norm(pos - self.field.goal, axis=-1)

    def state_cost(self, state):
        state = np.asarray(state, dtype=float)
        d2 = np.sum((state[..., :2] - self.field.goal) ** 2, axis=-1)
        return self.weights.w_goal * d2 + self.weights.w_obstacle * self.collided(state)

    def control_cost(self, control):
        control = np.asarray(control, dtype=float)
        return self.weights.w_control * np.sum(control * control, axis=-1)


@dataclass(frozen=True)
class BicycleParams:
    dt: float = 0.1
    wheelbase: float = 1.0
    accel_limit: float = 2.0
    steer_limit: float = 0.6
    v_min: float = 0.0
    v_max: float = 3.0

    def __post_init__(self):
        if self.dt <= 0 or self.wheelbase <= 0:
            raise ConfigError("dt and wheelbase must be positive")
        if self.steer_limit > 1.4:
            raise ConfigError("steer limit must stay below the tan singularity margin (1.4 rad)")


def bicycle_step(state, control, dt: float, wheelbase: float,
                 params: Optional[BicycleParams] = None):
    """Explicit-Euler kinematic bicycle step; controls are clamped, never rejected.

    State is (x, y, theta, v); control is (acceleration, steering angle).
    """
    p = params if params is not None else BicycleParams(dt=dt, wheelbase=wheelbase)
    s = np.asarray(state, dtype=float)
    u = np.asarray(control, dtype=float)
    a = np.clip(u[..., 0], -p.accel_limit, p.accel_limit)
    steer = np.clip(u[..., 1], -p.steer_limit, p.steer_limit)
    x, y, theta, v = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    out = np.empty_like(s)
    out[..., 0] = x + v * np.cos(theta) * dt
    out[..., 1] = y + v * np.sin(theta) * dt
    out[..., 2] = wrap_angle(theta + v / p.wheelbase * np.tan(steer) * dt)
    out[..., 3] = np.clip(v + a * dt, p.v_min, p.v_max)
    return out


class BicycleEnv(_PlanarEnv):
    """Kinematic bicycle (x, y, heading, speed) with acceleration/steering control."""

    state_dim = 4
    control_dim = 2

    def __init__(self, field: ObstacleField, weights: TaskCostWeights = TaskCostWeights(),
                 params: BicycleParams = BicycleParams(), inflation_radius: float = 0.0,
                 success_radius: float = 0.3):
        super().__init__(field, weights, inflation_radius)
        self.params = params
        self.success_radius = float(success_radius)
        self.control_lower = np.array([-params.accel_limit, -params.steer_limit])
        self.control_upper = np.array([params.accel_limit, params.steer_limit])

    def initial_state(self) -> np.ndarray:
        heading = np.arctan2(*(self.field.goal - self.field.start)[::-1])
        return np.array([self.field.start[0], self.field.start[1], heading, 0.0])

    def step(self, state, control):
        return bicycle_step(state, control, self.params.dt, self.params.wheelbase, self.params)


class DoubleIntegratorEnv(_PlanarEnv):
    """Planar double integrator (x, y, vx, vy) with acceleration control."""

    state_dim = 4
    control_dim = 2

    def __init__(self, field: Optional[ObstacleField] = None,
                 weights: TaskCostWeights = TaskCostWeights(w_goal=1.0, w_obstacle=250.0, w_control=0.05),
                 dt: float = 0.1, accel_limit: float = 2.0, inflation_radius: float = 0.0,
                 success_radius: float = 0.3):
        if field is None:
            field = ObstacleField(centers=np.zeros((0, 2)), radii=np.zeros(0),
                                  bounds=(-5.0, -5.0, 5.0, 5.0),
                                  start=np.array([-4.0, 0.0]), goal=np.array([4.0, 0.0]))
        super().__init__(field, weights, inflation_radius)
        self.dt = float(dt)
        self.accel_limit = float(accel_limit)
        self.success_radius = float(success_radius)
        self.control_lower = np.array([-accel_limit, -accel_limit])
        self.control_upper = np.array([accel_limit, accel_limit])

    def initial_state(self) -> np.ndarray:
        return np.array([self.field.start[0], self.field.start[1], 0.0, 0.0])

    def step(self, state, control):
        s = np.asarray(state, dtype=float)
        a = np.clip(np.asarray(control, dtype=float), -self.accel_limit, self.accel_limit)
        out = np.empty_like(s)
        out[..., 0] = s[..., 0] + s[..., 2] * self.dt
        out[..., 1] = s[..., 1] + s[..., 3] * self.dt
        out[..., 2] = s[..., 2] + a[..., 0] * self.dt
        out[..., 3] = s[..., 3] + a[..., 1] * self.dt
        return out


# Symmetric two-route toy: a single disk dead ahead of the start, goal behind it.
TOY_WEIGHTS = TaskCostWeights(w_goal=1.0, w_obstacle=250.0, w_control=0.05)
TOY_FIELD = ObstacleField(
    centers=np.array([[2.5, 0.0]]),
    radii=np.array([0.8]),
    bounds=(-1.0, -3.0, 6.0, 3.0),
    start=np.array([0.0, 0.0]),
    goal=np.array([5.0, 0.0]),
)


def bimodal_toy(weights: TaskCostWeights = TOY_WEIGHTS) -> BicycleEnv:
    """Fixed mirror-symmetric navigation task with exactly two passing sides."""
    return BicycleEnv(field=TOY_FIELD, weights=weights)


def success_check(result, env, *, success_radius: Optional[float] = None) -> str:
    """Classify a completed episode as ``success``, ``crash``, or ``timeout``.

    Success requires reaching strictly within the success radius before any
    obstacle penetration; a state exactly at the radius does not count.
    Accepts a rollout result or a raw state trace.
    """
    states = np.asarray(getattr(result, "states", result), dtype=float)
    radius = env.success_radius if success_radius is None else success_radius
    hits = env.collided(states)
    dists = env.goal_distance(states)
    hit_idx = int(np.argmax(hits)) if hits.any() else None
    goal_idx = int(np.argmax(dists < radius)) if (dists < radius).any() else None
    if goal_idx is not None and (hit_idx is None or goal_idx < hit_idx):
        return "success"
    if hit_idx is not None:
        return "crash"
    return "timeout"
