"""Car on a three-lane road with box obstacles."""

from __future__ import annotations

import numpy as np

from ..robots import CarSpec
from ..zonogeom import RotBox
from .base import RobotEnv, World

SENTINEL = (100.0, 0.0)


def _rho(y, center):
    return 5.0 * np.exp(-1.0 / ((y - center) ** 2 + 1.0))


def reward_car(x, obs, goal: float = 500.0) -> float:
    """Speed, lane and goal terms; ``obs[1]`` is the lateral gap to the nearest obstacle ahead."""
    p_long, p_lat, v = float(x[0]), float(x[1]), float(x[3])
    r_speed = np.exp(-1.0 / (v * v + 1.0)) - 3.7
    y_obs = p_lat + float(obs[1])
    if p_lat < 2.0:
        r_lane = _rho(y_obs, 2.0) - 2.0 * abs(p_lat - 2.0) - 4.0
    elif p_lat < 10.0:
        r_lane = _rho(p_lat, 0.0) - 4.0
    else:
        r_lane = _rho(y_obs, 10.0) - 2.0 * abs(p_lat - 10.0) - 4.0
    r_goal = 100.0 if p_long >= goal else 0.0
    return float(r_speed + r_lane + r_goal)


class CarEnv(RobotEnv):
    """Straight road of width ``road_width`` with lanes at ``lanes``.

    Obstacle slots are spaced ``slot_spacing`` apart starting at
    ``first_slot``; each lane of a slot holds an axis-aligned
    ``obstacle_size`` box with probability ``obstacle_prob``, never all lanes
    at once. Walls bound the road with a ``shoulder`` beyond each edge.
    """

    obs_scale = np.array([100.0, 12.0, 100.0, 12.0, 5.0, 12.0])
    obs_dim = 6

    def __init__(self, spec: CarSpec | None = None, goal: float = 500.0, road_width: float = 12.0,
                 lanes=(2.0, 6.0, 10.0), obstacle_size=(4.0, 2.0), slot_spacing: float = 40.0,
                 first_slot: float = 40.0, obstacle_prob: float = 0.35, shoulder: float = 1.5,
                 max_iterations: int = 300):
        self.spec = spec or CarSpec()
        self.goal = float(goal)
        self.road_width = float(road_width)
        self.lanes = tuple(float(v) for v in lanes)
        self.obstacle_half = np.asarray(obstacle_size, float) / 2.0
        self.slot_spacing = float(slot_spacing)
        self.first_slot = float(first_slot)
        self.obstacle_prob = float(obstacle_prob)
        self.shoulder = float(shoulder)
        self.max_iterations = int(max_iterations)

    def walls(self) -> list:
        length = self.goal + 200.0
        cx = length / 2.0 - 50.0
        lo = -self.shoulder - 0.5
        hi = self.road_width + self.shoulder + 0.5
        return [RotBox([cx, lo], [length / 2, 0.5]), RotBox([cx, hi], [length / 2, 0.5])]

    def spawn(self, seed: int) -> World:
        rng = np.random.default_rng(seed)
        obstacles = []
        s = self.first_slot
        while s < self.goal + self.slot_spacing:
            blocked = rng.random(len(self.lanes)) < self.obstacle_prob
            if blocked.all():
                blocked[rng.integers(len(self.lanes))] = False
            for lane, b in zip(self.lanes, blocked):
                if b:
                    obstacles.append(RotBox([s, lane], self.obstacle_half))
            s += self.slot_spacing
        lane = self.lanes[rng.integers(len(self.lanes))]
        x0 = np.array([0.0, lane, 0.0, 0.0, 0.0])
        bounds = (np.array([-50.0, -self.shoulder]), np.array([self.goal + 150.0, self.road_width + self.shoulder]))
        return World(x0, obstacles + self.walls(), bounds, self.goal, seed,
                     {"n_walls": 2, "road_obstacles": obstacles})

    def observe(self, x, world):
        road = world.info.get("road_obstacles", world.obstacles)
        ahead = sorted(((o.center[0] - x[0], o.center[1] - x[1]) for o in road if o.center[0] - x[0] > 0),
                       key=lambda d: d[0])
        ahead = (ahead + [SENTINEL, SENTINEL])[:2]
        return np.array([ahead[0][0], ahead[0][1], ahead[1][0], ahead[1][1], x[3], x[1]])

    def reward(self, x, obs, world):
        return reward_car(x, obs, world.goal)

    def goal_reached(self, x, world):
        return float(x[0]) >= world.goal

    def speed(self, x):
        return abs(float(x[3]))

    def footprint_boxes(self, states):
        s = np.atleast_2d(states)
        c, sn = np.cos(s[:, 2]), np.sin(s[:, 2])
        R = np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)
        return s[:, :2], self.spec.half, R
