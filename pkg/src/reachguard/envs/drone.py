"""Quadrotor flying down a cluttered 100 m tunnel along +x."""

from __future__ import annotations

import numpy as np

from ..robots import DroneSpec
from ..zonogeom import RotBox
from .base import RobotEnv, World, ray_box_distance


def ray_directions() -> np.ndarray:
    """29 unit rays: 9 azimuths (7 forward, 2 sideways) at 3 low elevations,
    plus straight up and straight down (the polar rays repeat across azimuths)."""
    az = np.concatenate([np.linspace(-3 * np.pi / 16, 3 * np.pi / 16, 7), [-np.pi / 2, np.pi / 2]])
    el = np.array([-np.pi / 12, 0.0, np.pi / 12])
    A, E = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], -1).reshape(-1, 3)
    return np.vstack([dirs, [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]])


RAYS = ray_directions()


def reward_drone(x, obs, goal: float = 97.5) -> float:
    v, e_goal, dist = obs[0:3], obs[3:6], obs[6:]
    r_v = 0.5 * float(e_goal @ v) - 2.0
    mu = float(np.mean(np.sort(dist)[:8]))
    r_obs = np.arctan(mu) ** 4 - 4.0
    r_goal = 100.0 if float(x[0]) >= goal else 0.0
    return float(r_v + r_obs + r_goal)


class DroneEnv(RobotEnv):
    """Tunnel ``x in [0, length]``, ``|y| <= half_width``, ``z in [0, height]``.

    Walls close the sides, floor, ceiling and the start end; ``n_obstacles``
    randomly yawed boxes with edges in ``edge_range`` fill ``x >= clear_start``.
    """

    obs_scale = np.concatenate([np.full(3, 5.0), np.ones(3), np.full(29, 10.0)])
    obs_dim = 35

    def __init__(self, spec: DroneSpec | None = None, length: float = 100.0, half_width: float = 5.0,
                 height: float = 10.0, n_obstacles: int = 20, edge_range=(1.0, 3.0), clear_start: float = 15.0,
                 goal: float = 97.5, ray_range: float = 10.0, max_iterations: int = 150):
        self.spec = spec or DroneSpec()
        self.length, self.half_width, self.height = float(length), float(half_width), float(height)
        self.n_obstacles = int(n_obstacles)
        self.edge_range = tuple(float(v) for v in edge_range)
        self.clear_start = float(clear_start)
        self.goal = float(goal)
        self.ray_range = float(ray_range)
        self.max_iterations = int(max_iterations)

    def walls(self) -> list:
        L, W, H, t = self.length, self.half_width, self.height, 0.5
        cx = L / 2
        return [
            RotBox([cx, W + t, H / 2], [L / 2 + 10, t, H / 2 + 1]),
            RotBox([cx, -W - t, H / 2], [L / 2 + 10, t, H / 2 + 1]),
            RotBox([cx, 0.0, -t], [L / 2 + 10, W + 1, t]),
            RotBox([cx, 0.0, H + t], [L / 2 + 10, W + 1, t]),
            RotBox([-1.0 - t, 0.0, H / 2], [t, W + 1, H / 2 + 1]),
        ]

    def spawn(self, seed: int) -> World:
        rng = np.random.default_rng(seed)
        obstacles = []
        for _ in range(self.n_obstacles):
            half = rng.uniform(*self.edge_range, size=3) / 2
            c = np.array([rng.uniform(self.clear_start, self.length - 2.0),
                          rng.uniform(-self.half_width + 1.0, self.half_width - 1.0),
                          rng.uniform(1.0, self.height - 1.0)])
            yaw = rng.uniform(-np.pi, np.pi)
            R = np.array([[np.cos(yaw), -np.sin(yaw), 0.0], [np.sin(yaw), np.cos(yaw), 0.0], [0.0, 0.0, 1.0]])
            obstacles.append(RotBox(c, half, R))
        x0 = self.spec.base_state()
        x0[:3] = [2.5, 0.0, self.height / 2]
        bounds = (np.array([0.0, -self.half_width, 0.0]), np.array([self.length, self.half_width, self.height]))
        return World(x0, obstacles + self.walls(), bounds, self.goal, seed)

    def goal_point(self) -> np.ndarray:
        return np.array([self.length, 0.0, self.height / 2])

    def observe(self, x, world):
        p = np.asarray(x[:3], float)
        e = self.goal_point() - p
        e = e / max(np.linalg.norm(e), 1e-9)
        dist = np.full(RAYS.shape[0], self.ray_range)
        for o in world.obstacles:
            dist = np.minimum(dist, ray_box_distance(p, RAYS, o, self.ray_range))
        return np.concatenate([x[3:6], e, dist])

    def reward(self, x, obs, world):
        return reward_drone(x, obs, world.goal)

    def goal_reached(self, x, world):
        return float(x[0]) >= world.goal

    def speed(self, x):
        return float(np.linalg.norm(x[3:6]))

    def footprint_boxes(self, states):
        s = np.atleast_2d(states)
        return s[:, :3], self.spec.half, s[:, 6:15].reshape(-1, 3, 3)
