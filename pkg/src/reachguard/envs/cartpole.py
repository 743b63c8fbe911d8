"""Cartpole swing-up on a track bounded by walls at +-4 m."""

from __future__ import annotations

import numpy as np

from ..robots import CartpoleSpec, wrap_angle
from ..zonogeom import RotBox
from .base import GOAL, SAFE_STOP, TIMEOUT, RobotEnv, World


def reward_cartpole(x, track: float = 4.0) -> float:
    """Upright bonus, a push toward the track center and an in-track bonus."""
    p, pd, th = float(x[0]), float(x[1]), float(x[2])
    r1 = np.cos(th) / 2.0 + 0.5
    r2 = -0.1 * np.sign(p) * np.sign(pd)
    r3 = -0.05 * abs(p) + (30.0 if -track <= p <= track else -30.0)
    return float(r1 + r2 + r3)


class CartpoleEnv(RobotEnv):
    """Walls are 1-D boxes beyond ``+-track``; the swing-up goal is judged at
    the end of the episode (the episode does not stop when the pole is up).

    Args:
        spec: cartpole reach-set settings.
        track: half-length of the track.
        max_iterations: planning iterations per episode.
        spawn_p, spawn_v: ranges of the random initial cart position and speed.
        spawn_margin: clearance kept between the braking stop point and a wall.
        upright_tol: pole angle from upright counted as a completed swing-up.
    """

    obs_scale = np.array([4.0, 5.0, 1.0, 1.0, 10.0])
    obs_dim = 5

    def __init__(self, spec: CartpoleSpec | None = None, track: float = 4.0, max_iterations: int = 100,
                 spawn_p: float = 2.5, spawn_v: float = 1.0, spawn_theta: float = 0.5,
                 spawn_thetadot: float = 0.5, spawn_margin: float = 1.0, upright_tol: float = 0.3,
                 wall_thickness: float = 1.0):
        self.spec = spec or CartpoleSpec()
        self.track = float(track)
        self.max_iterations = int(max_iterations)
        self.spawn_p, self.spawn_v = float(spawn_p), float(spawn_v)
        self.spawn_theta, self.spawn_thetadot = float(spawn_theta), float(spawn_thetadot)
        self.spawn_margin = float(spawn_margin)
        self.upright_tol = float(upright_tol)
        self.wall_thickness = float(wall_thickness)

    def walls(self) -> list:
        t = self.wall_thickness
        return [RotBox([self.track + t / 2], [t / 2]), RotBox([-self.track - t / 2], [t / 2])]

    def stopping_distance(self, v: float) -> float:
        """Distance covered by the braking plan from cart speed ``v``."""
        k = np.array([v, 0.0, 0.0])
        return float(abs(self.spec.plan(self.spec.timing.t_fin, k)[0][0]))

    def feasible_start(self, x) -> bool:
        reach = abs(x[0]) + self.stopping_distance(x[1]) + self.spec.cart_width / 2
        return reach + self.spawn_margin < self.track

    def spawn(self, seed: int) -> World:
        rng = np.random.default_rng(seed)
        for _ in range(100):
            x0 = np.array([
                rng.uniform(-self.spawn_p, self.spawn_p),
                rng.uniform(-self.spawn_v, self.spawn_v),
                wrap_angle(np.pi + rng.uniform(-self.spawn_theta, self.spawn_theta)),
                rng.uniform(-self.spawn_thetadot, self.spawn_thetadot),
            ])
            if self.feasible_start(x0):
                return World(x0, self.walls(), (np.array([-self.track]), np.array([self.track])), 0.0, seed)
        raise RuntimeError("no feasible cartpole start after 100 draws")

    def observe(self, x, world):
        return np.array([x[0], x[1], np.sin(x[2]), np.cos(x[2]), x[3]])

    def reward(self, x, obs, world):
        return reward_cartpole(x, self.track)

    def goal_reached(self, x, world):
        return False

    def upright(self, x) -> bool:
        return abs(float(wrap_angle(x[2]))) <= self.upright_tol

    def final_status(self, x, world):
        if self.upright(x):
            return GOAL
        return SAFE_STOP if self.speed(x) < self.stop_speed else TIMEOUT

    def speed(self, x):
        return abs(float(x[1]))

    def footprint_boxes(self, states):
        s = np.atleast_2d(states)
        return s[:, :1], np.array([self.spec.cart_width / 2]), None
