"""Episodic worlds for the cartpole, car and drone tasks."""

from .base import (COLLISION, ERROR, GOAL, SAFE_STOP, TERMINAL_STATUSES, TIMEOUT, EpisodeRecord, RobotEnv,
                   World, boxes_overlap, ray_box_distance, run_episode)
from .car import CarEnv, reward_car
from .cartpole import CartpoleEnv, reward_cartpole
from .drone import RAYS, DroneEnv, reward_drone

ENVS = {"cartpole": CartpoleEnv, "car": CarEnv, "drone": DroneEnv}


def make_env(robot: str, spec=None, **kwargs) -> RobotEnv:
    try:
        cls = ENVS[robot]
    except KeyError:
        raise ValueError(f"unknown robot {robot!r}; expected one of {sorted(ENVS)}") from None
    return cls(spec=spec, **kwargs)


__all__ = [
    "COLLISION", "ERROR", "GOAL", "SAFE_STOP", "TERMINAL_STATUSES", "TIMEOUT", "EpisodeRecord", "RobotEnv",
    "World", "boxes_overlap", "ray_box_distance", "run_episode", "CarEnv", "reward_car", "CartpoleEnv",
    "reward_cartpole", "RAYS", "DroneEnv", "reward_drone", "ENVS", "make_env",
]
