"""Evaluation loop and built-in policies shared by the CLI and the tests."""

from __future__ import annotations

import numpy as np

from ..envs import run_episode


def episode_seed(seed: int, episode: int, stream: int = 0) -> int:
    """World seed of ``episode``; training uses stream 0, evaluation stream 1."""
    key = [seed, episode] if stream == 0 else [seed, stream, episode]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


class RandomPolicy:
    """Uniform ``k_des`` over ``K_des``."""

    def __init__(self, spec, seed: int = 0):
        des = spec.K.des_part()
        self.lo, self.hi = des.lo, des.hi
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs) -> np.ndarray:
        return self.rng.uniform(self.lo, self.hi)


class ScriptedPolicy:
    """Constant cruise command: keep the lane (car), fly forward (drone),
    hold position (cartpole)."""

    CRUISE = {"cartpole": (0.0,), "car": (5.0, 0.0), "drone": (2.0, 0.0, 0.0)}

    def __init__(self, spec, seed: int = 0):
        des = spec.K.des_part()
        self.k = np.clip(np.array(self.CRUISE[spec.name], float), des.lo, des.hi)

    def __call__(self, obs) -> np.ndarray:
        return self.k.copy()


class ActorPolicy:
    """Deterministic actor of a trained agent."""

    def __init__(self, agent):
        self.agent = agent

    def __call__(self, obs) -> np.ndarray:
        return self.agent.rollout(obs)


def evaluate(env, policy_factory, episodes: int, shield=None, seed: int = 0, lambda_d: float = 1.0,
             keep_states: bool = False, on_episode=None):
    """Run ``episodes`` episodes; ``policy_factory(episode) -> policy``.

    Returns ``(records, seeds)``.
    """
    records, seeds = [], []
    for ep in range(episodes):
        ws = episode_seed(seed, ep, stream=1)
        world = env.spawn(ws)
        rec = run_episode(env, policy_factory(ep), world, shield, lambda_d, keep_states=keep_states)
        records.append(rec)
        seeds.append(ws)
        if on_episode is not None:
            on_episode(ep, world, rec)
    return records, seeds


def make_policy(kind: str, spec, seed: int = 0, agent=None):
    """Factory ``episode -> policy`` for ``random``, ``scripted`` or ``checkpoint``."""
    if kind == "random":
        return lambda ep: RandomPolicy(spec, int(np.random.SeedSequence([seed, 2, ep]).generate_state(1)[0]))
    if kind == "scripted":
        return lambda ep: ScriptedPolicy(spec)
    if kind == "checkpoint":
        if agent is None:
            raise ValueError("checkpoint policy needs a loaded agent")
        return lambda ep: ActorPolicy(agent)
    raise ValueError(f"unknown policy {kind!r}")
