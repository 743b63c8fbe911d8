"""Shared episode machinery: worlds, collision checks, rays and the
receding-horizon execution loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import IntegrationError
from ..robots import RobotSpec
from ..zonogeom import RotBox

logger = logging.getLogger(__name__)

GOAL, SAFE_STOP, COLLISION, TIMEOUT, ERROR = "goal", "safe-stop", "collision", "timeout", "error"
TERMINAL_STATUSES = (GOAL, SAFE_STOP, COLLISION, TIMEOUT, ERROR)


@dataclass
class World:
    x0: np.ndarray
    obstacles: list
    bounds: tuple  # (lo, hi) of the workspace
    goal: float
    seed: int
    info: dict = field(default_factory=dict)


@dataclass
class EpisodeRecord:
    rows: list = field(default_factory=list)
    status: str = ""
    n_iterations: int = 0
    adjust_times: list = field(default_factory=list)
    states: list = field(default_factory=list)  # executed trajectory segments (t, x)

    @property
    def total_reward(self) -> float:
        return float(sum(r["reward"] for r in self.rows))

    @property
    def interventions(self) -> int:
        return int(sum(r["intervened"] for r in self.rows))

    @property
    def collided(self) -> bool:
        return self.status == COLLISION

    CSV_FIELDS = ("iteration", "k_rl", "k_safe", "d", "failsafe", "reward", "adjust_us", "state")

    def to_csv(self) -> str:
        lines = [",".join(self.CSV_FIELDS)]
        for r in self.rows:
            k_safe = "FAILSAFE" if r["failsafe"] else " ".join(f"{v:.6g}" for v in r["k_safe"])
            d = "" if r["d"] is None else f"{r['d']:.6g}"
            lines.append(",".join([
                str(r["iteration"]), " ".join(f"{v:.6g}" for v in r["k_rl"]), k_safe, d,
                str(int(r["failsafe"])), f"{r['reward']:.6g}", f"{r['adjust_us']:.0f}",
                " ".join(f"{v:.6g}" for v in r["state"]),
            ]))
        return "\n".join(lines) + "\n"


# -- geometry ---------------------------------------------------------------


def _rotations(n: int, count: int, R=None) -> np.ndarray:
    if R is None:
        return np.broadcast_to(np.eye(n), (count, n, n))
    return np.asarray(R, float)


def boxes_overlap(centers, half, rotations, box: RotBox) -> np.ndarray:
    """Separating-axis test of oriented boxes against one obstacle.

    ``centers (N, n)``, ``half (n,)``, ``rotations (N, n, n)`` (columns are the
    box axes). Touching counts as overlap.
    """
    c = np.atleast_2d(np.asarray(centers, float))
    N, n = c.shape
    R1 = _rotations(n, N, rotations)
    h1 = np.asarray(half, float)
    R2 = box.rotation
    axes = [R1[:, :, a] for a in range(n)] + [np.broadcast_to(R2[:, a], (N, n)) for a in range(n)]
    if n == 3:
        for a in range(3):
            for b in range(3):
                axes.append(np.cross(R1[:, :, a], R2[:, b]))
    d = c - box.center
    separated = np.zeros(N, bool)
    for ax in axes:
        r1 = np.abs(np.einsum("nk,nkj->nj", ax, R1)) @ h1
        r2 = np.abs(ax @ R2) @ box.half_lengths
        dist = np.abs(np.einsum("nk,nk->n", ax, d))
        nz = np.linalg.norm(ax, axis=1) > 1e-12
        separated |= nz & (dist > r1 + r2 + 1e-12 * np.linalg.norm(ax, axis=1))
    return ~separated


def ray_box_distance(origin, dirs, box: RotBox, max_range: float) -> np.ndarray:
    """Distance along unit rays to an oriented box (slab method), capped at ``max_range``."""
    o = (np.asarray(origin, float) - box.center) @ box.rotation
    D = np.asarray(dirs, float) @ box.rotation
    h = box.half_lengths
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-h - o) / D
        t2 = (h - o) / D
    near, far = np.minimum(t1, t2), np.maximum(t1, t2)
    # a ray parallel to a slab either stays inside it for all t or never enters
    inside = np.abs(o) <= h
    near = np.where(D == 0, np.where(inside, -np.inf, np.inf), near)
    far = np.where(D == 0, np.where(inside, np.inf, -np.inf), far)
    t_near = near.max(axis=1)
    t_far = far.min(axis=1)
    hit = (t_far >= t_near) & (t_far >= 0)
    dist = np.where(t_near >= 0, t_near, 0.0)
    return np.where(hit, np.minimum(dist, max_range), max_range)


# -- environments -----------------------------------------------------------


class RobotEnv:
    """Base environment; subclasses define worlds, observations and rewards."""

    spec: RobotSpec
    max_iterations: int
    obs_dim: int
    stop_speed: float = 0.05

    def spawn(self, seed: int) -> World:
        raise NotImplementedError

    def observe(self, x, world: World) -> np.ndarray:
        raise NotImplementedError

    def reward(self, x, obs, world: World) -> float:
        raise NotImplementedError

    def goal_reached(self, x, world: World) -> bool:
        raise NotImplementedError

    def speed(self, x) -> float:
        raise NotImplementedError

    def footprint_boxes(self, states):
        """``(centers, half, rotations)`` of the body at each state."""
        raise NotImplementedError

    def collides(self, states, world: World) -> bool:
        c, h, R = self.footprint_boxes(np.atleast_2d(states))
        return any(bool(np.any(boxes_overlap(c, h, R, o))) for o in world.obstacles)

    def final_status(self, x, world: World) -> str:
        return SAFE_STOP if self.speed(x) < self.stop_speed else TIMEOUT


@dataclass
class ExecutedPlan:
    k: np.ndarray
    p0: np.ndarray
    t_offset: float


def run_episode(env: RobotEnv, policy, world: World, shield=None, lambda_d: float = 1.0,
                on_step=None, keep_states: bool = False, max_iterations: int | None = None) -> EpisodeRecord:
    """Receding-horizon loop: observe, ask the policy, adjust, execute ``t_plan``.

    ``policy(obs) -> k_des``. With ``shield=None`` the agent's plan is executed
    unchecked. When the shield finds no safe plan the previous plan keeps
    running (its braking tail was certified when it was approved).
    ``on_step(o, o_next, r, k_rl, done)`` receives every transition.
    """
    spec = env.spec
    robot = spec.robot
    t_plan = spec.timing.t_plan
    x = np.array(world.x0, float)
    rec = EpisodeRecord()
    plan: ExecutedPlan | None = None
    n_iter = max_iterations or env.max_iterations
    obs = env.observe(x, world)
    status = ""
    for it in range(n_iter):
        k_rl_des = np.asarray(policy(obs), float).reshape(-1)
        prev = None if plan is None else (plan.k, plan.t_offset + t_plan)
        t0 = time.perf_counter()
        if shield is not None:
            res = shield.adjust(x, world.obstacles, k_rl_des, prev)
            k_new, d, k_rl = res.k_safe, res.d, res.k_rl
        else:
            k_init = spec.f_init(x, prev)
            k_rl = np.concatenate([k_init, k_rl_des])
            k_new, d = k_rl, 0.0
        elapsed = time.perf_counter() - t0
        rec.adjust_times.append(elapsed)
        failsafe = k_new is None
        if failsafe:
            if plan is None:
                # nothing certified yet: brake from the current state
                k_new = np.concatenate([spec.f_init(x, None), spec.braking_k_des()])
                plan = ExecutedPlan(k_new, np.atleast_1d(spec.position(x)).copy(), 0.0)
                logger.warning("no safe plan at episode start; braking unchecked")
            else:
                plan = ExecutedPlan(plan.k, plan.p0, plan.t_offset + t_plan)
        else:
            plan = ExecutedPlan(np.asarray(k_new, float), np.atleast_1d(spec.position(x)).copy(), 0.0)
        p0 = plan.p0 if spec.n_P > 1 else float(plan.p0[0])
        try:
            tr = robot.rollout(x, plan.k, t_plan, p0=p0, t0=plan.t_offset)
        except IntegrationError as exc:
            logger.error("integration failed in episode %d: %s", world.seed, exc)
            status = ERROR
            break
        collided = env.collides(tr.x, world)
        x = tr.x[-1].copy()
        if keep_states:
            rec.states.append((tr.t + it * t_plan - plan.t_offset, tr.x))
        obs_next = env.observe(x, world)
        r = env.reward(x, obs_next, world) - lambda_d * (d or 0.0)
        done_goal = env.goal_reached(x, world)
        rec.rows.append({
            "iteration": it, "k_rl": k_rl, "k_safe": None if failsafe else plan.k, "d": d,
            "failsafe": failsafe, "intervened": failsafe or bool(d and d > 0), "reward": float(r),
            "adjust_us": elapsed * 1e6, "state": x.copy(),
        })
        done = collided or done_goal
        if on_step is not None:
            on_step(obs, obs_next, float(r), k_rl_des, done)
        obs = obs_next
        if collided:
            status = COLLISION
            break
        if done_goal:
            status = GOAL
            break
    rec.n_iterations = len(rec.rows)
    rec.status = status or env.final_status(x, world)
    return rec
