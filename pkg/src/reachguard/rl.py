"""Twin-critic actor-critic learner (TD3) in plain numpy, plus the safe
training loop that routes every plan through the shield.

Networks are small multilayer perceptrons with hand-written backpropagation so
gradients can be checked against finite differences. Actions live in the
normalized box ``[-1, 1]^n_des`` and are mapped affinely onto ``K_des``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class Mlp:
    """Fully connected network; ReLU hidden layers, ``identity`` or ``tanh`` output.

    Args:
        sizes: layer widths including input and output.
        out_act: output activation, ``"identity"`` or ``"tanh"``.
        rng: generator for the initial weights.
        final_scale: half-width of the uniform init of the last layer
            (None uses the fan-in rule of the hidden layers).
    """

    def __init__(self, sizes, out_act: str = "identity", rng: np.random.Generator | None = None,
                 final_scale: float | None = None):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if out_act not in ("identity", "tanh"):
            raise ValueError(f"unknown output activation {out_act!r}")
        rng = rng or np.random.default_rng(0)
        self.sizes = tuple(int(s) for s in sizes)
        self.out_act = out_act
        self.W, self.b = [], []
        for li, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = li == len(self.sizes) - 2
            bound = final_scale if (last and final_scale is not None) else 1.0 / np.sqrt(n_in)
            self.W.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            self.b.append(rng.uniform(-bound, bound, size=n_out))
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def set_params(self, values) -> None:
        vals = list(values)
        self.W = [np.array(v, float) for v in vals[0::2]]
        self.b = [np.array(v, float) for v in vals[1::2]]

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes, other.out_act = self.sizes, self.out_act
        other.W = [w.copy() for w in self.W]
        other.b = [b.copy() for b in self.b]
        other._cache = None
        return other

    def forward(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input width {self.sizes[0]}, got {x.shape[1]}")
        acts = [x]
        h = x
        n = len(self.W)
        for li in range(n):
            z = h @ self.W[li] + self.b[li]
            if li < n - 1:
                h = np.maximum(z, 0.0)
            else:
                h = np.tanh(z) if self.out_act == "tanh" else z
            acts.append(h)
        self._cache = acts
        return h

    __call__ = forward

    def backward(self, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` w.r.t. the parameters (same
        order as :attr:`params`) and w.r.t. the input of the last forward pass."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        acts = self._cache
        g = np.asarray(grad_out, float)
        n = len(self.W)
        grads = [None] * (2 * n)
        for li in reversed(range(n)):
            out = acts[li + 1]
            if li == n - 1:
                if self.out_act == "tanh":
                    g = g * (1.0 - out * out)
            else:
                g = g * (out > 0.0)
            grads[2 * li] = acts[li].T @ g
            grads[2 * li + 1] = g.sum(axis=0)
            g = g @ self.W[li].T
        return grads, g

    def soft_update(self, source: "Mlp", tau: float) -> None:
        """``self <- tau * source + (1 - tau) * self``."""
        for dst, src in zip(self.params, source.params):
            dst *= 1.0 - tau
            dst += tau * src


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class ReplayBuffer:
    """Ring buffer of ``(o, a, r, o', done)`` with seeded minibatch draws."""

    def __init__(self, obs_dim: int, act_dim: int, capacity: int = 100_000, seed: int = 0):
        self.capacity = int(capacity)
        self.o = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros((self.capacity, act_dim))
        self.r = np.zeros(self.capacity)
        self.o2 = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self.ptr = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def add(self, o, a, r, o2, done) -> None:
        i = self.ptr
        self.o[i], self.a[i], self.r[i], self.o2[i], self.done[i] = o, a, r, o2, float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int):
        if self.size < n:
            raise ValueError("not enough experience for a minibatch")
        idx = self.rng.integers(0, self.size, size=n)
        return self.o[idx], self.a[idx], self.r[idx], self.o2[idx], self.done[idx]


@dataclass
class Td3Config:
    hidden: tuple = (64, 64)
    gamma: float = 0.99
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    buffer_size: int = 100_000
    batch_size: int = 128
    policy_delay: int = 2
    tau: float = 5e-3
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    explore_start: float = 0.5
    explore_end: float = 0.05
    warmup_steps: int = 500
    reward_scale: float = 0.01


class Td3:
    """TD3 over normalized actions; ``k_des = center + half_width * a``.

    Args:
        obs_dim: observation length.
        k_lo, k_hi: bounds of ``K_des``.
        obs_scale: divisor applied to observations before the networks.
        config: hyperparameters.
        seed: seeds weights, exploration noise and replay draws.
    """

    def __init__(self, obs_dim: int, k_lo, k_hi, obs_scale=None, config: Td3Config | None = None, seed: int = 0):
        self.config = config or Td3Config()
        cfg = self.config
        self.obs_dim = int(obs_dim)
        self.k_lo, self.k_hi = np.asarray(k_lo, float), np.asarray(k_hi, float)
        self.act_dim = self.k_lo.size
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, float)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        wrng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        a_sizes = (obs_dim,) + tuple(cfg.hidden) + (self.act_dim,)
        c_sizes = (obs_dim + self.act_dim,) + tuple(cfg.hidden) + (1,)
        self.actor = Mlp(a_sizes, "tanh", wrng, final_scale=3e-3)
        self.critics = [Mlp(c_sizes, "identity", wrng, final_scale=3e-3) for _ in range(2)]
        self.actor_t = self.actor.copy()
        self.critics_t = [c.copy() for c in self.critics]
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opts = [Adam(c.params, cfg.critic_lr) for c in self.critics]
        self.buffer = ReplayBuffer(obs_dim, self.act_dim, cfg.buffer_size, seed=seed)
        self.n_updates = 0
        self.n_steps = 0

    # action maps
    def to_k(self, a) -> np.ndarray:
        c, h = (self.k_hi + self.k_lo) / 2, (self.k_hi - self.k_lo) / 2
        return c + h * np.asarray(a, float)

    def to_a(self, k) -> np.ndarray:
        c, h = (self.k_hi + self.k_lo) / 2, (self.k_hi - self.k_lo) / 2
        return np.clip((np.asarray(k, float) - c) / h, -1.0, 1.0)

    def _norm(self, o) -> np.ndarray:
        o = np.atleast_2d(np.asarray(o, float))
        if o.shape[1] != self.obs_dim:
            raise ValueError(f"expected observation length {self.obs_dim}, got {o.shape[1]}")
        return o / self.obs_scale

    def rollout(self, o, sigma: float = 0.0) -> np.ndarray:
        """Actor output plus clipped Gaussian noise (normalized units), as ``k_des``."""
        a = self.actor(self._norm(o))[0]
        if sigma > 0.0:
            a = a + np.clip(self.rng.normal(0.0, sigma, size=a.shape), -2 * sigma, 2 * sigma)
        return self.to_k(np.clip(a, -1.0, 1.0))

    def random_action(self) -> np.ndarray:
        return self.to_k(self.rng.uniform(-1.0, 1.0, size=self.act_dim))

    def store(self, o, k_des, r, o2, done) -> None:
        self.buffer.add(self._norm(o)[0], self.to_a(k_des), r * self.config.reward_scale, self._norm(o2)[0], done)

    # learning
    def _q(self, net: Mlp, o, a) -> np.ndarray:
        return net(np.hstack([o, a]))[:, 0]

    def train_step(self, batch=None) -> dict:
        cfg = self.config
        o, a, r, o2, done = batch if batch is not None else self.buffer.sample(cfg.batch_size)
        n = o.shape[0]
        noise = np.clip(self.rng.normal(0.0, cfg.policy_noise, size=a.shape), -cfg.noise_clip, cfg.noise_clip)
        a2 = np.clip(self.actor_t(o2) + noise, -1.0, 1.0)
        q_t = np.minimum(self._q(self.critics_t[0], o2, a2), self._q(self.critics_t[1], o2, a2))
        y = r + cfg.gamma * (1.0 - done) * q_t
        losses = []
        for net, opt in zip(self.critics, self.critic_opts):
            q = self._q(net, o, a)
            err = q - y
            grads, _ = net.backward((2.0 / n) * err[:, None])
            opt.step(net.params, grads)
            losses.append(float(np.mean(err * err)))
        self.n_updates += 1
        info = {"critic_loss": losses}
        if self.n_updates % cfg.policy_delay == 0:
            pi = self.actor(o)
            q = self._q(self.critics[0], o, pi)
            _, g_in = self.critics[0].backward(np.full((n, 1), -1.0 / n))
            grads, _ = self.actor.backward(g_in[:, self.obs_dim:])
            self.actor_opt.step(self.actor.params, grads)
            self.actor_t.soft_update(self.actor, cfg.tau)
            for tgt, src in zip(self.critics_t, self.critics):
                tgt.soft_update(src, cfg.tau)
            info["actor_objective"] = float(np.mean(q))
        return info

    # persistence: JSON header line then little-endian float64 weights, row-major
    def _networks(self):
        return {"actor": self.actor, "actor_t": self.actor_t, "critic0": self.critics[0],
                "critic1": self.critics[1], "critic0_t": self.critics_t[0], "critic1_t": self.critics_t[1]}

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        shapes, blobs = {}, []
        for name, net in self._networks().items():
            shapes[name] = [list(p.shape) for p in net.params]
            blobs.extend(np.ascontiguousarray(p, "<f8").tobytes() for p in net.params)
        head = {"format": "reachguard-td3", "version": 1, "obs_dim": self.obs_dim,
                "k_lo": self.k_lo.tolist(), "k_hi": self.k_hi.tolist(), "obs_scale": self.obs_scale.tolist(),
                "config": {k: list(v) if isinstance(v, tuple) else v for k, v in vars(self.config).items()},
                "shapes": shapes, "rng_state": self.rng.bit_generator.state,
                "n_updates": self.n_updates, "n_steps": self.n_steps}
        path.write_bytes(json.dumps(head, sort_keys=True).encode() + b"\n" + b"".join(blobs))
        return path

    @classmethod
    def load(cls, path) -> "Td3":
        data = Path(path).read_bytes()
        end = data.find(b"\n")
        try:
            head = json.loads(data[:end])
        except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
            raise ValueError(f"not a checkpoint: {exc}") from None
        if head.get("format") != "reachguard-td3":
            raise ValueError("not a checkpoint")
        cfg = Td3Config(**{k: tuple(v) if isinstance(v, list) else v for k, v in head["config"].items()})
        agent = cls(head["obs_dim"], head["k_lo"], head["k_hi"], head["obs_scale"], cfg)
        buf = np.frombuffer(data[end + 1:], dtype="<f8")
        pos = 0
        for name, net in agent._networks().items():
            vals = []
            for shape in head["shapes"][name]:
                size = int(np.prod(shape))
                vals.append(buf[pos: pos + size].reshape(shape).astype(float))
                pos += size
            net.set_params(vals)
        if pos != buf.size:
            raise ValueError("checkpoint payload size mismatch")
        agent.actor_opt = Adam(agent.actor.params, cfg.actor_lr)
        agent.critic_opts = [Adam(c.params, cfg.critic_lr) for c in agent.critics]
        agent.rng.bit_generator.state = head["rng_state"]
        agent.n_updates, agent.n_steps = head["n_updates"], head["n_steps"]
        return agent


@dataclass
class TrainingResult:
    rewards: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    interventions: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    adjust_times: list = field(default_factory=list)

    @property
    def collisions(self) -> int:
        return sum(s == "collision" for s in self.statuses)

    def curve(self, window: int = 50) -> np.ndarray:
        """Rows ``(episode, reward, running mean, running std)`` over a trailing window."""
        r = np.asarray(self.rewards, float)
        rows = []
        for e in range(r.size):
            w = r[max(0, e - window + 1): e + 1]
            rows.append((e, r[e], w.mean(), w.std()))
        return np.array(rows).reshape(-1, 4)

    def curve_csv(self, window: int = 50) -> str:
        lines = ["episode,reward,running_mean,running_std"]
        lines += [f"{int(e)},{r:.6g},{m:.6g},{s:.6g}" for e, r, m, s in self.curve(window)]
        return "\n".join(lines) + "\n"


def safe_train(env, agent: Td3, episodes: int, shield=None, lambda_d: float = 1.0, seed: int = 0,
               updates_per_step: int = 1, log_every: int = 0, first_episode: int = 0) -> TrainingResult:
    """Run ``episodes`` training episodes; the replay buffer stores the agent's
    own (unadjusted) action for every transition.

    ``first_episode`` offsets the world seeds and the exploration schedule so a
    resumed run continues where a checkpoint left off.
    """
    from .envs import run_episode

    cfg = agent.config
    result = TrainingResult()
    total = first_episode + episodes
    for ep in range(first_episode, total):
        frac = ep / max(total - 1, 1)
        sigma = cfg.explore_start + (cfg.explore_end - cfg.explore_start) * frac
        world = env.spawn(np.random.SeedSequence([seed, ep]).generate_state(1)[0])

        def policy(o):
            if agent.n_steps < cfg.warmup_steps:
                return agent.random_action()
            return agent.rollout(o, sigma)

        def on_step(o, o2, r, k_rl, done):
            agent.store(o, k_rl, r, o2, done)
            agent.n_steps += 1
            if len(agent.buffer) >= cfg.batch_size and agent.n_steps >= cfg.warmup_steps:
                for _ in range(updates_per_step):
                    agent.train_step()

        rec = run_episode(env, policy, world, shield, lambda_d, on_step=on_step)
        result.rewards.append(rec.total_reward)
        result.statuses.append(rec.status)
        result.interventions.append(rec.interventions)
        result.iterations.append(rec.n_iterations)
        result.adjust_times.extend(rec.adjust_times)
        if log_every and (ep + 1) % log_every == 0:
            logger.info("episode %d reward %.1f status %s", ep + 1, rec.total_reward, rec.status)
    return result
