"""Estimator-style wrappers: ``ReachSetEstimator`` builds an archive,
``SafetyShield`` filters parameter choices, ``Td3Agent`` learns a policy.

They follow the scikit-learn conventions (constructor stores parameters
untouched, learned state ends in ``_``, ``get_params``/``set_params`` come
from :class:`~sklearn.base.BaseEstimator`).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .archive import ReachSetArchive, build_archive
from .ers import ErsSettings
from .rl import Td3, Td3Config, safe_train
from .safeguard import Shield


def check_states(X, n_state: int) -> np.ndarray:
    """2-D finite float array with ``n_state`` columns."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_state:
        raise ValueError(f"expected states with {n_state} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states must be finite")
    return X


class ReachSetEstimator(BaseEstimator):
    """Offline PRS and ERS builder.

    Args:
        robot: ``"cartpole"``, ``"car"`` or ``"drone"``.
        spec_overrides: keyword overrides for the robot settings.
        seed: seed for interior samples and audits.
        workers: worker processes for the ERS cells.
        audit_samples: interior samples per cell audit.
        extra_samples: random interior samples added to the corners.
    """

    def __init__(self, robot: str = "cartpole", spec_overrides=None, seed: int = 0, workers: int = 1,
                 audit_samples: int = 100, extra_samples: int = 32):
        self.robot = robot
        self.spec_overrides = spec_overrides
        self.seed = seed
        self.workers = workers
        self.audit_samples = audit_samples
        self.extra_samples = extra_samples

    def fit(self, X=None, y=None):
        settings = ErsSettings(audit_samples=self.audit_samples, extra_samples=self.extra_samples)
        self.archive_ = build_archive(self.robot, self.spec_overrides, settings, self.seed, self.workers)
        return self

    def transform(self, X):
        """``(j, h)`` cell indices for each state (``-1`` where uncovered)."""
        check_is_fitted(self, "archive_")
        spec = self.archive_.spec
        X = check_states(X, spec.robot.n_state)
        out = np.full((X.shape[0], 2), -1, dtype=int)
        for r, x in enumerate(X):
            j = spec.find_j(spec.f_init(x))
            h = spec.find_h(spec.lookup_state(x))
            out[r] = (-1 if j is None else j, -1 if h is None else h)
        return out


class SafetyShield(BaseEstimator):
    """Online shield around a reach-set archive.

    Args:
        archive: a :class:`ReachSetArchive` or a path to one.
        chunk: candidates checked per batch.
    """

    def __init__(self, archive=None, chunk: int = 128):
        self.archive = archive
        self.chunk = chunk

    def fit(self, X=None, y=None):
        arch = self.archive
        if arch is None:
            raise ValueError("SafetyShield needs an archive")
        if not isinstance(arch, ReachSetArchive):
            arch = ReachSetArchive.load(arch)
        self.archive_ = arch
        self.shield_ = Shield.from_archive(arch, chunk=self.chunk)
        return self

    def adjust(self, x, obstacles, k_rl_des, prev=None):
        check_is_fitted(self, "shield_")
        return self.shield_.adjust(x, obstacles, k_rl_des, prev)

    def predict(self, X, obstacles=(), k_rl_des=None):
        """Safe ``k`` for each state (NaN rows where the failsafe is needed)."""
        check_is_fitted(self, "shield_")
        spec = self.archive_.spec
        X = check_states(X, spec.robot.n_state)
        k_des = np.broadcast_to(np.asarray(k_rl_des, float), (X.shape[0], spec.K.n_des))
        out = np.full((X.shape[0], spec.n_K), np.nan)
        for r, x in enumerate(X):
            res = self.shield_.adjust(x, list(obstacles), k_des[r])
            if res.k_safe is not None:
                out[r] = res.k_safe
        return out


class Td3Agent(BaseEstimator):
    """TD3 policy over ``K_des`` trained with the shield in the loop.

    Args:
        robot: robot name (sets the environment).
        episodes: training episodes.
        safety: route plans through the shield.
        lambda_d: weight of the adjustment-distance penalty.
        seed: seed for weights, exploration and worlds.
        hidden: hidden layer widths.
        env_kwargs: environment overrides.
    """

    def __init__(self, robot: str = "cartpole", episodes: int = 300, safety: bool = True, lambda_d: float = 1.0,
                 seed: int = 0, hidden=(64, 64), env_kwargs=None, warmup_steps: int = 500):
        self.robot = robot
        self.episodes = episodes
        self.safety = safety
        self.lambda_d = lambda_d
        self.seed = seed
        self.hidden = hidden
        self.env_kwargs = env_kwargs
        self.warmup_steps = warmup_steps

    def fit(self, archive=None, y=None):
        from .envs import make_env

        shield, spec = None, None
        if self.safety:
            if archive is None:
                raise ValueError("training with safety on needs an archive")
            arch = archive if isinstance(archive, ReachSetArchive) else ReachSetArchive.load(archive)
            shield, spec = Shield.from_archive(arch), arch.spec
        env = make_env(self.robot, spec, **(self.env_kwargs or {}))
        des = env.spec.K.des_part()
        cfg = Td3Config(hidden=tuple(self.hidden), warmup_steps=self.warmup_steps)
        self.agent_ = Td3(env.obs_dim, des.lo, des.hi, env.obs_scale, cfg, seed=self.seed)
        self.result_ = safe_train(env, self.agent_, self.episodes, shield, self.lambda_d, self.seed)
        return self

    def predict(self, O):
        """Deterministic ``k_des`` for each observation row."""
        check_is_fitted(self, "agent_")
        O = np.atleast_2d(np.asarray(O, float))
        return np.array([self.agent_.rollout(o) for o in O])
