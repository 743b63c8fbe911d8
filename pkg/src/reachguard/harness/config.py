"""Run configuration: YAML file -> validated :class:`RunConfig`.

Every tunable default of the package is surfaced by :func:`default_config`,
read straight from the constructor signatures so the schema cannot drift
from the code. A config file may set any subset of those keys; unknown keys
and wrongly typed values raise :class:`ConfigError` before anything runs.

Schema (top level)::

    robot: cartpole | car | drone
    seed: int                  # base seed for worlds, weights and audits
    safety: bool               # route plans through the shield
    episodes: int
    out: str                   # output directory
    workers: int               # ERS worker processes
    policy: random | scripted | checkpoint
    checkpoint: str | null     # actor weights for policy=checkpoint or resume
    archive: str | null        # reach-set archive (default <out>/<robot>.rga)
    spec: {...}                # partition, timing, parameter box, footprint, dynamics params
    env: {...}                 # world generator settings
    ers: {...}                 # ERS sampling, audit and inflation settings
    prs: {samples: int}        # time samples per PRS interval
    shield: {chunk: int}       # candidates checked per batch
    td3: {...}                 # learner hyperparameters
    train: {lambda_d: float, updates_per_step: int, window: int}
"""

from __future__ import annotations

import copy
import dataclasses
import inspect
import os
from dataclasses import dataclass, field

import yaml

from ..envs import ENVS
from ..ers import ErsSettings
from ..rl import Td3Config
from ..robots import SPECS, make_spec

MODES = ("precompute", "train", "eval", "demo")
POLICIES = ("random", "scripted", "checkpoint")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


def _plain(value):
    """Dataclasses and tuples as YAML-friendly dicts and lists."""
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if hasattr(value, "item"):
        return value.item()
    return value


def _signature_defaults(cls, skip=("self", "spec")) -> dict:
    out = {}
    for name, p in inspect.signature(cls).parameters.items():
        if name in skip or p.default is inspect.Parameter.empty:
            continue
        out[name] = _plain(p.default)
    return out


def default_config(robot: str = "cartpole") -> dict:
    """Full default configuration for ``robot`` as nested plain data."""
    if robot not in SPECS:
        raise ConfigError(f"unknown robot {robot!r}; expected one of {sorted(SPECS)}")
    spec_defaults = _signature_defaults(SPECS[robot])
    if spec_defaults.get("K") is None:
        spec_defaults["K"] = _plain(make_spec(robot).K)
    return {
        "robot": robot,
        "seed": 0,
        "safety": True,
        "episodes": {"cartpole": 200, "car": 50, "drone": 10}[robot],
        "out": "runs",
        "workers": 1,
        "policy": "random",
        "checkpoint": None,
        "archive": None,
        "spec": spec_defaults,
        "env": _signature_defaults(ENVS[robot]),
        "ers": _plain(ErsSettings()),
        "prs": {"samples": 64},
        "shield": {"chunk": 128},
        "td3": _plain(Td3Config()),
        "train": {"lambda_d": 1.0, "updates_per_step": 1, "window": 50},
    }


# keys whose default is None but which accept a value of this type
_NULLABLE = {"checkpoint": str, "archive": str}


def _check_type(path: str, default, value):
    if default is None:
        expected = _NULLABLE.get(path)
        if value is not None and expected is not None and not isinstance(value, expected):
            raise ConfigError(f"{path}: expected {expected.__name__} or null, got {type(value).__name__}")
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, (list, tuple))
        if ok:
            if default and not isinstance(default[0], list):
                for i, v in enumerate(value):
                    _check_type(f"{path}[{i}]", default[0], v)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")


def _merge(defaults: dict, user: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {path!r}")
        d = defaults[key]
        _check_type(path, d, value)
        if isinstance(d, dict) and isinstance(value, dict):
            out[key] = _merge(d, value, path + ".")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Validated settings for one CLI run.

    ``spec_overrides`` holds only the robot settings the user changed, so
    archive headers stay short and default runs stay byte-identical.
    """

    robot: str
    mode: str
    seed: int
    safety: bool
    episodes: int
    out: str
    workers: int
    policy: str
    checkpoint: str | None
    archive: str | None
    spec_overrides: dict
    env: dict
    ers: ErsSettings
    prs_samples: int
    shield_chunk: int
    td3: Td3Config
    lambda_d: float
    updates_per_step: int
    window: int
    full: dict = field(repr=False, default_factory=dict)

    @property
    def archive_path(self) -> str:
        return self.archive or os.path.join(self.out, f"{self.robot}.rga")

    def spec(self):
        return make_spec(self.robot, **self.spec_overrides)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.full, sort_keys=False)


def _validate(cfg: dict, mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if cfg["policy"] not in POLICIES:
        raise ConfigError(f"policy must be one of {POLICIES}")
    if cfg["policy"] == "checkpoint" and not cfg["checkpoint"]:
        raise ConfigError("policy=checkpoint needs a checkpoint path")
    for key in ("episodes", "workers"):
        if cfg[key] < (0 if key == "episodes" else 1):
            raise ConfigError(f"{key} out of range: {cfg[key]}")
    if cfg["seed"] < 0 or cfg["seed"] >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["train"]["lambda_d"] < 0:
        raise ConfigError("train.lambda_d must be non-negative")
    if cfg["shield"]["chunk"] < 1 or cfg["prs"]["samples"] < 2:
        raise ConfigError("shield.chunk >= 1 and prs.samples >= 2 are required")


def build_config(mode: str, user: dict | None = None, **cli) -> RunConfig:
    """Merge ``user`` (file contents) and ``cli`` (flags, None = unset) over the defaults."""
    if user is not None and not isinstance(user, dict):
        raise ConfigError("config file must hold a mapping")
    user = dict(user or {})
    cli = {k: v for k, v in cli.items() if v is not None}
    robot = cli.get("robot", user.get("robot", "cartpole"))
    defaults = default_config(robot)
    cfg = _merge(defaults, {**user, **cli})
    _validate(cfg, mode)
    spec_overrides = {k: v for k, v in cfg["spec"].items() if v != defaults["spec"][k]}
    try:
        make_spec(robot, **spec_overrides)
        ers = ErsSettings(**cfg["ers"])
        td3 = Td3Config(**{**cfg["td3"], "hidden": tuple(cfg["td3"]["hidden"])})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid settings: {exc}") from exc
    return RunConfig(
        robot=robot, mode=mode, seed=int(cfg["seed"]), safety=bool(cfg["safety"]), episodes=int(cfg["episodes"]),
        out=cfg["out"], workers=int(cfg["workers"]), policy=cfg["policy"], checkpoint=cfg["checkpoint"],
        archive=cfg["archive"], spec_overrides=spec_overrides, env=cfg["env"], ers=ers,
        prs_samples=int(cfg["prs"]["samples"]), shield_chunk=int(cfg["shield"]["chunk"]), td3=td3,
        lambda_d=float(cfg["train"]["lambda_d"]), updates_per_step=int(cfg["train"]["updates_per_step"]),
        window=int(cfg["train"]["window"]), full=cfg,
    )


def load_config(mode: str, path: str | None = None, **cli) -> RunConfig:
    """Read ``path`` (YAML) if given and build the run configuration."""
    user = {}
    if path:
        try:
            with open(path) as fh:
                user = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path} must hold a mapping at the top level")
    return build_config(mode, user, **cli)


__all__ = ["ConfigError", "RunConfig", "build_config", "default_config", "load_config", "MODES", "POLICIES"]
