"""Command line: ``reachguard precompute|train|eval|demo|defaults``.

Exit codes: 0 success, 2 configuration error, 3 reach-set audit failure,
4 file I/O or archive format error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from ..archive import ArchiveFormatError, ReachSetArchive, build_archive
from ..envs import make_env, run_episode
from ..rl import Td3, safe_train
from ..safeguard import Shield
from .config import ConfigError, RunConfig, default_config, load_config
from .metrics import MetricsSummary, episodes_csv
from .runner import episode_seed, evaluate, make_policy

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT, EXIT_IO = 0, 2, 3, 4

logger = logging.getLogger("reachguard")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachguard", description="Reach-set safety shield for RL trajectory planning.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("precompute", "build and audit the reach-set archive"),
                           ("train", "train a TD3 agent with the shield in the loop"),
                           ("eval", "evaluate a policy and print the summary table"),
                           ("demo", "run one episode and write SVG frames"),
                           ("defaults", "print the full default configuration")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--robot", choices=("cartpole", "car", "drone"))
        if name == "defaults":
            continue
        s.add_argument("--config", help="YAML run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--safety", choices=("on", "off"))
        s.add_argument("--episodes", type=int)
        s.add_argument("--out", help="output directory (env REACHGUARD_OUT)")
        s.add_argument("--workers", type=int, help="ERS worker processes (env REACHGUARD_WORKERS)")
        s.add_argument("--archive", help="archive path (default <out>/<robot>.rga)")
        s.add_argument("--policy", choices=("random", "scripted", "checkpoint"))
        s.add_argument("--checkpoint", help="actor checkpoint to evaluate or resume from")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _cli_overrides(args) -> dict:
    env_out = os.environ.get("REACHGUARD_OUT")
    env_workers = os.environ.get("REACHGUARD_WORKERS")
    workers = args.workers
    if workers is None and env_workers:
        try:
            workers = int(env_workers)
        except ValueError:
            raise ConfigError(f"REACHGUARD_WORKERS must be an integer, got {env_workers!r}") from None
    return {
        "robot": args.robot, "seed": args.seed, "episodes": args.episodes,
        "safety": None if args.safety is None else args.safety == "on",
        "out": args.out or env_out, "workers": workers, "archive": args.archive,
        "policy": args.policy, "checkpoint": args.checkpoint,
    }


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _load_shield(cfg: RunConfig):
    if not cfg.safety:
        return None, cfg.spec()
    path = cfg.archive_path
    if not Path(path).exists():
        raise FileNotFoundError(f"archive {path} not found; run 'reachguard precompute' first")
    arch = ReachSetArchive.load(path)
    if arch.robot != cfg.robot:
        raise ConfigError(f"archive {path} was built for {arch.robot}, not {cfg.robot}")
    return Shield.from_archive(arch, chunk=cfg.shield_chunk), arch.spec


def cmd_precompute(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    arch = build_archive(cfg.robot, cfg.spec_overrides, cfg.ers, cfg.seed, cfg.workers, cfg.prs_samples)
    path = arch.save(cfg.archive_path)
    _write(out / f"{cfg.robot}_audit.csv", arch.audit_csv())
    spec = arch.spec
    n_valid = int(np.sum(arch.ers_status == 0))
    print(f"wrote {path}: PRS {spec.m_T}x{spec.m_K}, ERS {spec.m_T}x{spec.m_K}x{spec.m_0} "
          f"({n_valid} valid pairs, {arch.n_failed_cells} failed)")
    if not arch.audit_passed or arch.n_failed_cells:
        print("audit FAILED after inflation", file=sys.stderr)
        return EXIT_AUDIT
    print("audit passed")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    shield, spec = _load_shield(cfg)
    env = make_env(cfg.robot, spec, **cfg.env)
    des = spec.K.des_part()
    first = 0
    if cfg.checkpoint:
        agent = _load_agent(cfg.checkpoint)
        first = int(_read_meta(cfg.checkpoint).get("episodes_done", 0))
    else:
        agent = Td3(env.obs_dim, des.lo, des.hi, env.obs_scale, cfg.td3, seed=cfg.seed)
    res = safe_train(env, agent, cfg.episodes, shield, cfg.lambda_d, cfg.seed, cfg.updates_per_step,
                     log_every=10, first_episode=first)
    ckpt = out / f"{cfg.robot}_actor.ckpt"
    agent.save(ckpt)
    _write(Path(str(ckpt) + ".meta.yaml"), yaml.safe_dump({"episodes_done": first + cfg.episodes,
                                                           "robot": cfg.robot, "seed": cfg.seed}))
    _write(out / f"{cfg.robot}_train_curve.csv", res.curve_csv(cfg.window))
    from .plots import plot_curve

    plot_curve(res.curve(cfg.window), out / f"{cfg.robot}_train_curve.svg", f"{cfg.robot} training")
    n = len(res.rewards)
    w = min(cfg.window, n)
    goals = sum(s == "goal" for s in res.statuses)
    print(f"episodes {n}  collisions {res.collisions}  goals {100.0 * goals / max(n, 1):.1f}%  "
          f"first-{w} mean {np.mean(res.rewards[:w]):.1f}  last-{w} mean {np.mean(res.rewards[-w:]):.1f}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def _load_agent(path) -> Td3:
    try:
        return Td3.load(path)
    except ValueError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from None


def _read_meta(ckpt) -> dict:
    p = Path(str(ckpt) + ".meta.yaml")
    return yaml.safe_load(p.read_text()) if p.exists() else {}


def cmd_eval(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    shield, spec = _load_shield(cfg)
    env = make_env(cfg.robot, spec, **cfg.env)
    agent = _load_agent(cfg.checkpoint) if cfg.policy == "checkpoint" else None
    factory = make_policy(cfg.policy, spec, cfg.seed, agent)
    ep_dir = out / f"{cfg.robot}_episodes"

    def dump(ep, world, rec):
        _write(ep_dir / f"episode_{ep:04d}.csv", rec.to_csv())

    records, seeds = evaluate(env, factory, cfg.episodes, shield, cfg.seed, cfg.lambda_d, on_episode=dump)
    summary = MetricsSummary.from_records(records)
    _write(out / f"{cfg.robot}_summary.csv", summary.to_csv())
    _write(out / f"{cfg.robot}_eval.csv", episodes_csv(records, seeds))
    print(summary.table(), end="")
    return EXIT_OK


def cmd_demo(cfg: RunConfig) -> int:
    from .plots import plan_tubes, render_frames

    out = Path(cfg.out)
    shield, spec = _load_shield(cfg)
    env = make_env(cfg.robot, spec, **cfg.env)
    agent = _load_agent(cfg.checkpoint) if cfg.policy == "checkpoint" else None
    policy = make_policy(cfg.policy, spec, cfg.seed, agent)(0)
    world = env.spawn(episode_seed(cfg.seed, 0, stream=1))
    rec = run_episode(env, policy, world, shield, cfg.lambda_d, keep_states=True)
    lines = ["t," + ",".join(f"x{i}" for i in range(spec.robot.n_state))]
    for t, xs in rec.states:
        lines += [f"{ti:.6g}," + ",".join(f"{v:.9g}" for v in x) for ti, x in zip(t, xs)]
    _write(out / f"{cfg.robot}_demo_states.csv", "\n".join(lines) + "\n")
    _write(out / f"{cfg.robot}_demo_log.csv", rec.to_csv())
    tubes = plan_tubes(shield, world, rec) if shield is not None else []
    frames = render_frames(env, world, rec, tubes, out / f"{cfg.robot}_frames")
    print(f"status {rec.status}, {rec.n_iterations} iterations, {len(frames)} frames in {frames[0].parent}")
    return EXIT_OK


COMMANDS = {"precompute": cmd_precompute, "train": cmd_train, "eval": cmd_eval, "demo": cmd_demo}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "defaults":
        print(yaml.safe_dump(default_config(args.robot or "cartpole"), sort_keys=False), end="")
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, **_cli_overrides(args))
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArchiveFormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
