import numpy as np
import pytest
import yaml

from reachguard.envs import COLLISION, ERROR, GOAL, SAFE_STOP, TIMEOUT, EpisodeRecord, make_env
from reachguard.harness import (
    ConfigError,
    MetricsSummary,
    build_config,
    default_config,
    episode_seed,
    evaluate,
    load_config,
    make_policy,
)
from reachguard.harness.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from reachguard.harness.plots import _zono_polygon, plan_tubes, tube_contains, tube_samples
from reachguard.rl import Td3
from reachguard.safeguard import Shield

# -- configuration ---------------------------------------------------------------


@pytest.mark.parametrize("robot", ["cartpole", "car", "drone"])
def test_defaults_round_trip_through_yaml(robot, tmp_path):
    d = default_config(robot)
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(d))
    cfg = load_config("eval", str(p))
    assert cfg.robot == robot and cfg.spec_overrides == {}
    assert yaml.safe_load(cfg.to_yaml()) == yaml.safe_load(yaml.safe_dump(d))


def test_config_rejects_bad_input():
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config("eval", {"sead": 1})
    with pytest.raises(ConfigError, match="unknown config key 'spec.m_Q'"):
        build_config("eval", {"spec": {"m_Q": 3}})
    with pytest.raises(ConfigError, match="expected int"):
        build_config("eval", {"episodes": "ten"})
    with pytest.raises(ConfigError, match="expected bool"):
        build_config("eval", {"safety": 1})
    with pytest.raises(ConfigError):
        build_config("eval", {"policy": "greedy"})
    with pytest.raises(ConfigError, match="checkpoint"):
        build_config("eval", {"policy": "checkpoint"})
    with pytest.raises(ConfigError):
        build_config("eval", {"robot": "boat"})
    with pytest.raises(ConfigError):
        build_config("fly", {})
    with pytest.raises(ConfigError):
        build_config("eval", {"workers": 0})
    with pytest.raises(ConfigError):
        build_config("eval", ["not", "a", "mapping"])


def test_config_precedence_and_overrides():
    cfg = build_config("eval", {"seed": 3, "episodes": 7, "spec": {"m_T": 15}}, seed=9, episodes=None)
    assert cfg.seed == 9 and cfg.episodes == 7
    assert cfg.spec_overrides == {"m_T": 15}
    assert cfg.spec().m_T == 15
    assert cfg.archive_path.endswith("cartpole.rga")


def test_nested_spec_dicts_are_converted():
    cfg = build_config("eval", {"robot": "car", "spec": {"params": {"u1_max": 3.0}}})
    spec = cfg.spec()
    assert spec.robot.params.u1_max == 3.0


def test_cli_env_vars_and_flags(tmp_path, monkeypatch):
    monkeypatch.setenv("REACHGUARD_WORKERS", "x")
    assert main(["eval", "--safety", "off", "--episodes", "1", "--out", str(tmp_path)]) == EXIT_CONFIG
    monkeypatch.setenv("REACHGUARD_WORKERS", "1")
    monkeypatch.setenv("REACHGUARD_OUT", str(tmp_path / "env_out"))
    assert main(["eval", "--safety", "off", "--episodes", "1"]) == EXIT_OK
    assert (tmp_path / "env_out" / "cartpole_summary.csv").exists()


# -- metrics -----------------------------------------------------------------------


def fake_record(status, reward, n=3, intervened=0):
    rec = EpisodeRecord(status=status, n_iterations=n, adjust_times=[0.01] * n)
    rec.rows = [{"reward": reward / n, "intervened": i < intervened} for i in range(n)]
    return rec


def test_metrics_partition_100():
    recs = [fake_record(s, r, intervened=i) for s, r, i in
            [(GOAL, 10, 0), (SAFE_STOP, 5, 1), (COLLISION, -3, 3), (TIMEOUT, 1, 0), (ERROR, 0, 0), (GOAL, 4, 2)]]
    m = MetricsSummary.from_records(recs)
    assert m.outcome_total == pytest.approx(100.0)
    assert m.goals_pct == pytest.approx(100 / 3)
    assert m.interventions_pct == pytest.approx(100 * 6 / 18)
    assert (m.reward_min, m.reward_max) == pytest.approx((-3, 10))
    assert m.to_csv().splitlines()[0].split(",")[0] == "episodes"
    assert "Collisions [%]" in m.table()
    with pytest.raises(ValueError):
        MetricsSummary.from_records([])


# -- runner ------------------------------------------------------------------------


def test_seed_streams_are_distinct():
    assert episode_seed(0, 1) != episode_seed(0, 1, stream=1)
    assert episode_seed(0, 1, stream=1) == episode_seed(0, 1, stream=1)
    assert len({episode_seed(5, e, 1) for e in range(100)}) == 100


def test_policies():
    spec = make_env("car").spec
    r1, r2 = make_policy("random", spec, 3)(0), make_policy("random", spec, 3)(0)
    a = [r1(None) for _ in range(5)]
    np.testing.assert_array_equal(a, [r2(None) for _ in range(5)])
    des = spec.K.des_part()
    assert np.all((np.array(a) >= des.lo) & (np.array(a) <= des.hi))
    np.testing.assert_array_equal(make_policy("scripted", spec)(0)(None), [5.0, 0.0])
    with pytest.raises(ValueError):
        make_policy("checkpoint", spec)
    with pytest.raises(ValueError):
        make_policy("greedy", spec)


def test_evaluate_is_reproducible():
    env = make_env("cartpole", max_iterations=10)
    f = make_policy("random", env.spec, 1)
    a, sa = evaluate(env, f, 3, seed=1)
    b, sb = evaluate(env, make_policy("random", env.spec, 1), 3, seed=1)
    assert sa == sb and [r.total_reward for r in a] == [r.total_reward for r in b]


# -- CLI with an archive ---------------------------------------------------------------


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, cartpole_archive):
    d = tmp_path_factory.mktemp("run")
    cartpole_archive.save(d / "cartpole.rga")
    return d


def test_cli_exit_codes(tmp_path, run_dir):
    assert main(["eval", "--out", str(tmp_path)]) == EXIT_IO  # no archive yet
    bad = tmp_path / "bad.rga"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--archive", str(bad), "--out", str(tmp_path)]) == EXIT_IO
    cfg = tmp_path / "c.yaml"
    cfg.write_text("episodes: [1, 2]\n")
    assert main(["eval", "--config", str(cfg)]) == EXIT_CONFIG
    cfg.write_text("episodes: [unclosed\n")
    assert main(["eval", "--config", str(cfg)]) == EXIT_CONFIG
    assert main(["eval", "--robot", "car", "--archive", str(run_dir / "cartpole.rga"),
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    ck = tmp_path / "x.ckpt"
    ck.write_bytes(b"{}\n")
    assert main(["eval", "--policy", "checkpoint", "--checkpoint", str(ck), "--archive",
                 str(run_dir / "cartpole.rga"), "--out", str(tmp_path)]) == EXIT_IO


def test_cli_eval_writes_identical_files(tmp_path, run_dir, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["eval", "--episodes", "3", "--seed", "4", "--archive", str(run_dir / "cartpole.rga"),
                     "--out", str(out)]) == EXIT_OK
        outs.append(out)
    text = capsys.readouterr().out
    assert "Goals [%]" in text
    def untimed(path):  # drop the wall-clock columns
        return [line.split(",")[:6] for line in path.read_text().splitlines()]

    a = (outs[0] / "cartpole_eval.csv").read_text()
    assert untimed(outs[0] / "cartpole_eval.csv") == untimed(outs[1] / "cartpole_eval.csv")
    assert a.count("collision") == 0
    eps = sorted((outs[0] / "cartpole_episodes").iterdir())
    assert len(eps) == 3


def test_cli_train_and_resume(tmp_path, run_dir):
    cfg = tmp_path / "t.yaml"
    cfg.write_text(yaml.safe_dump({"td3": {"hidden": [8], "warmup_steps": 20, "batch_size": 16},
                                   "env": {"max_iterations": 10}}))
    args = ["train", "--config", str(cfg), "--episodes", "2", "--archive", str(run_dir / "cartpole.rga"),
            "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    ckpt = tmp_path / "cartpole_actor.ckpt"
    assert Td3.load(ckpt).n_steps == 20
    assert (tmp_path / "cartpole_train_curve.svg").exists()
    assert main(args + ["--checkpoint", str(ckpt)]) == EXIT_OK
    meta = yaml.safe_load((tmp_path / "cartpole_actor.ckpt.meta.yaml").read_text())
    assert meta["episodes_done"] == 4
    assert main(["eval", "--config", str(cfg), "--episodes", "1", "--policy", "checkpoint", "--checkpoint",
                 str(ckpt), "--archive", str(run_dir / "cartpole.rga"), "--out", str(tmp_path)]) == EXIT_OK


def test_cli_demo_frames_are_deterministic(tmp_path, run_dir):
    for name in ("a", "b"):
        assert main(["demo", "--seed", "2", "--archive", str(run_dir / "cartpole.rga"),
                     "--out", str(tmp_path / name)]) == EXIT_OK
    fa = sorted((tmp_path / "a" / "cartpole_frames").iterdir())
    fb = sorted((tmp_path / "b" / "cartpole_frames").iterdir())
    assert fa and [p.name for p in fa] == [p.name for p in fb]
    assert all(p.read_bytes() == q.read_bytes() for p, q in zip(fa, fb))
    assert (tmp_path / "a" / "cartpole_demo_states.csv").read_text() == \
        (tmp_path / "b" / "cartpole_demo_states.csv").read_text()


def test_demo_tubes_contain_executed_footprint(cartpole_shield):
    env = make_env("cartpole")
    world = env.spawn(episode_seed(2, 0, stream=1))
    from reachguard.envs import run_episode

    rec = run_episode(env, make_policy("random", env.spec, 2)(0), world, cartpole_shield, keep_states=True)
    tubes = plan_tubes(cartpole_shield, world, rec)
    assert tubes
    n = 0
    for tube, t, fp in tube_samples(env.spec, rec, tubes):
        assert np.all(tube_contains(tube, t, fp))
        n += len(t)
    assert n > 0


def test_zonotope_polygon_of_square():
    poly = _zono_polygon(np.zeros(2), np.eye(2))
    assert {tuple(np.round(v, 12)) for v in poly} == {(-1, -1), (1, -1), (1, 1), (-1, 1)}


def test_defaults_command(capsys):
    assert main(["defaults", "--robot", "drone"]) == EXIT_OK
    d = yaml.safe_load(capsys.readouterr().out)
    assert d["robot"] == "drone" and d["episodes"] == 10
    assert isinstance(Shield, type)
