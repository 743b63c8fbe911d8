"""Acceptance criteria, each run at its stated size and tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest
from scipy.optimize import linprog

from reachguard import planmodel as pm
from reachguard.envs import COLLISION, GOAL, make_env
from reachguard.ers import (
    STATUS_VALID,
    ErsCellResult,
    ErsSettings,
    corner_dominance_oracle,
    interior_containment_audit,
)
from reachguard.harness import evaluate, make_policy
from reachguard.harness.plots import PlanTube, tube_contains
from reachguard.prs import containment_residual, sample_cell_points
from reachguard.rl import Td3, safe_train
from reachguard.zonogeom import RotBox, Zonotope, minkowski_sum, slice_zono, support, to_halfplanes, zono_intersects

pytestmark = pytest.mark.slow

GEOM_TOL = 1e-9
N_GEOM = 10_000


def rand_zono(rng, n, m):
    return Zonotope(rng.normal(size=n), rng.normal(size=(n, m)))


# -- 1. geometry -------------------------------------------------------------------


def test_criterion_1_geometry(acceptance_report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    fails = {"slice": 0, "minkowski": 0, "halfplane": 0, "intersection": 0}
    n_lp = 0
    for _ in range(N_GEOM):
        n = int(rng.integers(2, 4))
        # slice-subset: every point of a slice lies in the parent zonotope
        m = int(rng.integers(1, 7))
        Z = rand_zono(rng, n, m)
        k = int(rng.integers(1, m + 1))
        idx = rng.choice(m, size=k, replace=False)
        S = slice_zono(Z, idx, rng.uniform(-1, 1, size=k))
        H = to_halfplanes(Z)
        fails["slice"] += int(np.any(H.residual(S.sample(20, rng)) > GEOM_TOL))

        # Minkowski membership: sums of member points lie in the sum
        Z1, Z2 = rand_zono(rng, n, int(rng.integers(0, 4))), rand_zono(rng, n, int(rng.integers(0, 4)))
        Hs = to_halfplanes(minkowski_sum(Z1, Z2))
        fails["minkowski"] += int(np.any(Hs.residual(Z1.sample(20, rng) + Z2.sample(20, rng)) > GEOM_TOL))

        # halfplane faithfulness: members pass, offsets equal support values,
        # a point just past the support along a random direction fails
        Zh = rand_zono(rng, n, int(rng.integers(1, 8)))
        Hh = to_halfplanes(Zh)
        bad = np.any(Hh.residual(Zh.sample(20, rng)) > GEOM_TOL)
        bad |= any(abs(support(Zh, a) - b) > GEOM_TOL * max(1.0, abs(b)) for a, b in zip(Hh.A, Hh.b))
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        far = Zh.center + d * (support(Zh, d) - d @ Zh.center + 1e-6)
        bad |= not Hh.residual(far)[0] > 0
        fails["halfplane"] += int(bad)

        # intersection lemma vs brute force: a sampled common point forces a hit;
        # a hit without a sampled witness is confirmed by an LP
        A = rand_zono(rng, n, int(rng.integers(1, 4)))
        A = Zonotope(A.center * 3, A.generators)
        B = rand_zono(rng, n, int(rng.integers(1, 4)))
        hit = zono_intersects(A, B)
        witness = bool(np.any(to_halfplanes(B).residual(A.sample(200, rng)) <= GEOM_TOL))
        if witness and not hit:
            fails["intersection"] += 1
        elif hit and not witness:
            n_lp += 1
            G = np.hstack([A.generators, -B.generators])
            res = linprog(np.zeros(G.shape[1]), A_eq=G, b_eq=B.center - A.center,
                          bounds=[(-1 - GEOM_TOL, 1 + GEOM_TOL)] * G.shape[1], method="highs")
            fails["intersection"] += int(res.status != 0)
    elapsed = time.perf_counter() - t0
    ok = sum(fails.values()) == 0 and elapsed < 60.0
    acceptance_report("1", ok, f"{N_GEOM} cases x 4 properties, failures {fails}, "
                               f"{n_lp} LP confirmations, {elapsed:.1f} s (limit 60 s)")
    assert ok


# -- 2. plan model ---------------------------------------------------------------------

PLANS = {
    "cartpole": (pm.cartpole_plan_derivs, pm.CARTPOLE_K, pm.CARTPOLE_TIMING),
    "car": (pm.car_plan_derivs, pm.CAR_K, pm.CAR_TIMING),
    "drone": (pm.drone_plan_derivs, pm.DRONE_K, pm.DRONE_TIMING),
}


def test_criterion_2_plan_model(acceptance_report):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = {}
    ok = True
    for name, (fn, box, timing) in PLANS.items():
        k = rng.uniform(box.lo, box.hi, size=(1000, len(box.lo)))
        p0 = np.asarray(fn(0.0, k)[0])
        v_fin = np.asarray(fn(timing.t_fin, k)[1])
        jump = 0.0
        for td in timing.t_des:
            pl, vl, _ = fn(np.nextafter(td, 0.0), k)
            pr, vr, _ = fn(td, k)
            jump = max(jump, float(np.max(np.abs(pl - pr))), float(np.max(np.abs(vl - vr))))
        worst[name] = (float(np.max(np.abs(p0))), float(np.max(np.abs(v_fin))), jump)
        ok &= bool(np.all(p0 == 0.0)) and worst[name][1] <= 1e-9 and jump <= 1e-9
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{n}: max|p(0)|={a:.1e} max|v(t_fin)|={b:.1e} max C1 jump={c:.1e}"
                       for n, (a, b, c) in worst.items())
    acceptance_report("2", ok, f"1000 k per robot; {detail}; {elapsed:.2f} s")
    assert ok


# -- 3. PRS containment --------------------------------------------------------------------


def test_criterion_3_prs_containment(acceptance_report, cartpole_archive, car_archive):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    lines, ok = [], True
    for arch, partition in ((cartpole_archive, (30, 55)), (car_archive, (120, 2))):
        spec = arch.spec
        ok &= (spec.m_T, spec.m_K) == partition
        cells = set()
        while len(cells) < min(20, spec.m_T * spec.m_K):
            cells.add((int(rng.integers(spec.m_T)), int(rng.integers(spec.m_K))))
        n_bad, worst = 0, -np.inf
        for i, j in sorted(cells):
            c, G = arch.prs_centers[i, j], arch.prs_generators[i, j]
            pts = sample_cell_points(spec, i, j, 100_000, rng)
            r = containment_residual(c, G, spec.n_P, spec.n_K, pts)
            n_bad += int(np.sum(r > 1e-7))
            worst = max(worst, float(r.max()))
        ok &= n_bad == 0
        lines.append(f"{spec.name} m_T={spec.m_T} m_K={spec.m_K}: {n_bad} violations, max residual {worst:.2e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300.0
    acceptance_report("3", ok, f"20 cells x 1e5 samples per robot; {'; '.join(lines)}; {elapsed:.1f} s (limit 300 s)")
    assert ok


# -- 4. ERS -----------------------------------------------------------------------------


def archive_cell(arch, j, h) -> ErsCellResult:
    boxes = []
    for i in range(arch.spec.m_T):
        G = arch.ers_generators[i, j, h]
        half = np.linalg.norm(G, axis=0)
        R = np.where(half > 0, G / np.where(half > 0, half, 1.0), np.eye(G.shape[0]))
        boxes.append(RotBox(arch.ers_centers[i, j, h], half, R))
    return ErsCellResult(j, h, int(arch.ers_status[j, h]), boxes)


def test_criterion_4_ers(acceptance_report, cartpole_archive):
    t0 = time.perf_counter()
    dominance = corner_dominance_oracle(50.0, 50.0, (-15.0, 15.0), (-5.0, 5.0))
    spec = cartpole_archive.spec
    rng = np.random.default_rng(4)
    valid = np.argwhere(cartpole_archive.ers_status == STATUS_VALID)
    pick = valid[rng.choice(len(valid), size=20, replace=False)]
    n_bad, n_total, worst = 0, 0, 0.0
    for j, h in pick:
        rep, _ = interior_containment_audit(spec, archive_cell(cartpole_archive, j, h), 100, rng, ErsSettings())
        n_bad += rep.n_violating_samples
        n_total += rep.n_samples
        worst = max(worst, rep.max_exceedance)
    elapsed = time.perf_counter() - t0
    ok = dominance and n_bad == 0 and elapsed < 600.0
    acceptance_report("4", ok, f"corner dominance (gamma_p=gamma_d=50, k in [-15,15]) {dominance}; "
                               f"20 cells x 100 interior samples: {n_bad}/{n_total} violating, "
                               f"max exceedance {worst:.2e}; {elapsed:.1f} s (limit 600 s)")
    assert ok


# -- 5. sliced FRS contains closed-loop motion ----------------------------------------------


def test_criterion_5_sliced_frs_containment(acceptance_report, cartpole_shield):
    shield = cartpole_shield
    spec = shield.spec
    rng = np.random.default_rng(5)
    valid = np.argwhere(shield.ers_status == STATUS_VALID)
    t0 = time.perf_counter()
    n_bad, n_pts = 0, 0
    duration = spec.timing.t_fin + spec.hold
    for _ in range(500):
        j, h = valid[rng.integers(len(valid))]
        (k, x0), = spec.interior_samples(int(j), int(h), 1, rng)
        x0 = x0.copy()
        x0[0] = rng.uniform(-3.0, 3.0)
        c, G = shield.sliced_tube(k, int(h))
        tube = PlanTube(0, 0.0, c + x0[0], G, spec.dt_T)
        tr = spec.robot.rollout(x0, k, duration, p0=float(x0[0]))
        fp = spec.footprint(tr.x)
        inside = tube_contains(tube, tr.t, fp, tol=1e-7)
        n_bad += int(not np.all(inside))
        n_pts += fp.shape[0]
    elapsed = time.perf_counter() - t0
    ok = n_bad == 0 and elapsed < 300.0
    acceptance_report("5", ok, f"500 closed-loop cartpole runs, {n_pts} samples checked, {n_bad} runs leaving "
                               f"the sliced FRS; {elapsed:.1f} s (limit 300 s)")
    assert ok


# -- 6 and 7. soak with a random policy ------------------------------------------------------


@pytest.fixture(scope="module")
def soak(cartpole_shield, car_shield):
    out = {}
    for name, shield, episodes, kw in (("cartpole", cartpole_shield, 200, {}),
                                       ("car", car_shield, 50, {"goal": 100.0})):
        env = make_env(name, shield.spec, **kw)
        t0 = time.perf_counter()
        recs, _ = evaluate(env, make_policy("random", env.spec, 0), episodes, shield, seed=0)
        out[name] = (recs, time.perf_counter() - t0)
    env = make_env("cartpole", cartpole_shield.spec)
    recs, _ = evaluate(env, make_policy("random", env.spec, 0), 200, None, seed=0)
    out["cartpole-unshielded"] = (recs, 0.0)
    return out


def _collisions(recs):
    return sum(r.status == COLLISION for r in recs)


def test_criterion_6_safety_soak(acceptance_report, soak):
    cp, car, neg = soak["cartpole"][0], soak["car"][0], soak["cartpole-unshielded"][0]
    c_cp, c_car, c_neg = _collisions(cp), _collisions(car), _collisions(neg)
    interv = {n: 100.0 * sum(r.interventions for r in soak[n][0]) / sum(r.n_iterations for r in soak[n][0])
              for n in ("cartpole", "car")}
    ok = c_cp == 0 and c_car == 0 and c_neg >= 1
    acceptance_report("6", ok, f"cartpole 200 ep shielded: {c_cp} collisions ({interv['cartpole']:.1f}% "
                               f"interventions); car 50 ep (100 m road): {c_car} collisions, "
                               f"{sum(r.status == GOAL for r in car)} goals; unshielded cartpole 200 ep: "
                               f"{c_neg} collisions (need >= 1)")
    assert ok


def test_criterion_7_adjust_time(acceptance_report, soak):
    means = {n: float(np.mean(np.concatenate([r.adjust_times for r in soak[n][0]]))) for n in ("cartpole", "car")}
    maxes = {n: float(np.max(np.concatenate([r.adjust_times for r in soak[n][0]]))) for n in ("cartpole", "car")}
    ok = means["cartpole"] < 0.1 and means["car"] < 2.0
    acceptance_report("7", ok, f"mean adjust cartpole {means['cartpole'] * 1e3:.2f} ms (max "
                               f"{maxes['cartpole'] * 1e3:.1f} ms, bound 100 ms); car {means['car'] * 1e3:.2f} ms "
                               f"(max {maxes['car'] * 1e3:.1f} ms, bound 2000 ms)")
    assert ok


# -- 8. desk-scale training -------------------------------------------------------------------


def test_criterion_8_training(acceptance_report, cartpole_shield):
    env = make_env("cartpole", cartpole_shield.spec)
    des = env.spec.K.des_part()
    agent = Td3(env.obs_dim, des.lo, des.hi, env.obs_scale, seed=0)
    t0 = time.perf_counter()
    res = safe_train(env, agent, 300, shield=cartpole_shield, lambda_d=1.0, seed=0)
    elapsed = time.perf_counter() - t0
    r = np.asarray(res.rewards)
    first, last = r[:50].mean(), r[-50:].mean()
    goals = 100.0 * sum(s == GOAL for s in res.statuses) / len(r)
    last_goals = 100.0 * sum(s == GOAL for s in res.statuses[-50:]) / 50
    ok = res.collisions == 0 and last > first
    acceptance_report("8", ok, f"300 episodes shielded: {res.collisions} collisions; mean reward first 50 "
                               f"{first:.1f}, last 50 {last:.1f}; goal rate {goals:.1f}% overall, "
                               f"{last_goals:.1f}% in the last 50; {elapsed:.0f} s")
    assert ok


# -- 9. drone smoke run ---------------------------------------------------------------------------


def test_criterion_9_drone_smoke(acceptance_report, drone_shield):
    env = make_env("drone", drone_shield.spec)
    t0 = time.perf_counter()
    recs, _ = evaluate(env, make_policy("random", env.spec, 0), 10, drone_shield, seed=0)
    elapsed = time.perf_counter() - t0
    n_col = _collisions(recs)
    statuses = {s: sum(r.status == s for r in recs) for s in sorted({r.status for r in recs})}
    mean_adj = float(np.mean(np.concatenate([r.adjust_times for r in recs])))
    ok = n_col == 0
    acceptance_report("9", ok, f"drone 10 episodes shielded: {n_col} collisions, outcomes {statuses}, "
                               f"mean adjust {mean_adj * 1e3:.1f} ms; {elapsed:.0f} s")
    assert ok
