import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from reachguard.planmodel import ParamBox
from reachguard.safeguard import (
    ConstraintSet,
    assemble_frs,
    beta_from_k,
    build_constraints,
    check_safe,
    halfplanes_batch,
)
from reachguard.zonogeom import RotBox, Zonotope, minkowski_sum, to_halfplanes, zono_from_box


def lp_member(c, G, p, tol=1e-9):
    res = linprog(np.zeros(G.shape[1]), A_eq=G, b_eq=np.asarray(p) - c,
                  bounds=[(-1 - tol, 1 + tol)] * G.shape[1], method="highs")
    return res.status == 0


def rot(a):
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


# -- parameter coordinates ---------------------------------------------------


def test_beta_from_k_corners_and_center():
    K = ParamBox.from_bounds([0, -2], [4, 2], n_init=1)
    np.testing.assert_allclose(beta_from_k([0, -2], K), [-1, -1])
    np.testing.assert_allclose(beta_from_k([2, 0], K), [0, 0])
    np.testing.assert_allclose(beta_from_k([4, 1], K), [1, 0.5])
    with pytest.raises(ValueError):
        beta_from_k([5, 0], K)
    with pytest.raises(ValueError):
        beta_from_k([1, 0, 0], K)


# -- halfplanes -------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_batched_halfplanes_match_lp(n, g, seed):
    rng = np.random.default_rng(seed)
    c, G = rng.normal(size=n), rng.normal(size=(n, g))
    A, b = halfplanes_batch(c, G)
    pts = c + rng.uniform(-1.5, 1.5, size=(20, g)) @ G.T
    res = (pts @ A.T - b).max(axis=1)
    for p, r in zip(pts, res):
        if abs(r) > 1e-7:
            assert lp_member(c, G, p) == (r < 0)


def test_batched_halfplanes_agree_with_reference():
    rng = np.random.default_rng(2)
    c, G = rng.normal(size=2), rng.normal(size=(2, 4))
    A, b = halfplanes_batch(c, G)
    H = to_halfplanes(Zonotope(c, G))
    pts = rng.normal(scale=3, size=(500, 2))
    a = (pts @ A.T - b).max(axis=1) <= 0
    r = H.residual(pts) <= 0
    assert np.array_equal(a, r)


def test_degenerate_generators_stay_bounded():
    # all generators parallel: the set is a segment
    A, b = halfplanes_batch(np.zeros(2), np.array([[1.0, 2.0], [0.0, 0.0]]))
    assert np.all(np.isfinite(b[np.any(A != 0, axis=1)]))
    assert ((np.array([[0.0, 0.5]]) @ A.T - b).max() > 0)  # off the segment
    assert ((np.array([[2.5, 0.0]]) @ A.T - b).max() <= 1e-12)


def test_one_dimensional_interval():
    A, b = halfplanes_batch(np.array([1.0]), np.array([[0.5, 0.25]]))
    res = lambda p: (np.array([[p]]) @ A.T - b).max()  # noqa: E731
    assert res(1.7) <= 0 and res(0.3) <= 0
    assert res(1.8) > 0 and res(0.2) > 0


# -- FRS assembly and the two safety checks ------------------------------------


def random_frs(rng, n_P=2, n_K=2):
    c = rng.normal(size=n_P + n_K)
    G = np.zeros((n_P + n_K, n_K + n_P))
    G[:n_P, :n_K] = rng.normal(size=(n_P, n_K))
    G[n_P:, :n_K] = np.diag(rng.uniform(0.5, 1.5, n_K))
    G[:n_P, n_K:] = np.diag(rng.uniform(0.05, 0.3, n_P))
    ers = RotBox(rng.normal(scale=0.1, size=n_P), rng.uniform(0.2, 0.6, n_P), rot(rng.uniform(0, np.pi)))
    Z = zono_from_box(ers)
    return assemble_frs(c, G, Z.center, Z.generators, n_P, n_K)


def test_assemble_frs_is_minkowski_sum():
    rng = np.random.default_rng(0)
    frs = random_frs(rng)
    assert frs.zono.dim == 4
    assert frs.G_slc.shape == (2, 2) and frs.G_extra.shape == (2, 4)
    with pytest.raises(ValueError):
        assemble_frs(np.zeros(4), np.zeros((4, 4)), np.zeros(2), np.eye(2), 2, 2, (1, 2, 0), prs_index=(1, 3))
    with pytest.raises(ValueError):
        assemble_frs(np.zeros(3), np.zeros((3, 3)), np.zeros(2), np.eye(2), 2, 2)


def test_check_safe_matches_lp_intersection():
    """Safe iff the sliced FRS and the obstacle do not intersect (LP oracle)."""
    rng = np.random.default_rng(11)
    agree = 0
    for _ in range(150):
        frs = random_frs(rng)
        obs = RotBox(rng.normal(scale=1.5, size=2), rng.uniform(0.2, 1.0, 2), rot(rng.uniform(0, np.pi)))
        beta = rng.uniform(-1, 1, 2)
        safe = check_safe([frs], [[build_constraints(frs, obs)]], beta)
        Zo = zono_from_box(obs)
        # sliced FRS <p, G_extra> meets obstacle iff p in <c_obs, [G_obs, G_extra]>
        p = frs.sliced_point(beta)
        inter = lp_member(Zo.center, np.hstack([Zo.generators, frs.G_extra]), p, tol=1e-10)
        assert safe == (not inter)
        agree += 1
    assert agree == 150


def test_check_safe_against_sampling():
    """Sampling oracle: no sampled point of a 'safe' slice lies in the obstacle."""
    rng = np.random.default_rng(12)
    for _ in range(100):
        frs = random_frs(rng)
        obs = RotBox(rng.normal(scale=1.5, size=2), rng.uniform(0.2, 1.0, 2), rot(rng.uniform(0, np.pi)))
        beta = rng.uniform(-1, 1, 2)
        if not check_safe([frs], [[build_constraints(frs, obs)]], beta):
            continue
        pts = frs.sliced_point(beta) + rng.uniform(-1, 1, (2000, frs.G_extra.shape[1])) @ frs.G_extra.T
        assert not np.any(obs.contains(pts))


def test_batched_route_agrees_with_per_cell_route():
    rng = np.random.default_rng(13)
    m_T, M = 4, 3
    cells = [random_frs(rng) for _ in range(m_T)]
    obstacles = [RotBox(rng.normal(scale=3.0, size=2), rng.uniform(0.2, 0.5, 2), rot(rng.uniform(0, 3)))
                 for _ in range(M)]
    c = np.array([f.c_slc for f in cells])
    G_slc = np.array([f.G_slc for f in cells])
    G_extra = np.array([f.G_extra for f in cells])
    oc = np.array([o.center for o in obstacles])
    og = np.array([o.rotation * o.half_lengths for o in obstacles])
    G = np.concatenate([np.broadcast_to(og[None], (m_T, M, 2, 2)),
                        np.broadcast_to(G_extra[:, None], (m_T, M, 2, 4))], axis=-1)
    A, b = halfplanes_batch(np.broadcast_to(oc[None], (m_T, M, 2)), G)
    cons = ConstraintSet(A, b, c, G_slc)
    betas = rng.uniform(-1, 1, (300, 2))
    batched = cons.safe(betas)
    hsets = [[build_constraints(f, o) for o in obstacles] for f in cells]
    single = np.array([check_safe(cells, hsets, bt) for bt in betas])
    assert np.array_equal(batched, single)
    assert 0 < batched.sum() < len(betas)


def test_touching_counts_as_unsafe():
    # 1-D: sliced point 0 with extra radius 0.5 touches an obstacle starting at 0.5
    c = np.array([0.0, 0.0])
    G = np.array([[0.0, 0.0], [1.0, 0.0]])
    frs = assemble_frs(c, G, np.zeros(1), np.array([[0.5]]), 1, 1)
    touching = RotBox([1.0], [0.5])
    apart = RotBox([1.0 + 1e-6], [0.5])
    assert not check_safe([frs], [[build_constraints(frs, touching)]], np.zeros(1))
    assert check_safe([frs], [[build_constraints(frs, apart)]], np.zeros(1))


# -- shield on the cartpole archive -----------------------------------------------


def walls(track=4.0):
    return [RotBox([-track - 0.5], [0.5]), RotBox([track + 0.5], [0.5])]


def test_identity_without_obstacles(cartpole_shield):
    res = cartpole_shield.adjust(np.zeros(4), [], [1.0])
    assert res.reason == "identity" and res.d == 0.0
    np.testing.assert_allclose(res.k_safe[-1], 1.0)


def test_clipped_request_reports_distance(cartpole_shield):
    res = cartpole_shield.adjust(np.zeros(4), [], [9.0])
    assert res.k_safe[-1] == pytest.approx(5.0) and res.d == pytest.approx(4.0)


def test_replacement_is_safe_and_nearest(cartpole_shield):
    sh = cartpole_shield
    x = np.array([3.0, 0.0, 0.0, 0.0])
    obs = walls()
    res = sh.adjust(x, obs, [5.0])
    assert res.reason == "replaced" and res.d > 0
    assert sh.is_safe(x, obs, res.k_safe)
    # every candidate strictly nearer to the request is unsafe
    for kd in sh.grid[sh.candidate_order([5.0])]:
        if abs(kd[0] - 5.0) >= res.d - 1e-12:
            break
        assert not sh.is_safe(x, obs, np.concatenate([res.k_safe[:2], kd]))


def test_tie_break_is_lexicographic(cartpole_shield):
    order = cartpole_shield.candidate_order([0.05])  # midway between 0.0 and 0.1
    g = cartpole_shield.grid[order[:2], 0]
    assert g[0] < g[1]


def test_failsafe_when_overlapping(cartpole_shield):
    res = cartpole_shield.adjust(np.zeros(4), [RotBox([0.0], [0.1])], [0.0])
    assert res.failsafe and res.intervened and res.reason == "no safe candidate"


def test_uncovered_state_warns(cartpole_shield, caplog):
    with caplog.at_level(logging.WARNING):
        res = cartpole_shield.adjust(np.array([0.0, 50.0, 0.0, 0.0]), [], [0.0])
    assert res.failsafe and res.reason == "uncovered"
    assert "coverage" in caplog.text


def test_wrong_dimension_rejected(cartpole_shield):
    with pytest.raises(ValueError):
        cartpole_shield.adjust(np.zeros(4), [], [0.0, 1.0])


def test_sliced_tube_contains_plan(cartpole_shield):
    sh = cartpole_shield
    spec = sh.spec
    x = np.array([0.0, 1.0, 0.2, 0.0])
    res = sh.adjust(x, [], [-2.0])
    h = spec.find_h(spec.lookup_state(x))
    c, G = sh.sliced_tube(res.k_safe, h)
    tr = spec.robot.rollout(x, res.k_safe, spec.timing.t_fin, p0=0.0)
    rad = np.abs(G).sum(-1)[:, 0]
    for t, xs in zip(tr.t, tr.x):
        i = min(int(t / spec.dt_T), spec.m_T - 1)
        fp = spec.footprint(xs)[0, :, 0]
        assert np.all(np.abs(fp - c[i, 0]) <= rad[i] + 1e-7)


def test_minkowski_reference_consistency():
    rng = np.random.default_rng(4)
    frs = random_frs(rng)
    beta = rng.uniform(-1, 1, 2)
    # the slice equals the PRS slice plus the ERS
    pts = frs.sliced_point(beta) + rng.uniform(-1, 1, (200, 4)) @ frs.G_extra.T
    full = minkowski_sum(Zonotope(frs.c_slc, frs.G_slc), Zonotope(np.zeros(2), frs.G_extra))
    H = to_halfplanes(full)
    assert np.all(H.residual(pts) <= 1e-9)
