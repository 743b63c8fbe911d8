import numpy as np
import pytest

from reachguard.ers import (
    STATUS_UNREACHABLE,
    STATUS_VALID,
    ErsCellResult,
    ErsSettings,
    audit_and_inflate,
    bin_offsets,
    build_ers,
    compute_ers_cell,
    corner_dominance_oracle,
    corners,
    double_integrator_error_exact,
    double_integrator_peak_error,
    footprint_points,
    interior_containment_audit,
    simulate_offsets,
)
from reachguard.robots import make_spec
from reachguard.zonogeom import RotBox, min_bounding_box


@pytest.fixture(scope="module")
def cartpole():
    return make_spec("cartpole")


@pytest.fixture(scope="module")
def cart_cell(cartpole):
    # j on the k_v edge tied to the middle of pdot; h: first theta cell
    j, h = 5 * 5 + 2, 5 * 4 + 1
    assert cartpole.pair_valid(j, h)
    return compute_ers_cell(cartpole, j, h, ErsSettings(), np.random.default_rng(0))


# -- corners and footprints ---------------------------------------------------


def test_corners_small_boxes():
    np.testing.assert_array_equal(corners([-1], [1]), [[-1], [1]])
    assert corners([0, 0], [1, 1]).shape == (4, 2)
    c3 = corners([0, 0, 0], [1, 2, 3])
    assert c3.shape == (8, 3)
    assert np.all((c3 == 0) | (c3 == [1, 2, 3]))
    assert len({tuple(r) for r in c3}) == 8


def test_corners_rejects_large_or_bad():
    with pytest.raises(ValueError):
        corners(np.zeros(13), np.ones(13))
    with pytest.raises(ValueError):
        corners([0.0], [np.inf])


def test_car_footprint_axis_aligned_and_rotated():
    spec = make_spec("car")
    x = np.array([3.0, 4.0, 0.0, 1.0, 0.0])
    fp = footprint_points(spec, x)[0]
    expect = {(3 + sx * 2.4, 4 + sy * 1.0) for sx in (-1, 1) for sy in (-1, 1)}
    assert {tuple(np.round(p, 12)) for p in fp} == {tuple(np.round(e, 12)) for e in expect}
    psi = 0.2
    x[2] = psi
    R = np.array([[np.cos(psi), -np.sin(psi)], [np.sin(psi), np.cos(psi)]])
    offs = footprint_points(spec, x)[0] - [3.0, 4.0]
    base = np.array(sorted(expect)) - [3.0, 4.0]
    rotated = base @ R.T
    for o in offs:
        assert np.min(np.linalg.norm(rotated - o, axis=1)) < 1e-12


def test_cartpole_footprint_is_interval(cartpole):
    fp = footprint_points(cartpole, np.array([1.0, 0.0, 0.3, 0.0]))
    np.testing.assert_allclose(fp[0, :, 0], [0.75, 1.25])


# -- offsets and cells ----------------------------------------------------------


def test_rest_state_zero_plan_offsets_are_footprint(cartpole):
    offs = simulate_offsets(cartpole, np.zeros(3), np.zeros(4), ErsSettings())
    lo, hi = offs[..., 0].min(), offs[..., 0].max()
    assert lo >= -0.25 - 1e-3 and hi <= 0.25 + 1e-3
    box = min_bounding_box(offs.reshape(-1, 1))
    assert box.half_lengths[0] == pytest.approx(0.25, abs=1e-3)


def test_bins_share_boundaries_and_keep_hold(cartpole):
    s = ErsSettings()
    offs = simulate_offsets(cartpole, np.zeros(3), np.zeros(4), s)
    bins = bin_offsets(cartpole, offs, s)
    assert len(bins) == cartpole.m_T
    np.testing.assert_array_equal(bins[0][-1], bins[1][0])
    # hold phase folded into the last interval
    assert bins[-1].shape[0] > bins[0].shape[0]


def test_cell_contains_every_collected_offset(cartpole, cart_cell):
    assert cart_cell.status == STATUS_VALID
    s = ErsSettings()
    for k, x0 in cartpole.corner_samples(cart_cell.j, cart_cell.h):
        for box, chunk in zip(cart_cell.boxes, bin_offsets(cartpole, simulate_offsets(cartpole, k, x0, s), s)):
            assert np.all(box.contains(chunk.reshape(-1, 1), tol=1e-12))


def test_audit_corner_samples_pass(cartpole, cart_cell):
    samples = cartpole.corner_samples(cart_cell.j, cart_cell.h)
    rep, _ = interior_containment_audit(cartpole, cart_cell, len(samples), None, samples=samples)
    assert rep.n_violating_samples == 0


def test_audit_interior_passes(cartpole, cart_cell):
    rep, _ = interior_containment_audit(cartpole, cart_cell, 30, np.random.default_rng(7))
    assert rep.passed and rep.violation_fraction == 0.0


def test_audit_flags_shrunk_boxes(cartpole, cart_cell):
    shrunk = ErsCellResult(cart_cell.j, cart_cell.h, STATUS_VALID,
                           [RotBox(b.center, 0.5 * b.half_lengths, b.rotation) for b in cart_cell.boxes])
    rep, exceed = interior_containment_audit(cartpole, shrunk, 10, np.random.default_rng(3))
    assert rep.n_violating_samples > 0 and rep.max_exceedance > 0
    assert exceed.shape == (cartpole.m_T, 1)


def test_inflation_repairs_shrunk_boxes(cartpole, cart_cell):
    shrunk = ErsCellResult(cart_cell.j, cart_cell.h, STATUS_VALID,
                           [RotBox(b.center, 0.5 * b.half_lengths, b.rotation) for b in cart_cell.boxes])
    rep = audit_and_inflate(cartpole, shrunk, np.random.default_rng(4),
                            ErsSettings(audit_samples=10, max_inflation_rounds=5))
    assert rep.rounds >= 1 and rep.passed


def test_unreachable_pair_marked(cartpole):
    # fastest k_v cell against the slowest pdot cell
    j, h = 10 * 5, 0
    assert not cartpole.pair_valid(j, h)
    assert compute_ers_cell(cartpole, j, h).status == STATUS_UNREACHABLE


def test_build_ers_deterministic_subset(cartpole):
    pairs = [(27, 21), (0, 0)]
    s = ErsSettings(audit_samples=5, extra_samples=4)
    a = build_ers(cartpole, s, seed=3, pairs=pairs)
    b = build_ers(cartpole, s, seed=3, pairs=pairs)
    np.testing.assert_array_equal(a["generators"], b["generators"])
    np.testing.assert_array_equal(a["status"], b["status"])
    assert a["status"][27, 21] == STATUS_VALID
    assert a["status"][1, 1] == STATUS_UNREACHABLE  # not requested


# -- corner dominance on the double integrator ------------------------------


def test_closed_form_matches_rk4():
    ts = np.linspace(0.0, 1.0, 11)
    exact = np.abs(double_integrator_error_exact(50, 50, 15.0, ts)).max()
    assert double_integrator_peak_error(50, 50, 15.0, 2.0) == pytest.approx(exact, rel=1e-4)


def test_error_linear_in_k_des():
    e1 = double_integrator_peak_error(50, 50, 5.0, 0.0)
    e3 = double_integrator_peak_error(50, 50, 15.0, 0.0)
    assert e3 == pytest.approx(3 * e1, rel=1e-9)


def test_corner_dominance_double_integrator():
    assert corner_dominance_oracle(50, 50, (-15, 15), (-5, 5), n_interior=20)


def test_corner_dominance_trivial_cases():
    assert corner_dominance_oracle(50, 50, (3.0, 3.0), (1.0, 1.0), n_interior=5)
    assert double_integrator_peak_error(50, 50, 0.0, 2.0) == pytest.approx(0.0, abs=1e-12)
