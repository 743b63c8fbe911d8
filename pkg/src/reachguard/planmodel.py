"""Parameterized planning models for the cartpole, car and drone.

Every plan starts at the origin of the robot's local frame and ends at rest.
The cartpole and drone share one 1-D family (initial velocity ``k_v``, initial
acceleration ``k_a``, desired velocity ``k_des`` reached at ``t_des``, then a
brake to zero by ``t_fin``). The car uses a quartic longitudinal speed change
and a quintic lane-offset maneuver.

Scalar kernels are compiled with numba so the closed-loop integrators can call
them from inside their own compiled loops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned parameter box ``K = box(c_K, Delta_K)``.

    The first ``n_init`` coordinates form ``K_init``; the rest form ``K_des``.
    """

    center: tuple
    half_widths: tuple
    n_init: int

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        d = tuple(float(v) for v in self.half_widths)
        if len(c) != len(d):
            raise ValueError("center and half_widths differ in length")
        if any(v <= 0 for v in d):
            raise ValueError("half_widths must be positive")
        if not 0 <= self.n_init <= len(c):
            raise ValueError("n_init out of range")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_widths", d)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def n_des(self) -> int:
        return self.dim - self.n_init

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)

    @property
    def delta(self) -> np.ndarray:
        return np.array(self.half_widths)

    @property
    def lo(self) -> np.ndarray:
        return self.c - self.delta

    @property
    def hi(self) -> np.ndarray:
        return self.c + self.delta

    def contains(self, k, tol: float = 1e-12) -> bool:
        k = np.asarray(k, float)
        return bool(np.all(k >= self.lo - tol) and np.all(k <= self.hi + tol))

    def init_part(self) -> "ParamBox":
        return ParamBox(self.center[: self.n_init], self.half_widths[: self.n_init], self.n_init)

    def des_part(self) -> "ParamBox":
        return ParamBox(self.center[self.n_init :], self.half_widths[self.n_init :], 0)

    @classmethod
    def from_bounds(cls, lo, hi, n_init: int) -> "ParamBox":
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        return cls(tuple(0.5 * (lo + hi)), tuple(0.5 * (hi - lo)), n_init)


@dataclass(frozen=True)
class PlanTiming:
    t_plan: float
    t_des: tuple
    t_fin: float

    def __post_init__(self):
        t_des = tuple(float(v) for v in np.atleast_1d(self.t_des))
        object.__setattr__(self, "t_des", t_des)
        if not 0 < self.t_plan < self.t_fin:
            raise ValueError("need 0 < t_plan < t_fin")
        if any(not 0 < td < self.t_fin for td in t_des):
            raise ValueError("each t_des must lie in (0, t_fin)")


CARTPOLE_TIMING = PlanTiming(t_plan=0.1, t_des=(0.1,), t_fin=0.3)
CARTPOLE_K = ParamBox(center=(0.0, 0.0, 0.0), half_widths=(5.0, 15.0, 5.0), n_init=2)

CAR_TIMING = PlanTiming(t_plan=2.0, t_des=(2.0, 4.0), t_fin=6.0)
CAR_K = ParamBox(center=(2.5, 0.0, 2.5, 0.0), half_widths=(2.5, 1.0, 2.5, 1.0), n_init=2)

DRONE_TIMING = PlanTiming(t_plan=1.0, t_des=(1.5,), t_fin=3.0)
DRONE_K = ParamBox(
    center=(0.0,) * 9,
    half_widths=(5.0, 5.0, 5.0, 10.0, 10.0, 10.0, 5.0, 5.0, 5.0),
    n_init=6,
)


# -- compiled kernels --------------------------------------------------------


@njit(cache=True)
def _quartic_seg(s, v0, a0, dv, da, T):
    T3 = T * T * T
    tau1 = (-12.0 * dv + 6.0 * T * da) / T3
    tau2 = (6.0 * T * dv - 2.0 * T * T * da) / T3
    s2 = s * s
    s3 = s2 * s
    p = tau1 / 24.0 * s3 * s + tau2 / 6.0 * s3 + 0.5 * a0 * s2 + v0 * s
    v = tau1 / 6.0 * s3 + 0.5 * tau2 * s2 + a0 * s + v0
    a = 0.5 * tau1 * s2 + tau2 * s + a0
    return p, v, a


@njit(cache=True)
def _quintic_seg(s, v0, dp, dv, T):
    T2 = T * T
    T5 = T2 * T2 * T
    t4 = (720.0 * dp - 360.0 * T * dv) / T5
    t5 = (-360.0 * T * dp + 168.0 * T2 * dv) / T5
    t6 = (60.0 * T2 * dp - 24.0 * T2 * T * dv) / T5
    s2 = s * s
    s3 = s2 * s
    s4 = s3 * s
    p = t4 / 120.0 * s4 * s + t5 / 24.0 * s4 + t6 / 6.0 * s3 + v0 * s
    v = t4 / 24.0 * s4 + t5 / 6.0 * s3 + 0.5 * t6 * s2 + v0
    a = t4 / 6.0 * s3 + 0.5 * t5 * s2 + t6 * s
    return p, v, a


@njit(cache=True)
def family1d(t, kv, ka, kdes, tdes, tfin):
    """(p, v, a) of the 1-D plan; times past ``tfin`` hold the final point."""
    if t < tdes:
        return _quartic_seg(t, kv, ka, kdes - kv - ka * tdes, -ka, tdes)
    p1, _, _ = _quartic_seg(tdes, kv, ka, kdes - kv - ka * tdes, -ka, tdes)
    if t >= tfin:
        p2, _, _ = _quartic_seg(tfin - tdes, kdes, 0.0, -kdes, 0.0, tfin - tdes)
        return p1 + p2, 0.0, 0.0
    p2, v2, a2 = _quartic_seg(t - tdes, kdes, 0.0, -kdes, 0.0, tfin - tdes)
    return p1 + p2, v2, a2


@njit(cache=True)
def car_lateral(t, s_lat, kd2, tdes2):
    """Lateral plan given the initial lateral speed ``s_lat = k1 sin(k2)``."""
    if t >= tdes2:
        return kd2, 0.0, 0.0
    dv = -s_lat
    dp = kd2 + tdes2 * dv
    return _quintic_seg(t, s_lat, dp, dv, tdes2)


@njit(cache=True)
def _family1d_batch(t, kv, ka, kd, tdes, tfin, out):
    for i in range(t.size):
        p, v, a = family1d(t[i], kv[i], ka[i], kd[i], tdes, tfin)
        out[i, 0] = p
        out[i, 1] = v
        out[i, 2] = a


@njit(cache=True)
def _car_lateral_batch(t, s, kd2, tdes2, out):
    for i in range(t.size):
        p, v, a = car_lateral(t[i], s[i], kd2[i], tdes2)
        out[i, 0] = p
        out[i, 1] = v
        out[i, 2] = a


# -- vectorized public API ---------------------------------------------------


def _check_time(t, timing: PlanTiming) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > timing.t_fin) or not np.all(np.isfinite(t)):
        raise ValueError(f"t must lie in [0, {timing.t_fin}]")
    return t


def _eval_family(t, kv, ka, kd, tdes, tfin):
    t, kv, ka, kd = np.broadcast_arrays(
        np.asarray(t, float), np.asarray(kv, float), np.asarray(ka, float), np.asarray(kd, float)
    )
    shape = t.shape
    out = np.empty((t.size, 3))
    _family1d_batch(
        np.ascontiguousarray(t).ravel(),
        np.ascontiguousarray(kv).ravel(),
        np.ascontiguousarray(ka).ravel(),
        np.ascontiguousarray(kd).ravel(),
        float(tdes),
        float(tfin),
        out,
    )
    return out[:, 0].reshape(shape), out[:, 1].reshape(shape), out[:, 2].reshape(shape)


def cartpole_plan_derivs(t, k, timing: PlanTiming = CARTPOLE_TIMING):
    """Position, velocity and acceleration of the cartpole plan.

    ``k`` has trailing dimension 3: ``(k_v, k_a, k_des)``; ``t`` broadcasts
    against ``k[..., 0]``.
    """
    t = _check_time(t, timing)
    k = np.asarray(k, float)
    return _eval_family(t, k[..., 0], k[..., 1], k[..., 2], timing.t_des[0], timing.t_fin)


def cartpole_plan(t, k, timing: PlanTiming = CARTPOLE_TIMING):
    return cartpole_plan_derivs(t, k, timing)[0]


def cartpole_plan_vel(t, k, timing: PlanTiming = CARTPOLE_TIMING):
    return cartpole_plan_derivs(t, k, timing)[1]


def cartpole_plan_acc(t, k, timing: PlanTiming = CARTPOLE_TIMING):
    return cartpole_plan_derivs(t, k, timing)[2]


def car_features(k) -> np.ndarray:
    """Map ``(k_init1, k_init2, k_des1, k_des2)`` to the plan's linear features
    ``(k_init1, k_init1*sin(k_init2), k_des1, k_des2)``."""
    k = np.asarray(k, float)
    return np.stack([k[..., 0], k[..., 0] * np.sin(k[..., 1]), k[..., 2], k[..., 3]], axis=-1)


def car_plan_features(t, phi, timing: PlanTiming = CAR_TIMING):
    """Car plan as a function of the feature vector from :func:`car_features`.

    Returns ``(p, v, a)`` each with trailing dimension 2 (longitudinal, lateral).
    """
    phi = np.asarray(phi, float)
    t = np.asarray(t, float)
    p1, v1, a1 = _eval_family(
        t, phi[..., 0], np.zeros_like(phi[..., 0]), phi[..., 2], timing.t_des[0], timing.t_fin
    )
    tb, s, kd2 = np.broadcast_arrays(t, phi[..., 1], phi[..., 3])
    out = np.empty((tb.size, 3))
    _car_lateral_batch(
        np.ascontiguousarray(tb).ravel(),
        np.ascontiguousarray(s).ravel(),
        np.ascontiguousarray(kd2).ravel(),
        float(timing.t_des[1]),
        out,
    )
    p2, v2, a2 = (out[:, i].reshape(tb.shape) for i in range(3))
    return np.stack([p1, p2], -1), np.stack([v1, v2], -1), np.stack([a1, a2], -1)


def car_plan_derivs(t, k, timing: PlanTiming = CAR_TIMING):
    t = _check_time(t, timing)
    return car_plan_features(t, car_features(k), timing)


def car_plan(t, k, timing: PlanTiming = CAR_TIMING):
    return car_plan_derivs(t, k, timing)[0]


def drone_plan_derivs(t, k, timing: PlanTiming = DRONE_TIMING):
    """Three decoupled 1-D plans. ``k`` is ``(k_v[3], k_a[3], k_des[3])``."""
    t = _check_time(t, timing)
    k = np.asarray(k, float)
    outs = [
        _eval_family(t, k[..., ax], k[..., 3 + ax], k[..., 6 + ax], timing.t_des[0], timing.t_fin)
        for ax in range(3)
    ]
    return tuple(np.stack([o[i] for o in outs], axis=-1) for i in range(3))


def drone_plan(t, k, timing: PlanTiming = DRONE_TIMING):
    return drone_plan_derivs(t, k, timing)[0]


# -- initial-condition maps --------------------------------------------------


def _clamp_init(k_init: np.ndarray, box: ParamBox, label: str) -> np.ndarray:
    init = box.init_part()
    clipped = np.clip(k_init, init.lo, init.hi)
    if not np.array_equal(clipped, k_init):
        logger.warning("%s f_init clamped %s to K_init", label, np.array2string(k_init, precision=4))
    return clipped


def cartpole_f_init(x, prev=None, box: ParamBox = CARTPOLE_K, timing: PlanTiming = CARTPOLE_TIMING):
    """``(k_v, k_a)`` from the cart velocity and the previous plan's acceleration.

    ``prev`` is ``(k_prev, t_handoff)`` or None at episode start.
    """
    x = np.asarray(x, float)
    k_a = 0.0
    if prev is not None:
        k_prev, t_h = prev
        k_a = float(cartpole_plan_acc(min(t_h, timing.t_fin), k_prev, timing))
    return _clamp_init(np.array([x[1], k_a]), box, "cartpole")


def car_f_init(x, prev=None, box: ParamBox = CAR_K):
    x = np.asarray(x, float)
    return _clamp_init(np.array([x[3], x[2]]), box, "car")


def drone_f_init(x, prev=None, box: ParamBox = DRONE_K, timing: PlanTiming = DRONE_TIMING):
    """Per-axis ``(velocity, previous planned acceleration)``; state is
    ``(p[3], v[3], R[9], omega[3])``."""
    x = np.asarray(x, float)
    acc = np.zeros(3)
    if prev is not None:
        k_prev, t_h = prev
        acc = drone_plan_derivs(min(t_h, timing.t_fin), k_prev, timing)[2]
    return _clamp_init(np.concatenate([x[3:6], acc]), box, "drone")
