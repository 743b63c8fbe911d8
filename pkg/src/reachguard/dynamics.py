"""High-fidelity robot models, tracking controllers and a fixed-step RK4 integrator.

Each robot has a compiled state derivative, a compiled tracking controller that
follows a plan from :mod:`reachguard.planmodel` anchored at a world position
``p0``, and a compiled rollout loop. Plan time ``t0`` lets a rollout resume a
plan partway through (the receding-horizon loop keeps tracking the previous
plan's braking tail when no new plan is approved).
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, field

import numpy as np
from numba import njit

from .planmodel import CAR_TIMING, CARTPOLE_TIMING, DRONE_TIMING, PlanTiming, car_lateral, family1d


class IntegrationError(RuntimeError):
    """Raised when a rollout produces a non-finite state."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at integration step {step}")
        self.step = step


# -- parameter records -------------------------------------------------------


@dataclass(frozen=True)
class CartpoleParams:
    w: float = 0.099
    m: float = 0.2
    m_c: float = 2.0
    l: float = 0.5
    g: float = 9.81
    gamma_p: float = 50.0
    gamma_d: float = 50.0
    u_max: float = 40.0

    def as_array(self, timing: PlanTiming = CARTPOLE_TIMING) -> np.ndarray:
        return np.array(astuple(self) + (timing.t_des[0], timing.t_fin))


def _default_car_gain():
    # rows: (u1, u2); columns: (p_long, p_lat, psi, v, delta)
    return ((-3.0, 0.0, 0.0, -8.0, 0.0), (0.0, -0.5, -1.5, 0.0, -1.0))


@dataclass(frozen=True)
class CarParams:
    c: tuple = (-0.05, 1.0, 10.0, 1.5, 0.08, 0.5, 0.02)
    gain: tuple = field(default_factory=_default_car_gain)
    u1_max: float = 4.0
    u2_max: float = 2.0
    steer_cmd_max: float = 0.1
    brake_fade: float = 8.0

    def as_array(self, timing: PlanTiming = CAR_TIMING) -> np.ndarray:
        G = np.asarray(self.gain, float)
        if G.shape != (2, 5):
            raise ValueError("car gain matrix must be 2x5")
        return np.concatenate(
            [self.c, G.ravel(), [self.u1_max, self.u2_max, timing.t_des[0], timing.t_des[1], timing.t_fin,
                                 self.steer_cmd_max, self.brake_fade]]
        )


@dataclass(frozen=True)
class DroneParams:
    mass: float = 0.547
    inertia: tuple = (3.3e-3, 3.3e-3, 5.8e-3)
    g: float = 9.81
    k_x: float = 2.0
    k_v: float = 0.5
    k_R: float = 1.0
    k_omega: float = 0.03
    thrust_max_factor: float = 2.0
    moment_max: float = 0.1

    def as_array(self, timing: PlanTiming = DRONE_TIMING) -> np.ndarray:
        return np.array(
            [self.mass, *self.inertia, self.g, self.k_x, self.k_v, self.k_R, self.k_omega,
             self.thrust_max_factor, self.moment_max, timing.t_des[0], timing.t_fin]
        )


CARTPOLE_DT = 1e-3
CAR_DT = 1e-3
DRONE_DT = 5e-4


# -- cartpole ----------------------------------------------------------------


@njit(cache=True)
def _cartpole_deriv(x, u, prm, out):
    w, m, mc, l, g = prm[0], prm[1], prm[2], prm[3], prm[4]
    s, c = np.sin(x[2]), np.cos(x[2])
    thd2 = x[3] * x[3]
    den = w * (mc + m) + m * l * l * (mc + m * s * s)
    out[0] = x[1]
    out[1] = ((w + m * l * l) * (u + m * l * thd2 * s) - g * m * m * l * l * s * c) / den
    out[2] = x[3]
    out[3] = -m * l * (u * c + m * l * thd2 * s * c - (mc + m) * g * s) / den


@njit(cache=True)
def _cartpole_ctrl(t, x, k, p0, prm):
    p, v, _ = family1d(t, k[0], k[1], k[2], prm[8], prm[9])
    u = prm[5] * (p + p0 - x[0]) + prm[6] * (v - x[1])
    return min(max(u, -prm[7]), prm[7])


@njit(cache=True)
def _cartpole_rollout(x0, k, p0, t0, n_steps, dt, prm):
    traj = np.empty((n_steps + 1, 4))
    traj[0] = x0
    x = x0.copy()
    k1, k2, k3, k4 = np.empty(4), np.empty(4), np.empty(4), np.empty(4)
    for i in range(n_steps):
        t = t0 + i * dt
        _cartpole_deriv(x, _cartpole_ctrl(t, x, k, p0, prm), prm, k1)
        xs = x + 0.5 * dt * k1
        _cartpole_deriv(xs, _cartpole_ctrl(t + 0.5 * dt, xs, k, p0, prm), prm, k2)
        xs = x + 0.5 * dt * k2
        _cartpole_deriv(xs, _cartpole_ctrl(t + 0.5 * dt, xs, k, p0, prm), prm, k3)
        xs = x + dt * k3
        _cartpole_deriv(xs, _cartpole_ctrl(t + dt, xs, k, p0, prm), prm, k4)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return traj, i + 1
        traj[i + 1] = x
    return traj, -1


# -- car ---------------------------------------------------------------------


@njit(cache=True)
def _car_deriv(x, u1, u2, prm, out):
    c1, c2, c3, c4, c5, c6, c7 = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5], prm[6]
    psi, v, delta = x[2], x[3], x[4]
    omega = v * np.tan(delta) / (c4 + c5 * v * v)
    v_lat = omega * (c6 + c7 * v * v)
    cp, sp = np.cos(psi), np.sin(psi)
    out[0] = v * cp - v_lat * sp
    out[1] = v * sp + v_lat * cp
    out[2] = omega
    out[3] = c1 * v + c2 * u1
    out[4] = c3 * (u2 - delta)


@njit(cache=True)
def _car_ctrl(t, x, k, p0, prm):
    # k holds features (k_init1, k_init1*sin(k_init2), k_des1, k_des2)
    p1, v1, _ = family1d(t, k[0], 0.0, k[2], prm[19], prm[21])
    p2, _, _ = car_lateral(t, k[1], k[3], prm[20])
    e0 = x[0] - (p1 + p0[0])
    e1 = x[1] - (p2 + p0[1])
    e2 = x[2]
    e3 = x[3] - v1
    e4 = x[4]
    u1 = prm[7] * e0 + prm[8] * e1 + prm[9] * e2 + prm[10] * e3 + prm[11] * e4
    u2 = prm[12] * e0 + prm[13] * e1 + prm[14] * e2 + prm[15] * e3 + prm[16] * e4
    # braking authority fades to zero at standstill so the car never reverses
    u1 = min(max(u1, -min(prm[17], prm[23] * x[3])), prm[17])
    # commanded steering stays inside the steering-angle envelope
    u2_lim = min(prm[18], prm[22])
    u2 = min(max(u2, -u2_lim), u2_lim)
    return u1, u2


@njit(cache=True)
def _car_stage(t, x, k, p0, prm, out):
    u1, u2 = _car_ctrl(t, x, k, p0, prm)
    _car_deriv(x, u1, u2, prm, out)


@njit(cache=True)
def _car_rollout(x0, k, p0, t0, n_steps, dt, prm):
    traj = np.empty((n_steps + 1, 5))
    traj[0] = x0
    x = x0.copy()
    k1, k2, k3, k4 = np.empty(5), np.empty(5), np.empty(5), np.empty(5)
    for i in range(n_steps):
        t = t0 + i * dt
        _car_stage(t, x, k, p0, prm, k1)
        _car_stage(t + 0.5 * dt, x + 0.5 * dt * k1, k, p0, prm, k2)
        _car_stage(t + 0.5 * dt, x + 0.5 * dt * k2, k, p0, prm, k3)
        _car_stage(t + dt, x + dt * k3, k, p0, prm, k4)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return traj, i + 1
        traj[i + 1] = x
    return traj, -1


# -- drone -------------------------------------------------------------------
# state layout: p[0:3], v[3:6], R row-major[6:15], omega[15:18]


@njit(cache=True)
def _hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


@njit(cache=True)
def _drone_deriv(x, tau, mu, prm, out):
    m, g = prm[0], prm[4]
    J = prm[1:4]
    R = x[6:15].reshape(3, 3)
    om = x[15:18]
    out[0:3] = x[3:6]
    out[3] = tau * R[0, 2] / m
    out[4] = tau * R[1, 2] / m
    out[5] = tau * R[2, 2] / m - g
    out[6:15] = (R @ _hat(om)).ravel()
    Jw = J * om
    out[15] = (mu[0] - (om[1] * Jw[2] - om[2] * Jw[1])) / J[0]
    out[16] = (mu[1] - (om[2] * Jw[0] - om[0] * Jw[2])) / J[1]
    out[17] = (mu[2] - (om[0] * Jw[1] - om[1] * Jw[0])) / J[2]


@njit(cache=True)
def _drone_ctrl(t, x, k, p0, prm):
    m, g = prm[0], prm[4]
    J = prm[1:4]
    kx, kv, kR, kW = prm[5], prm[6], prm[7], prm[8]
    tdes, tfin = prm[11], prm[12]
    F = np.empty(3)
    for ax in range(3):
        p, v, a = family1d(t, k[ax], k[3 + ax], k[6 + ax], tdes, tfin)
        F[ax] = -kx * (x[ax] - p - p0[ax]) - kv * (x[3 + ax] - v) + m * a
    F[2] += m * g
    R = x[6:15].reshape(3, 3)
    om = x[15:18]
    tau = F[0] * R[0, 2] + F[1] * R[1, 2] + F[2] * R[2, 2]
    tau = min(max(tau, 0.0), prm[9] * m * g)
    nF = np.sqrt(F[0] ** 2 + F[1] ** 2 + F[2] ** 2)
    if nF < 1e-9:
        b3 = np.array([0.0, 0.0, 1.0])
    else:
        b3 = F / nF
    b1d = np.array([1.0, 0.0, 0.0])
    b2 = np.cross(b3, b1d)
    nb2 = np.sqrt(b2[0] ** 2 + b2[1] ** 2 + b2[2] ** 2)
    if nb2 < 1e-9:
        b2 = np.array([0.0, 1.0, 0.0])
    else:
        b2 = b2 / nb2
    b1 = np.cross(b2, b3)
    Rd = np.empty((3, 3))
    Rd[:, 0] = b1
    Rd[:, 1] = b2
    Rd[:, 2] = b3
    E = Rd.T @ R - R.T @ Rd
    eR = 0.5 * np.array([E[2, 1], E[0, 2], E[1, 0]])
    Jw = J * om
    mu = -kR * eR - kW * om + np.cross(om, Jw)
    for i in range(3):
        mu[i] = min(max(mu[i], -prm[10]), prm[10])
    return tau, mu


@njit(cache=True)
def _drone_stage(t, x, k, p0, prm, out):
    tau, mu = _drone_ctrl(t, x, k, p0, prm)
    _drone_deriv(x, tau, mu, prm, out)


ORTHO_EVERY = 20  # RK4 steps between projections of R back onto SO(3)


@njit(cache=True)
def _orthonormalize(x):
    R = x[6:15].reshape(3, 3)
    U, _, Vt = np.linalg.svd(R)
    x[6:15] = (U @ Vt).ravel()


@njit(cache=True)
def _drone_rollout(x0, k, p0, t0, n_steps, dt, prm):
    traj = np.empty((n_steps + 1, 18))
    traj[0] = x0
    x = x0.copy()
    k1, k2, k3, k4 = np.empty(18), np.empty(18), np.empty(18), np.empty(18)
    for i in range(n_steps):
        t = t0 + i * dt
        _drone_stage(t, x, k, p0, prm, k1)
        _drone_stage(t + 0.5 * dt, x + 0.5 * dt * k1, k, p0, prm, k2)
        _drone_stage(t + 0.5 * dt, x + 0.5 * dt * k2, k, p0, prm, k3)
        _drone_stage(t + dt, x + dt * k3, k, p0, prm, k4)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            return traj, i + 1
        if (i + 1) % ORTHO_EVERY == 0:
            _orthonormalize(x)
        traj[i + 1] = x
    return traj, -1


# -- public wrappers ---------------------------------------------------------


def cartpole_deriv(x, u, params: CartpoleParams = CartpoleParams()) -> np.ndarray:
    out = np.empty(4)
    _cartpole_deriv(np.asarray(x, float), float(u), params.as_array(), out)
    return out


def cartpole_tracking(t, x, k, p0=0.0, params: CartpoleParams = CartpoleParams(),
                      timing: PlanTiming = CARTPOLE_TIMING) -> float:
    """Saturated PD force toward the plan ``p0 + p_plan(t, k)``."""
    return float(_cartpole_ctrl(float(t), np.asarray(x, float), np.asarray(k, float),
                                float(p0), params.as_array(timing)))


def car_deriv(x, u, params: CarParams = CarParams()) -> np.ndarray:
    out = np.empty(5)
    _car_deriv(np.asarray(x, float), float(u[0]), float(u[1]), params.as_array(), out)
    return out


def car_tracking(t, x, k, p0=(0.0, 0.0), params: CarParams = CarParams(),
                 timing: PlanTiming = CAR_TIMING) -> np.ndarray:
    k = np.asarray(k, float)
    feat = np.array([k[0], k[0] * np.sin(k[1]), k[2], k[3]])
    u1, u2 = _car_ctrl(float(t), np.asarray(x, float), feat, np.asarray(p0, float), params.as_array(timing))
    return np.array([u1, u2])


def drone_deriv(x, u, params: DroneParams = DroneParams()) -> np.ndarray:
    out = np.empty(18)
    u = np.asarray(u, float)
    _drone_deriv(np.asarray(x, float), float(u[0]), u[1:4].copy(), params.as_array(), out)
    return out


def drone_tracking(t, x, k, p0=(0.0, 0.0, 0.0), params: DroneParams = DroneParams(),
                   timing: PlanTiming = DRONE_TIMING) -> np.ndarray:
    """Geometric SE(3) thrust and body moment, returned as ``(tau, mu1, mu2, mu3)``."""
    tau, mu = _drone_ctrl(float(t), np.asarray(x, float), np.asarray(k, float),
                          np.asarray(p0, float), params.as_array(timing))
    return np.concatenate([[tau], mu])


def drone_hover_state(p=(0.0, 0.0, 0.0), v=(0.0, 0.0, 0.0), R=None, omega=(0.0, 0.0, 0.0)) -> np.ndarray:
    R = np.eye(3) if R is None else np.asarray(R, float)
    return np.concatenate([p, v, R.ravel(), omega]).astype(float)


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray

    def to_csv(self, path, header: str) -> None:
        np.savetxt(path, np.column_stack([self.t, self.x]), delimiter=",", header=header, comments="")


def _n_steps(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n <= 0 or abs(n * dt - duration) > 1e-12 * max(1.0, duration):
        raise ValueError(f"dt={dt} does not divide duration={duration}")
    return n


class Robot:
    """Closed-loop simulator bound to one robot's parameters and plan timing."""

    name: str
    n_state: int
    dt: float

    def __init__(self, params, timing: PlanTiming):
        self.params = params
        self.timing = timing
        self._prm = params.as_array(timing)

    def plan_vector(self, k) -> np.ndarray:
        """Parameters in the layout the compiled controller expects."""
        return np.asarray(k, float)

    def origin(self, x0) -> np.ndarray:
        raise NotImplementedError

    def _kernel(self):
        raise NotImplementedError

    def rollout(self, x0, k, duration: float, dt: float | None = None, p0=None, t0: float = 0.0) -> Trajectory:
        """Track plan ``k`` anchored at ``p0`` (default: position of ``x0``)
        for ``duration`` seconds starting at plan time ``t0``."""
        dt = self.dt if dt is None else float(dt)
        n = _n_steps(duration, dt)
        x0 = np.ascontiguousarray(x0, dtype=float)
        if x0.shape != (self.n_state,):
            raise ValueError(f"{self.name} state must have {self.n_state} entries")
        p0 = self.origin(x0) if p0 is None else p0
        traj, bad = self._kernel()(x0, self.plan_vector(k), self._anchor(p0), float(t0), n, dt, self._prm)
        if bad >= 0:
            raise IntegrationError(bad)
        return Trajectory(t0 + dt * np.arange(n + 1), traj)

    def _anchor(self, p0):
        return np.ascontiguousarray(p0, dtype=float)


class CartpoleRobot(Robot):
    name = "cartpole"
    n_state = 4
    dt = CARTPOLE_DT

    def __init__(self, params: CartpoleParams = CartpoleParams(), timing: PlanTiming = CARTPOLE_TIMING):
        super().__init__(params, timing)

    def origin(self, x0):
        return float(x0[0])

    def _anchor(self, p0):
        return float(np.asarray(p0, float).reshape(-1)[0])

    def _kernel(self):
        return _cartpole_rollout


class CarRobot(Robot):
    name = "car"
    n_state = 5
    dt = CAR_DT

    def __init__(self, params: CarParams = CarParams(), timing: PlanTiming = CAR_TIMING):
        super().__init__(params, timing)

    def plan_vector(self, k):
        k = np.asarray(k, float)
        return np.array([k[0], k[0] * np.sin(k[1]), k[2], k[3]])

    def origin(self, x0):
        return np.array(x0[:2], float)

    def _kernel(self):
        return _car_rollout


class DroneRobot(Robot):
    name = "drone"
    n_state = 18
    dt = DRONE_DT

    def __init__(self, params: DroneParams = DroneParams(), timing: PlanTiming = DRONE_TIMING):
        super().__init__(params, timing)

    def origin(self, x0):
        return np.array(x0[:3], float)

    def _kernel(self):
        return _drone_rollout


def integrate(robot: Robot, x0, k, duration: float, dt: float | None = None) -> Trajectory:
    """Closed-loop RK4 rollout from ``x0`` tracking plan ``k``; samples every ``dt``."""
    return robot.rollout(x0, k, duration, dt)
