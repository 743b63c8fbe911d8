"""Per-robot reachability settings tying the plan family to the simulator.

A :class:`RobotSpec` bundles everything the offline builders and the online
shield need to know about one robot: plan timing and parameter box, the
partitions of ``K_init`` and of the initial-condition set ``X0``, which
parameters are pinned to which state coordinates, the body footprint, the
plan's linear feature map and the candidate grid used by the shield.
"""

from __future__ import annotations

import inspect
import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import planmodel as pm
from .dynamics import CarParams, CarRobot, CartpoleParams, CartpoleRobot, DroneParams, DroneRobot


@dataclass(frozen=True)
class StateDim:
    """One partitioned coordinate of ``X0``: its state index and cell edges."""

    index: int
    edges: tuple
    name: str = ""

    def __post_init__(self):
        e = tuple(float(v) for v in self.edges)
        if len(e) < 2 or any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError(f"edges of {self.name or self.index} must be strictly increasing")
        object.__setattr__(self, "edges", e)

    @property
    def n_cells(self) -> int:
        return len(self.edges) - 1

    @property
    def lo(self) -> float:
        return self.edges[0]

    @property
    def hi(self) -> float:
        return self.edges[-1]


def locate(edges, value: float, tol: float = 0.0) -> int | None:
    """Cell index of ``value``; boundary points go to the lower-index cell."""
    e = np.asarray(edges)
    if value < e[0] - tol or value > e[-1] + tol:
        return None
    idx = int(np.searchsorted(e, value, side="left")) - 1
    return min(max(idx, 0), e.size - 2)


def uniform_edges(lo: float, hi: float, n: int) -> tuple:
    if n < 1:
        raise ValueError("partition counts must be >= 1")
    return tuple(np.linspace(lo, hi, n + 1))


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


class RobotSpec:
    """Base class; subclasses fill in the robot-specific pieces."""

    name: str
    n_P: int
    hold: float  # seconds of post-t_fin hold folded into the last ERS interval

    def __init__(self, robot, K: pm.ParamBox, k_counts, x0_dims, ties, m_T: int,
                 candidate_counts, n_boundary: int = 0):
        self.robot = robot
        self.timing = robot.timing
        self.K = K
        self.k_counts = tuple(int(c) for c in k_counts)
        if len(self.k_counts) != K.n_init or min(self.k_counts) < 1:
            raise ValueError("one positive count per K_init dimension is required")
        self.x0_dims = tuple(x0_dims)
        self.ties = tuple(ties)  # (k index, state index)
        self.m_T = int(m_T)
        self.candidate_counts = tuple(int(c) for c in candidate_counts)
        self.n_boundary = n_boundary

    # -- partitions ------------------------------------------------------------

    @property
    def n_K(self) -> int:
        return self.K.dim

    @property
    def dt_T(self) -> float:
        return self.timing.t_fin / self.m_T

    def k_edges(self) -> list[np.ndarray]:
        lo, hi = self.K.lo, self.K.hi
        return [np.linspace(lo[d], hi[d], self.k_counts[d] + 1) for d in range(self.K.n_init)]

    @property
    def m_K(self) -> int:
        return int(np.prod(self.k_counts))

    @property
    def m_0(self) -> int:
        return int(np.prod([d.n_cells for d in self.x0_dims]))

    def k_cell(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Bounds ``(lo, hi)`` of parameter cell ``j`` over all of K."""
        sub = np.unravel_index(j, self.k_counts)
        lo, hi = self.K.lo.copy(), self.K.hi.copy()
        for d, (e, s) in enumerate(zip(self.k_edges(), sub)):
            lo[d], hi[d] = e[s], e[s + 1]
        return lo, hi

    def x0_cell(self, h: int) -> tuple[np.ndarray, np.ndarray]:
        sub = np.unravel_index(h, [d.n_cells for d in self.x0_dims])
        lo = np.array([d.edges[s] for d, s in zip(self.x0_dims, sub)])
        hi = np.array([d.edges[s + 1] for d, s in zip(self.x0_dims, sub)])
        return lo, hi

    def find_j(self, k_init) -> int | None:
        subs = []
        for e, v in zip(self.k_edges(), k_init):
            s = locate(e, float(v), tol=1e-9)
            if s is None:
                return None
            subs.append(s)
        return int(np.ravel_multi_index(subs, self.k_counts))

    def x0_coords(self, x) -> np.ndarray:
        return np.array([x[d.index] for d in self.x0_dims], float)

    def find_h(self, x, tol: float = 1e-9) -> int | None:
        subs = []
        for d, v in zip(self.x0_dims, self.x0_coords(x)):
            s = locate(d.edges, float(v), tol=tol)
            if s is None:
                return None
            subs.append(s)
        return int(np.ravel_multi_index(subs, [d.n_cells for d in self.x0_dims]))

    def _tied_interval(self, k_idx, s_idx, h):
        lo, hi = self.x0_cell(h)
        pos = [d.index for d in self.x0_dims].index(s_idx)
        kl, kh = self.K.lo[k_idx], self.K.hi[k_idx]
        return np.clip(lo[pos], kl, kh), np.clip(hi[pos], kl, kh)

    def pair_valid(self, j: int, h: int) -> bool:
        """Whether some state of ``X0^h`` maps into ``K^j`` under f_init."""
        klo, khi = self.k_cell(j)
        for k_idx, s_idx in self.ties:
            tlo, thi = self._tied_interval(k_idx, s_idx, h)
            if k_idx >= self.K.n_init:
                continue
            if min(thi, khi[k_idx]) - max(tlo, klo[k_idx]) <= 1e-12 and not (
                tlo == thi and klo[k_idx] <= tlo <= khi[k_idx]
            ):
                return False
        return True

    # -- sampling the (k, x0) product -------------------------------------------

    def _free_k(self) -> list[int]:
        tied = {k for k, _ in self.ties}
        return [d for d in range(self.n_K) if d not in tied]

    def assemble(self, j: int, h: int, x0_vals: np.ndarray, k_free: np.ndarray):
        """Build ``(k, x0)`` from X0 coordinates and untied parameters."""
        klo, khi = self.k_cell(j)
        k = np.empty(self.n_K)
        k[self._free_k()] = k_free
        x0 = self.base_state()
        for d, v in zip(self.x0_dims, x0_vals):
            x0[d.index] = v
        for k_idx, s_idx in self.ties:
            k[k_idx] = np.clip(x0[s_idx], klo[k_idx], khi[k_idx])
        self.complete_state(x0, k)
        return k, x0

    def corner_samples(self, j: int, h: int):
        klo, khi = self.k_cell(j)
        xlo, xhi = self.x0_cell(h)
        free = self._free_k()
        lows = np.concatenate([xlo, klo[free]])
        highs = np.concatenate([xhi, khi[free]])
        n_x = xlo.size
        out = []
        for bits in itertools.product((0, 1), repeat=lows.size):
            v = np.where(np.array(bits, bool), highs, lows)
            out.append(self.assemble(j, h, v[:n_x], v[n_x:]))
        return out

    def interior_samples(self, j: int, h: int, n: int, rng: np.random.Generator):
        klo, khi = self.k_cell(j)
        xlo, xhi = self.x0_cell(h)
        free = self._free_k()
        out = []
        for _ in range(n):
            xv = rng.uniform(xlo, xhi)
            kv = rng.uniform(klo[free], khi[free])
            out.append(self.assemble(j, h, xv, kv))
        return out

    # -- hooks -----------------------------------------------------------------

    def base_state(self) -> np.ndarray:
        return np.zeros(self.robot.n_state)

    def complete_state(self, x0: np.ndarray, k: np.ndarray) -> None:
        """Fill state coordinates that depend on ``k`` (drone attitude)."""

    def features(self, k) -> np.ndarray:
        return np.asarray(k, float)

    def feature_jacobian(self, c) -> np.ndarray:
        return np.eye(self.n_K)

    def feature_hull(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Interval hull of the features over the box ``[lo, hi]``."""
        return np.asarray(lo, float), np.asarray(hi, float)

    def linearization_remainder(self, lo, hi, c) -> np.ndarray:
        """Bound on ``|phi(k) - phi(c) - J(c)(k - c)|`` per feature over the box."""
        return np.zeros(self.n_K)

    def plan_features(self, t, phi):
        """``(p, v, a)`` of the plan expressed in features; trailing dim ``n_P``."""
        raise NotImplementedError

    def plan(self, t, k):
        return self.plan_features(t, self.features(k))

    def footprint(self, states: np.ndarray) -> np.ndarray:
        """Footprint vertices, shape ``(n_states, n_vertices, n_P)``."""
        raise NotImplementedError

    def position(self, x) -> np.ndarray:
        return np.asarray(x, float)[..., : self.n_P]

    def f_init(self, x, prev=None) -> np.ndarray:
        raise NotImplementedError

    def candidate_grid(self) -> np.ndarray:
        """Uniform grid over K_des, rows ordered lexicographically."""
        d = self.K.des_part()
        axes = [np.linspace(lo, hi, n) for lo, hi, n in zip(d.lo, d.hi, self.candidate_counts)]
        return np.array(list(itertools.product(*axes)))

    def braking_k_des(self) -> np.ndarray:
        return np.zeros(self.K.n_des)

    def lookup_state(self, x) -> np.ndarray:
        """State as seen by the X0 cell lookup."""
        return np.asarray(x, float)


def _box_vertices(half: np.ndarray) -> np.ndarray:
    return np.array(list(itertools.product(*[(-h, h) for h in half])))


class CartpoleSpec(RobotSpec):
    name = "cartpole"
    n_P = 1
    hold = 0.5

    def __init__(self, params: CartpoleParams = CartpoleParams(), timing: pm.PlanTiming = pm.CARTPOLE_TIMING,
                 K: pm.ParamBox = pm.CARTPOLE_K, k_counts=(11, 5), m_T: int = 30,
                 theta_cells: int = 4, thetadot_range: float = 4 * np.pi, velocity_margin: float = 0.5,
                 cart_width: float = 0.5, n_candidates: int = 101):
        vel_edges = np.linspace(K.lo[0], K.hi[0], k_counts[0] + 1)
        vel_edges[0] -= velocity_margin
        vel_edges[-1] += velocity_margin
        x0_dims = (
            StateDim(1, tuple(vel_edges), "pdot"),
            StateDim(2, uniform_edges(-np.pi, np.pi, theta_cells), "theta"),
            StateDim(3, (-thetadot_range, thetadot_range), "thetadot"),
        )
        super().__init__(CartpoleRobot(params, timing), K, k_counts, x0_dims, ties=((0, 1),), m_T=m_T,
                         candidate_counts=(n_candidates,))
        self.cart_width = float(cart_width)

    def plan_features(self, t, phi):
        phi = np.asarray(phi, float)
        p, v, a = pm._eval_family(t, phi[..., 0], phi[..., 1], phi[..., 2], self.timing.t_des[0], self.timing.t_fin)
        return p[..., None], v[..., None], a[..., None]

    def footprint(self, states):
        p = np.atleast_2d(states)[:, 0]
        off = np.array([-0.5, 0.5]) * self.cart_width
        return (p[:, None] + off)[..., None]

    def f_init(self, x, prev=None):
        return pm.cartpole_f_init(x, prev, self.K, self.timing)

    def lookup_state(self, x):
        x = np.array(x, float)
        x[2] = wrap_angle(x[2])
        return x


class CarSpec(RobotSpec):
    name = "car"
    n_P = 2
    hold = 4.0

    def __init__(self, params: CarParams = CarParams(), timing: pm.PlanTiming = pm.CAR_TIMING,
                 K: pm.ParamBox | None = None, k_counts=(2, 1), m_T: int = 120,
                 heading_cells: int = 13, speed_cells: int = 2, steer_cells: int = 5,
                 speed_margin: float = 0.25, length: float = 4.8, width: float = 2.0,
                 n_candidates=(21, 21)):
        if K is None:
            # heading is confined to +-0.3 rad by the state envelope; the
            # remaining coordinates use the published ranges
            K = pm.ParamBox.from_bounds([0.0, -0.3, 0.0, -1.0], [5.0, 0.3, 5.0, 1.0], n_init=2)
        speed_edges = np.linspace(K.lo[0], K.hi[0], speed_cells + 1)
        speed_edges[-1] += speed_margin
        x0_dims = (
            StateDim(2, uniform_edges(-0.3, 0.3, heading_cells), "psi"),
            StateDim(3, tuple(speed_edges), "v"),
            StateDim(4, uniform_edges(-0.1, 0.1, steer_cells), "delta"),
        )
        super().__init__(CarRobot(params, timing), K, k_counts, x0_dims, ties=((0, 3), (1, 2)), m_T=m_T,
                         candidate_counts=n_candidates)
        self.half = np.array([length, width]) / 2.0

    def features(self, k):
        return pm.car_features(k)

    def feature_jacobian(self, c):
        c = np.asarray(c, float)
        J = np.zeros((4, 4))
        J[0, 0] = 1.0
        J[1, 0] = np.sin(c[1])
        J[1, 1] = c[0] * np.cos(c[1])
        J[2, 2] = 1.0
        J[3, 3] = 1.0
        return J

    def feature_hull(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        # k1 * sin(k2) is monotone in each argument on the box (|k2| < pi/2)
        prods = [a * np.sin(b) for a in (lo[0], hi[0]) for b in (lo[1], hi[1])]
        flo = np.array([lo[0], min(prods), lo[2], lo[3]])
        fhi = np.array([hi[0], max(prods), hi[2], hi[3]])
        return flo, fhi

    def linearization_remainder(self, lo, hi, c):
        # Taylor remainder of s(k1, k2) = k1 sin k2 about c over the box:
        # second derivatives s_11 = 0, s_12 = cos k2, s_22 = -k1 sin k2
        lo, hi, c = (np.asarray(v, float) for v in (lo, hi, c))
        d1 = max(hi[0] - c[0], c[0] - lo[0])
        d2 = max(hi[1] - c[1], c[1] - lo[1])
        max_cos = 1.0 if lo[1] <= 0.0 <= hi[1] else max(np.cos(lo[1]), np.cos(hi[1]))
        max_ks = max(abs(lo[0]), abs(hi[0])) * max(abs(np.sin(lo[1])), abs(np.sin(hi[1])))
        r = np.zeros(4)
        r[1] = d1 * d2 * max_cos + 0.5 * max_ks * d2 * d2
        return r

    def plan_features(self, t, phi):
        return pm.car_plan_features(t, phi, self.timing)

    def footprint(self, states):
        s = np.atleast_2d(states)
        corners = _box_vertices(self.half)  # (4, 2)
        c, sn = np.cos(s[:, 2]), np.sin(s[:, 2])
        R = np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)  # (N, 2, 2)
        return s[:, None, :2] + np.einsum("nij,vj->nvi", R, corners)

    def f_init(self, x, prev=None):
        return pm.car_f_init(x, prev, self.K)

    def braking_k_des(self):
        return np.zeros(2)


def trim_attitude(acc, g: float = 9.81) -> np.ndarray:
    """Attitude whose thrust axis delivers acceleration ``acc`` with heading along +x."""
    f = np.asarray(acc, float) + np.array([0.0, 0.0, g])
    b3 = f / np.linalg.norm(f)
    b2 = np.cross(b3, [1.0, 0.0, 0.0])
    b2 /= np.linalg.norm(b2)
    b1 = np.cross(b2, b3)
    return np.column_stack([b1, b2, b3])


class DroneSpec(RobotSpec):
    name = "drone"
    n_P = 3
    hold = 3.0

    def __init__(self, params: DroneParams = DroneParams(), timing: pm.PlanTiming = pm.DRONE_TIMING,
                 K: pm.ParamBox | None = None, m_T: int = 60, body: float = 0.3, n_candidates=(11, 11, 11)):
        if K is None:
            # per-axis (k_v, k_a, k_des) limits the controller can track with thrust in [0, 2mg]
            hw = np.array([5.0, 3.0, 2.0, 6.0, 6.0, 4.0, 5.0, 3.0, 2.0])
            K = pm.ParamBox.from_bounds(-hw, hw, n_init=6)
        x0_dims = tuple(StateDim(3 + a, (K.lo[a], K.hi[a]), f"v{a}") for a in range(3))
        super().__init__(DroneRobot(params, timing), K, (1,) * 6, x0_dims,
                         ties=((0, 3), (1, 4), (2, 5)), m_T=m_T, candidate_counts=n_candidates)
        self.half = np.full(3, body / 2.0)
        self.g = params.g

    def base_state(self):
        x = np.zeros(18)
        x[6:15] = np.eye(3).ravel()
        return x

    def complete_state(self, x0, k):
        x0[6:15] = trim_attitude(k[3:6], self.g).ravel()

    def plan_features(self, t, phi):
        phi = np.asarray(phi, float)
        outs = [pm._eval_family(t, phi[..., a], phi[..., 3 + a], phi[..., 6 + a],
                                self.timing.t_des[0], self.timing.t_fin) for a in range(3)]
        return tuple(np.stack([o[i] for o in outs], axis=-1) for i in range(3))

    def footprint(self, states):
        s = np.atleast_2d(states)
        R = s[:, 6:15].reshape(-1, 3, 3)
        return s[:, None, :3] + np.einsum("nij,vj->nvi", R, _box_vertices(self.half))

    def f_init(self, x, prev=None):
        return pm.drone_f_init(x, prev, self.K, self.timing)


SPECS = {"cartpole": CartpoleSpec, "car": CarSpec, "drone": DroneSpec}


def make_spec(robot: str, **overrides) -> RobotSpec:
    try:
        cls = SPECS[robot]
    except KeyError:
        raise ValueError(f"unknown robot {robot!r}; expected one of {sorted(SPECS)}") from None
    overrides = dict(overrides)
    # nested settings may arrive as plain mappings from a config file
    if isinstance(overrides.get("params"), dict):
        default = inspect.signature(cls).parameters["params"].default
        overrides["params"] = replace(default, **{k: _tuples(v) for k, v in overrides["params"].items()})
    if isinstance(overrides.get("timing"), dict):
        overrides["timing"] = pm.PlanTiming(**{k: _tuples(v) for k, v in overrides["timing"].items()})
    if isinstance(overrides.get("K"), dict):
        overrides["K"] = pm.ParamBox(**{k: _tuples(v) for k, v in overrides["K"].items()})
    return cls(**overrides)


def _tuples(v):
    """Nested lists (as read from JSON or YAML) to nested tuples."""
    return tuple(_tuples(e) for e in v) if isinstance(v, (list, tuple)) else v
