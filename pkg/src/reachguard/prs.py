"""Planning Reachable Set: zonotopes over P x K that contain every plan.

For each time interval ``T^i`` and parameter cell ``K^j`` the cell zonotope is

    center     (p_lin(t_mid, c_j), c_j)
    generators n_K parameter generators (P rows from the plan's linearization
               about the cell center, k rows Delta_j[l] e_l), then n_P
               axis-aligned pad generators with zero k rows.

Plans are linear in a feature vector ``phi(k)`` (``phi = k`` except for the
car's lateral speed ``k1 sin k2``), so ``p_plan(t, k) = B(t) phi(k)``. The pad
bounds the time variation of ``B(t)`` over the interval (dense samples plus a
Lipschitz remainder between samples) and the feature linearization remainder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .robots import RobotSpec
from .zonogeom import Zonotope


@dataclass(frozen=True)
class TimePartition:
    m_T: int
    t_fin: float

    def __post_init__(self):
        if self.m_T < 1:
            raise ValueError("m_T must be >= 1")

    @property
    def dt(self) -> float:
        return self.t_fin / self.m_T

    def bounds(self, i: int) -> tuple[float, float]:
        if not 0 <= i < self.m_T:
            raise IndexError("time interval index out of range")
        return i * self.dt, (i + 1) * self.dt if i < self.m_T - 1 else self.t_fin


def partition_params(lo, hi, counts) -> list[tuple[np.ndarray, np.ndarray]]:
    """Axis-aligned cells of the box ``[lo, hi]`` split ``counts[d]`` times along
    the leading dimensions; trailing dimensions are left whole. Row-major order."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    counts = [int(c) for c in counts]
    if any(c < 1 for c in counts):
        raise ValueError("partition counts must be >= 1")
    edges = [np.linspace(lo[d], hi[d], c + 1) for d, c in enumerate(counts)]
    cells = []
    for sub in np.ndindex(*counts):
        clo, chi = lo.copy(), hi.copy()
        for d, s in enumerate(sub):
            clo[d], chi[d] = edges[d][s], edges[d][s + 1]
        cells.append((clo, chi))
    return cells


@dataclass(frozen=True)
class PrsCell:
    i: int
    j: int
    zono: Zonotope
    n_P: int
    n_K: int

    @property
    def param_generators(self) -> np.ndarray:
        return self.zono.generators[:, : self.n_K]

    @property
    def pad(self) -> np.ndarray:
        return np.diag(self.zono.generators[: self.n_P, self.n_K :])


def basis(spec: RobotSpec, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``B(t)``, ``dB/dt``, ``d2B/dt2`` with shape ``(n_t, n_P, n_phi)``."""
    t = np.atleast_1d(np.asarray(t, float))
    n_phi = spec.features(spec.K.c).size
    eye = np.eye(n_phi)
    # evaluating at unit feature vectors gives arrays of shape (n_t, n_phi, n_P)
    outs = spec.plan_features(t[:, None], eye[None, :, :])
    return tuple(np.swapaxes(o, 1, 2) for o in outs)


def _bound_linear(M: np.ndarray, phi_c: np.ndarray, phi_r: np.ndarray) -> np.ndarray:
    """Componentwise bound of ``|M phi|`` over ``phi in [phi_c - phi_r, phi_c + phi_r]``."""
    return np.abs(M @ phi_c) + np.abs(M) @ phi_r


def compute_prs_cell(spec: RobotSpec, j: int, i: int, n_samples: int = 64,
                     lipschitz_factor: float = 2.0) -> PrsCell:
    if not hasattr(spec, "plan_features") or not hasattr(spec, "feature_jacobian"):
        raise TypeError("robot spec lacks the affine decomposition hooks")
    tp = TimePartition(spec.m_T, spec.timing.t_fin)
    t_lo, t_hi = tp.bounds(i)
    lo, hi = spec.k_cell(j)
    c_k = 0.5 * (lo + hi)
    d_k = 0.5 * (hi - lo)
    t_mid = 0.5 * (t_lo + t_hi)

    B_mid = basis(spec, t_mid)[0][0]
    J = spec.feature_jacobian(c_k)
    A = B_mid @ J
    center_P = B_mid @ spec.features(c_k)

    flo, fhi = spec.feature_hull(lo, hi)
    phi_c, phi_r = 0.5 * (flo + fhi), 0.5 * (fhi - flo)
    ts = np.linspace(t_lo, t_hi, n_samples)
    B, Bd, Bdd = basis(spec, ts)
    D = B - B_mid
    time_pad = np.max([_bound_linear(Di, phi_c, phi_r) for Di in D], axis=0)
    v_max = np.max([_bound_linear(M, phi_c, phi_r) for M in Bd], axis=0)
    a_max = lipschitz_factor * np.max([_bound_linear(M, phi_c, phi_r) for M in Bdd], axis=0)
    h = (t_hi - t_lo) / (n_samples - 1)
    lip_pad = (v_max + a_max * h / 2.0) * h / 2.0
    lin_pad = np.abs(B_mid) @ spec.linearization_remainder(lo, hi, c_k)
    pad = time_pad + lip_pad + lin_pad

    n_P, n_K = spec.n_P, spec.n_K
    G = np.zeros((n_P + n_K, n_K + n_P))
    G[:n_P, :n_K] = A * d_k
    G[n_P:, :n_K] = np.diag(d_k)
    G[:n_P, n_K:] = np.diag(pad)
    return PrsCell(i, j, Zonotope(np.concatenate([center_P, c_k]), G), n_P, n_K)


def build_prs(spec: RobotSpec, n_samples: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """All PRS cells as dense arrays: centers ``(m_T, m_K, n)`` and generators
    ``(m_T, m_K, n, n_K + n_P)`` with ``n = n_P + n_K``."""
    n = spec.n_P + spec.n_K
    centers = np.empty((spec.m_T, spec.m_K, n))
    gens = np.empty((spec.m_T, spec.m_K, n, spec.n_K + spec.n_P))
    for i in range(spec.m_T):
        for j in range(spec.m_K):
            cell = compute_prs_cell(spec, j, i, n_samples)
            centers[i, j] = cell.zono.center
            gens[i, j] = cell.zono.generators
    return centers, gens


def containment_residual(center: np.ndarray, gens: np.ndarray, n_P: int, n_K: int, points: np.ndarray) -> np.ndarray:
    """Exact membership residual of ``(p, k)`` points in a structured PRS cell.

    The parameter generators are the only ones with nonzero k rows, so their
    coefficients are determined by ``k``; what remains must fit in the pad box.
    Returns the largest violation per point (<= 0 means contained).
    """
    pts = np.atleast_2d(points)
    dk = np.diag(gens[n_P:, :n_K])
    beta = (pts[:, n_P:] - center[n_P:]) / dk
    beta_excess = np.max(np.abs(beta) - 1.0, axis=1)
    resid = pts[:, :n_P] - center[:n_P] - beta @ gens[:n_P, :n_K].T
    pad = np.diag(gens[:n_P, n_K:])
    pad_excess = np.max(np.abs(resid) - pad, axis=1)
    return np.maximum(beta_excess, pad_excess)


def sample_cell_points(spec: RobotSpec, i: int, j: int, n: int, rng: np.random.Generator) -> np.ndarray:
    tp = TimePartition(spec.m_T, spec.timing.t_fin)
    t_lo, t_hi = tp.bounds(i)
    lo, hi = spec.k_cell(j)
    t = rng.uniform(t_lo, t_hi, size=n)
    k = rng.uniform(lo, hi, size=(n, spec.n_K))
    # include interval endpoints and cell corners among the samples
    t[: min(n, 2)] = [t_lo, t_hi][: min(n, 2)]
    n_c = min(n // 4, 2 ** spec.n_K)
    for r in range(n_c):
        bits = (r >> np.arange(spec.n_K)) & 1
        k[2 + r] = np.where(bits, hi, lo)
    p = spec.plan(t, k)[0]
    return np.hstack([p, k])
