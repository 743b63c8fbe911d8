"""Online safety layer: FRS assembly, slicing, obstacle constraints and adjust.

The forward reachable set of cell ``(i, j, h)`` is the PRS cell plus the ERS
cell (zero in the parameter rows). Fixing the parameter coefficients to
``beta_k`` slices it to the set reachable under the single plan ``k``:

    c_slc + G_slc beta_k  (+)  <0, G_extra>

A plan is unsafe against obstacle ``<c_obs, G_obs>`` exactly when the sliced
point ``c_slc + G_slc beta_k`` lies in ``<c_obs, [G_obs, G_extra]>``; that set is
converted to halfplanes once per iteration and every candidate is tested with
one matrix product.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass

import numpy as np

from .ers import STATUS_VALID
from .planmodel import ParamBox
from .robots import RobotSpec
from .zonogeom import RotBox, Zonotope, cartesian_product, minkowski_sum

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FrsCell:
    """FRS over ``P x K`` plus its split into sliceable and extra blocks."""

    i: int
    j: int
    h: int
    zono: Zonotope
    n_P: int
    n_K: int

    @property
    def c_slc(self) -> np.ndarray:
        return self.zono.center[: self.n_P]

    @property
    def G_slc(self) -> np.ndarray:
        return self.zono.generators[: self.n_P, : self.n_K]

    @property
    def G_extra(self) -> np.ndarray:
        return self.zono.generators[: self.n_P, self.n_K :]

    def sliced_point(self, beta) -> np.ndarray:
        return self.c_slc + self.G_slc @ np.asarray(beta, float)


@dataclass
class AdjustResult:
    k_safe: np.ndarray | None
    d: float | None
    k_rl: np.ndarray | None = None
    n_checked: int = 0
    reason: str = ""

    @property
    def failsafe(self) -> bool:
        return self.k_safe is None

    @property
    def intervened(self) -> bool:
        return self.k_safe is None or bool(self.d and self.d > 0.0)


def assemble_frs(prs_center, prs_gens, ers_center, ers_gens, n_P: int, n_K: int,
                 index=(0, 0, 0), prs_index=None) -> FrsCell:
    """Minkowski sum of a PRS cell and an ERS cell lifted into ``P x K``.

    ``prs_index`` is the ``(i, j)`` the PRS cell was built for; a mismatch with
    ``index`` is rejected.
    """
    if prs_index is not None and tuple(prs_index) != tuple(index[:2]):
        raise ValueError(f"PRS cell {tuple(prs_index)} does not match FRS index {tuple(index)}")
    prs = Zonotope(prs_center, prs_gens)
    if prs.dim != n_P + n_K:
        raise ValueError("PRS dimension differs from n_P + n_K")
    ers = Zonotope(ers_center, ers_gens)
    if ers.dim != n_P:
        raise ValueError("ERS dimension differs from n_P")
    lifted = cartesian_product(ers, Zonotope(np.zeros(n_K), np.zeros((n_K, 0))))
    return FrsCell(*index, minkowski_sum(prs, lifted), n_P, n_K)


def beta_from_k(k, K: ParamBox, tol: float = 1e-9) -> np.ndarray:
    """Normalized coordinate ``(k - c) / delta`` of ``k`` in the box ``K``."""
    k = np.asarray(k, float)
    if k.shape != K.c.shape:
        raise ValueError("parameter dimension mismatch")
    if not K.contains(k, tol=tol):
        raise ValueError("parameter lies outside its box")
    safe = np.where(K.delta > 0, K.delta, 1.0)
    return np.where(K.delta > 0, (k - K.c) / safe, 0.0)


# -- halfplanes in batch ---------------------------------------------------


def _normals(G: np.ndarray) -> np.ndarray:
    """Candidate facet normals for generator stacks ``(..., n, g)``.

    Returns ``(..., r, n)`` with zero rows where a candidate degenerates. The
    coordinate axes are always appended; extra supporting halfplanes never
    change the polytope, and they keep degenerate sets bounded.
    """
    n = G.shape[-2]
    batch = G.shape[:-2]
    if n == 1:
        return np.ones(batch + (1, 1))
    gens = np.swapaxes(G, -1, -2)  # (..., g, n)
    if n == 2:
        cand = np.stack([-gens[..., 1], gens[..., 0]], axis=-1)
    elif n == 3:
        pairs = list(itertools.combinations(range(gens.shape[-2]), 2))
        a = gens[..., [p for p, _ in pairs], :]
        b = gens[..., [q for _, q in pairs], :]
        cand = np.cross(a, b)
    else:
        raise ValueError("constraints need a workspace of dimension 1, 2 or 3")
    axes = np.broadcast_to(np.eye(n), batch + (n, n))
    cand = np.concatenate([cand, axes], axis=-2)
    norm = np.linalg.norm(cand, axis=-1, keepdims=True)
    ok = norm > 1e-12 * max(1.0, float(np.abs(G).max(initial=0.0)))
    return np.where(ok, cand / np.where(ok, norm, 1.0), 0.0)


def halfplanes_batch(center: np.ndarray, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Halfplanes ``A y <= b`` of zonotopes ``<center, G>`` in batch.

    ``center`` is ``(..., n)``, ``G`` is ``(..., n, g)``. Unused rows have
    ``A = 0`` and ``b = +inf``.
    """
    N = _normals(G)
    N = np.concatenate([N, -N], axis=-2)
    b = np.einsum("...rn,...n->...r", N, center) + np.abs(np.einsum("...rn,...ng->...rg", N, G)).sum(-1)
    unused = ~np.any(N != 0, axis=-1)
    return N, np.where(unused, np.inf, b)


@dataclass
class ConstraintSet:
    """Stacked halfplanes for every (time interval, obstacle) pair of one (j, h)."""

    A: np.ndarray  # (m_T, M, r, n_P)
    b: np.ndarray  # (m_T, M, r)
    c_slc: np.ndarray  # (m_T, n_P)
    G_slc: np.ndarray  # (m_T, n_P, n_K)

    @property
    def n_obstacles(self) -> int:
        return self.A.shape[1]

    def residuals(self, betas: np.ndarray) -> np.ndarray:
        """Per candidate, time interval and obstacle: ``max(A p - b)`` of the
        sliced point. Positive means the point is outside the obstacle set."""
        betas = np.atleast_2d(betas)
        P = self.c_slc[None] + np.einsum("ipk,nk->nip", self.G_slc, betas)  # (N, m_T, n_P)
        return (np.einsum("imrp,nip->nimr", self.A, P) - self.b[None]).max(axis=-1)

    def safe(self, betas: np.ndarray) -> np.ndarray:
        if self.n_obstacles == 0:
            return np.ones(np.atleast_2d(betas).shape[0], bool)
        return np.all(self.residuals(betas) > 0.0, axis=(1, 2))


def build_constraints(frs: FrsCell, obstacle: RotBox):
    """Halfplanes of ``<c_obs, [G_obs, G_extra]>`` for one FRS cell and obstacle."""
    from .zonogeom import HalfplaneSet

    if obstacle.dim != frs.n_P:
        raise ValueError("obstacle dimension differs from the workspace")
    G = np.hstack([obstacle.rotation * obstacle.half_lengths, frs.G_extra])
    A, b = halfplanes_batch(obstacle.center, G)
    keep = np.isfinite(b)
    return HalfplaneSet(A[keep], b[keep])


def check_safe(frs_cells, halfplane_sets, beta) -> bool:
    """Safe iff the sliced point is strictly outside every obstacle set.

    ``halfplane_sets[i]`` lists the obstacle halfplanes for ``frs_cells[i]``.
    """
    for cell, hs in zip(frs_cells, halfplane_sets):
        p = cell.sliced_point(beta)
        for H in hs:
            if H.residual(p)[0] <= 0.0:
                return False
    return True


# -- shield ----------------------------------------------------------------


class Shield:
    """Keep the agent's plan if safe, else the nearest safe
    candidate on a grid over ``K_des``, else report that the failsafe is needed.

    Args:
        spec: robot settings (partitions, plan family, candidate grid).
        prs_centers, prs_generators: PRS arrays ``(m_T, m_K, n)``, ``(m_T, m_K, n, n_K + n_P)``.
        ers_centers, ers_generators: ERS arrays ``(m_T, m_K, m_0, n_P)``, ``(m_T, m_K, m_0, n_P, n_P)``.
        ers_status: ``(m_K, m_0)`` status codes; only valid pairs are usable.
        chunk: candidates checked per batch.
    """

    def __init__(self, spec: RobotSpec, prs_centers, prs_generators, ers_centers, ers_generators,
                 ers_status, chunk: int = 128):
        self.spec = spec
        self.prs_centers = np.asarray(prs_centers, float)
        self.prs_generators = np.asarray(prs_generators, float)
        self.ers_centers = np.asarray(ers_centers, float)
        self.ers_generators = np.asarray(ers_generators, float)
        self.ers_status = np.asarray(ers_status)
        self.chunk = int(chunk)
        n_P, n_K = spec.n_P, spec.n_K
        if self.prs_centers.shape != (spec.m_T, spec.m_K, n_P + n_K):
            raise ValueError("PRS arrays do not match the robot partition")
        if self.ers_centers.shape != (spec.m_T, spec.m_K, spec.m_0, n_P):
            raise ValueError("ERS arrays do not match the robot partition")
        self.grid = spec.candidate_grid()
        self._cell_boxes = [spec.k_cell(j) for j in range(spec.m_K)]

    @classmethod
    def from_archive(cls, archive, **kw) -> "Shield":
        return cls(archive.spec, archive.prs_centers, archive.prs_generators, archive.ers_centers,
                   archive.ers_generators, archive.ers_status, **kw)

    # cell blocks
    def slice_blocks(self, j: int, h: int):
        """``c_slc (m_T, n_P)``, ``G_slc (m_T, n_P, n_K)``, ``G_extra (m_T, n_P, n_P + n_P)``."""
        n_P, n_K = self.spec.n_P, self.spec.n_K
        c = self.prs_centers[:, j, :n_P] + self.ers_centers[:, j, h]
        G_slc = self.prs_generators[:, j, :n_P, :n_K]
        G_extra = np.concatenate([self.prs_generators[:, j, :n_P, n_K:], self.ers_generators[:, j, h]], axis=-1)
        return c, G_slc, G_extra

    def frs_cell(self, i: int, j: int, h: int) -> FrsCell:
        return assemble_frs(self.prs_centers[i, j], self.prs_generators[i, j], self.ers_centers[i, j, h],
                            self.ers_generators[i, j, h], self.spec.n_P, self.spec.n_K, (i, j, h))

    def cell_param_box(self, j: int) -> ParamBox:
        lo, hi = self._cell_boxes[j]
        return ParamBox.from_bounds(lo, hi, self.spec.K.n_init)

    def constraints(self, j: int, h: int, obstacles_local) -> ConstraintSet:
        """Constraint set for obstacles given in the local planning frame."""
        c, G_slc, G_extra = self.slice_blocks(j, h)
        n_P = self.spec.n_P
        obs = self._relevant(c, G_slc, G_extra, obstacles_local)
        m_T = c.shape[0]
        if not obs:
            return ConstraintSet(np.zeros((m_T, 0, 1, n_P)), np.zeros((m_T, 0, 1)), c, G_slc)
        oc = np.array([o.center for o in obs])  # (M, n_P)
        og = np.array([o.rotation * o.half_lengths for o in obs])  # (M, n_P, n_P)
        M = len(obs)
        G = np.concatenate([np.broadcast_to(og[None], (m_T, M, n_P, n_P)),
                            np.broadcast_to(G_extra[:, None], (m_T, M) + G_extra.shape[1:])], axis=-1)
        A, b = halfplanes_batch(np.broadcast_to(oc[None], (m_T, M, n_P)), G)
        return ConstraintSet(A, b, c, G_slc)

    @staticmethod
    def _relevant(c, G_slc, G_extra, obstacles):
        """Obstacles whose bounding box meets the bounding box of the whole FRS tube."""
        rad = np.abs(G_slc).sum(-1) + np.abs(G_extra).sum(-1)
        lo, hi = (c - rad).min(axis=0), (c + rad).max(axis=0)
        keep = []
        for o in obstacles:
            r = np.abs(o.rotation * o.half_lengths).sum(-1)
            if np.all(o.center + r >= lo) and np.all(o.center - r <= hi):
                keep.append(o)
        return keep

    # lookups
    def resolve(self, x, prev=None):
        """``(k_init, j, h)`` for state ``x``; ``j`` or ``h`` is None if uncovered."""
        spec = self.spec
        k_init = spec.f_init(x, prev)
        j = spec.find_j(k_init)
        h = spec.find_h(spec.lookup_state(x))
        if j is not None and h is not None and self.ers_status[j, h] != STATUS_VALID:
            j = h = None
        return k_init, j, h

    def adjust(self, x, obstacles, k_rl_des, prev=None) -> AdjustResult:
        """Approve, replace or reject the agent's ``k_des`` at state ``x``.

        ``obstacles`` are world-frame RotBoxes; plans start at the robot position.
        """
        spec = self.spec
        k_rl_des = np.asarray(k_rl_des, float).reshape(-1)
        if k_rl_des.size != spec.K.n_des:
            raise ValueError(f"expected {spec.K.n_des} desired parameters, got {k_rl_des.size}")
        k_init, j, h = self.resolve(x, prev)
        k_rl = np.concatenate([k_init, k_rl_des])
        if j is None or h is None:
            logger.warning("state outside the reachable-set coverage; failsafe")
            return AdjustResult(None, None, k_rl, 0, "uncovered")
        p0 = np.atleast_1d(spec.position(x))
        local = [o.translated(-p0) for o in obstacles]
        cons = self.constraints(j, h, local)
        box = self.cell_param_box(j)
        des = spec.K.des_part()
        k_rl_clipped = np.concatenate([k_init, np.clip(k_rl_des, des.lo, des.hi)])
        beta_rl = beta_from_k(k_rl_clipped, box, tol=1e-6)
        if cons.safe(beta_rl[None])[0]:
            d = float(np.linalg.norm(k_rl_clipped - k_rl))
            return AdjustResult(k_rl_clipped, d, k_rl, 1, "identity")
        order = self.candidate_order(k_rl_des)
        cands = np.hstack([np.broadcast_to(k_init, (self.grid.shape[0], k_init.size)), self.grid])[order]
        safe_box = np.where(box.delta > 0, box.delta, 1.0)
        betas = np.where(box.delta > 0, (cands - box.c) / safe_box, 0.0)
        n_checked = 1
        for s in range(0, len(order), self.chunk):
            ok = cons.safe(betas[s : s + self.chunk])
            hit = np.flatnonzero(ok)
            if hit.size:
                n_checked += int(hit[0]) + 1
                k = cands[s + hit[0]].copy()
                return AdjustResult(k, float(np.linalg.norm(k - k_rl)), k_rl, n_checked, "replaced")
            n_checked += ok.size
        return AdjustResult(None, None, k_rl, n_checked, "no safe candidate")

    def candidate_order(self, k_rl_des) -> np.ndarray:
        """Grid indices by distance to ``k_rl_des``; ties keep lexicographic order."""
        dist = np.linalg.norm(self.grid - np.asarray(k_rl_des, float), axis=1)
        return np.argsort(dist, kind="stable")

    def is_safe(self, x, obstacles, k, prev=None) -> bool:
        """Re-verify a full parameter vector ``k`` from state ``x``."""
        spec = self.spec
        k = np.asarray(k, float)
        j = spec.find_j(k[: spec.K.n_init])
        h = spec.find_h(spec.lookup_state(x))
        if j is None or h is None or self.ers_status[j, h] != STATUS_VALID:
            return False
        p0 = np.atleast_1d(spec.position(x))
        cons = self.constraints(j, h, [o.translated(-p0) for o in obstacles])
        return bool(cons.safe(beta_from_k(k, self.cell_param_box(j), tol=1e-6)[None])[0])

    def sliced_tube(self, k, h: int):
        """Per-interval sliced FRS projected to the workspace: ``(centers, generators)``."""
        spec = self.spec
        k = np.asarray(k, float)
        j = spec.find_j(k[: spec.K.n_init])
        if j is None:
            raise ValueError("k_init outside K_init")
        c, G_slc, G_extra = self.slice_blocks(j, h)
        beta = beta_from_k(k, self.cell_param_box(j), tol=1e-6)
        return c + G_slc @ beta, G_extra


def timed_adjust(shield: Shield, x, obstacles, k_rl_des, prev=None) -> tuple[AdjustResult, float]:
    t0 = time.perf_counter()
    res = shield.adjust(x, obstacles, k_rl_des, prev)
    return res, time.perf_counter() - t0
