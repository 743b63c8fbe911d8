"""Zonotope algebra used by the reachable-set builders and the online shield.

A zonotope ``<c, G>`` is the set ``{c + G @ beta : beta in [-1, 1]^m}``. Only the
operations needed downstream are provided: Minkowski sum, Cartesian product,
slicing, support function, conversion to halfplanes (n <= 3), the intersection
test, and minimum bounding boxes for point clouds.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError


@dataclass(frozen=True)
class NumericPolicy:
    """Tolerances shared by every geometric routine."""

    geometric_tol: float = 1e-9
    containment_tol: float = 1e-7
    degenerate_tol: float = 1e-12


DEFAULT_POLICY = NumericPolicy()


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class Zonotope:
    center: np.ndarray
    generators: np.ndarray = field(default=None)

    def __post_init__(self):
        c = _as_vector(self.center, "center")
        if self.generators is None:
            G = np.zeros((c.size, 0))
        else:
            G = np.array(self.generators, dtype=float)
            if G.ndim == 1:
                G = G.reshape(c.size, -1)
            if G.ndim != 2 or G.shape[0] != c.size:
                raise ValueError(
                    f"generator matrix must be {c.size}xm, got shape {G.shape}"
                )
            if not np.all(np.isfinite(G)):
                raise ValueError("generators must be finite")
        c.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    def __add__(self, other: "Zonotope") -> "Zonotope":
        return minkowski_sum(self, other)

    def __eq__(self, other):
        if not isinstance(other, Zonotope):
            return NotImplemented
        return (
            self.center.shape == other.center.shape
            and self.generators.shape == other.generators.shape
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.generators, other.generators)
        )

    def __repr__(self):
        return f"Zonotope(dim={self.dim}, n_generators={self.n_generators})"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` members; a third of the coefficients are pushed to +-1."""
        beta = rng.uniform(-1.0, 1.0, size=(n, self.n_generators))
        corner = rng.random(beta.shape) < 1.0 / 3.0
        beta[corner] = np.sign(beta[corner])
        return self.center + beta @ self.generators.T

    def interval_hull(self) -> tuple[np.ndarray, np.ndarray]:
        r = np.abs(self.generators).sum(axis=1)
        return self.center - r, self.center + r


@dataclass(frozen=True, eq=False)
class RotBox:
    """Rotated box ``box(c, l, R)``: center, half side lengths, orientation."""

    center: np.ndarray
    half_lengths: np.ndarray
    rotation: np.ndarray = field(default=None)

    def __post_init__(self):
        c = _as_vector(self.center, "center")
        l = _as_vector(self.half_lengths, "half_lengths")
        if l.size != c.size:
            raise ValueError("half_lengths and center differ in dimension")
        if np.any(l < 0):
            raise ValueError("half_lengths must be nonnegative")
        R = np.eye(c.size) if self.rotation is None else np.array(self.rotation, dtype=float)
        if R.shape != (c.size, c.size):
            raise ValueError(f"rotation must be {c.size}x{c.size}")
        if not np.allclose(R @ R.T, np.eye(c.size), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal")
        for arr in (c, l, R):
            arr.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_lengths", l)
        object.__setattr__(self, "rotation", R)

    @property
    def dim(self) -> int:
        return self.center.size

    def corners(self) -> np.ndarray:
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=self.dim)))
        return self.center + (signs * self.half_lengths) @ self.rotation.T

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        local = (pts - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_lengths + tol, axis=1)

    def translated(self, offset) -> "RotBox":
        return RotBox(self.center + np.asarray(offset, float), self.half_lengths, self.rotation)

    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_lengths))


@dataclass(frozen=True, eq=False)
class HalfplaneSet:
    """Polytope ``{y : A @ y <= b}`` with unit-norm rows of ``A``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError("A and b disagree on the number of halfplanes")
        norms = np.linalg.norm(A, axis=1)
        if A.shape[0] and not np.allclose(norms, 1.0, atol=1e-9, rtol=0.0):
            raise ValueError("halfplane normals must be unit length")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_halfplanes(self) -> int:
        return self.b.size

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def residual(self, points) -> np.ndarray:
        """Largest ``A @ y - b`` per point (positive means outside)."""
        pts = np.atleast_2d(points)
        return np.max(pts @ self.A.T - self.b, axis=-1)


def zono_from_box(box: RotBox) -> Zonotope:
    G = box.rotation * box.half_lengths
    return Zonotope(box.center, G[:, box.half_lengths > 0])


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    if Z1.dim != Z2.dim:
        raise ValueError(f"dimension mismatch: {Z1.dim} vs {Z2.dim}")
    return Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))


def cartesian_product(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    G = np.zeros((Z1.dim + Z2.dim, Z1.n_generators + Z2.n_generators))
    G[: Z1.dim, : Z1.n_generators] = Z1.generators
    G[Z1.dim :, Z1.n_generators :] = Z2.generators
    return Zonotope(np.concatenate([Z1.center, Z2.center]), G)


def slice_zono(Z: Zonotope, idx: Sequence[int], beta) -> Zonotope:
    """Fix the coefficients of generators ``idx`` to ``beta``.

    Indices are zero-based columns of ``Z.generators``.
    """
    idx = np.asarray(idx, dtype=int).reshape(-1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if idx.size != beta.size:
        raise ValueError("idx and beta must have equal length")
    if np.unique(idx).size != idx.size:
        raise ValueError("slice indices must be distinct")
    if idx.size and (idx.min() < 0 or idx.max() >= Z.n_generators):
        raise IndexError("slice index out of range")
    if np.any(np.abs(beta) > 1.0) or not np.all(np.isfinite(beta)):
        raise ValueError("slice coefficients must lie in [-1, 1]")
    keep = np.ones(Z.n_generators, dtype=bool)
    keep[idx] = False
    return Zonotope(Z.center + Z.generators[:, idx] @ beta, Z.generators[:, keep])


def support(Z: Zonotope, direction) -> float:
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != Z.dim:
        raise ValueError("direction dimension mismatch")
    if not np.any(d):
        raise ValueError("direction must be nonzero")
    return float(d @ Z.center + np.abs(d @ Z.generators).sum())


def _support_many(Z: Zonotope, normals: np.ndarray) -> np.ndarray:
    return normals @ Z.center + np.abs(normals @ Z.generators).sum(axis=1)


def _unique_directions(normals: np.ndarray, tol: float, limit: int | None = None) -> np.ndarray:
    """Drop normals parallel (or antiparallel) to one already kept; stop after ``limit``."""
    N, n = normals.shape
    if N <= 512:
        parallel = np.abs(np.abs(normals @ normals.T) - 1.0) <= tol
        dropped = np.zeros(N, bool)
        keep = []
        for i in range(N):
            if limit is not None and len(keep) >= limit:
                break
            if not dropped[i]:
                keep.append(i)
                dropped |= parallel[i]
        return normals[keep].reshape(-1, n)
    kept = np.empty((0, n))
    for v in normals:
        if limit is not None and len(kept) >= limit:
            break
        if np.all(np.abs(np.abs(kept @ v) - 1.0) > tol):
            kept = np.vstack([kept, v])
    return kept


@functools.lru_cache(maxsize=64)
def _pairs(m: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(m, k=1)


def _candidate_normals(G: np.ndarray, policy: NumericPolicy) -> np.ndarray:
    n = G.shape[0]
    if n == 1:
        return np.ones((1, 1))
    G = G[:, np.linalg.norm(G, axis=0) > policy.degenerate_tol]
    if G.shape[1]:
        _, sv, vt = np.linalg.svd(G.T)
        rank = int(np.sum(sv > policy.geometric_tol))
    else:
        rank, vt = 0, np.eye(n)
    cands: list[np.ndarray] = []
    if n == 2:
        cands.append(np.stack([-G[1], G[0]], axis=1))
    else:
        i, j = _pairs(G.shape[1])
        cands.append(np.cross(G.T[i], G.T[j]))
    if rank < n:
        # flat set: add the orthogonal complement and in-plane edge normals
        null = vt[rank:]
        cands.append(null)
        if rank == 1 and n == 2:
            cands.append(G.T)
        elif rank >= 1 and n == 3:
            for u in null:
                cands.append(np.cross(u, G.T))
            if rank == 1:
                cands.append(G.T)
    cands_arr = np.vstack([np.asarray(c, dtype=float).reshape(-1, n) for c in cands])
    norms = np.linalg.norm(cands_arr, axis=1)
    cands_arr = cands_arr[norms > policy.degenerate_tol] / norms[norms > policy.degenerate_tol, None]
    return _unique_directions(cands_arr, policy.geometric_tol)


def to_halfplanes(Z: Zonotope, policy: NumericPolicy = DEFAULT_POLICY) -> HalfplaneSet:
    """Exact halfplane form of a zonotope of dimension 1, 2 or 3."""
    if Z.dim > 3:
        raise ValueError("halfplane conversion is only supported for n <= 3")
    normals = _candidate_normals(Z.generators, policy)
    A = np.vstack([normals, -normals])
    b = np.concatenate([_support_many(Z, normals), _support_many(Z, -normals)])
    return HalfplaneSet(A, b)


def contains_point(H: HalfplaneSet, p, tol: float = 0.0) -> bool:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != H.dim:
        raise ValueError("point dimension mismatch")
    return bool(H.residual(p)[0] <= tol)


def zono_intersects(Z1: Zonotope, Z2: Zonotope, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
    """Closed-set intersection test: ``c1 in <c2, [G1, G2]>``."""
    if Z1.dim != Z2.dim:
        raise ValueError("dimension mismatch")
    if Z1.dim > 3:
        raise ValueError("intersection test unsupported above three dimensions")
    merged = Zonotope(Z2.center, np.hstack([Z1.generators, Z2.generators]))
    return contains_point(to_halfplanes(merged, policy), Z1.center, tol=0.0)


# -- bounding boxes ---------------------------------------------------------


def _aabb_in_frame(points: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    local = points @ R
    lo, hi = local.min(axis=0), local.max(axis=0)
    half = 0.5 * (hi - lo)
    center = R @ (0.5 * (lo + hi))
    return center, half, float(np.prod(2.0 * half))


def _rect_2d(points: np.ndarray) -> np.ndarray:
    """Rotation of the minimum-area rectangle (rotating calipers over hull edges)."""
    try:
        hull = points[ConvexHull(points).vertices]
    except (QhullError, ValueError):
        # collinear or too few points: align with the principal direction
        centered = points - points.mean(axis=0)
        _, _, vt = np.linalg.svd(centered.T @ centered)
        u = vt[0]
        return np.array([[u[0], -u[1]], [u[1], u[0]]])
    edges = np.roll(hull, -1, axis=0) - hull
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), np.pi / 2))
    best, best_area = np.eye(2), np.inf
    for a in angles:
        R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        area = _aabb_in_frame(hull, R)[2]
        if area < best_area - 1e-15:
            best, best_area = R, area
    return best


MAX_FACE_FRAMES = 64


def _frames_3d(points: np.ndarray) -> list[np.ndarray]:
    frames = [np.eye(3)]
    centered = points - points.mean(axis=0)
    _, _, vt = np.linalg.svd(centered.T @ centered)
    pca = vt.T
    if np.linalg.det(pca) < 0:
        pca[:, 2] *= -1
    frames.append(pca)
    try:
        hull = ConvexHull(points)
    except (QhullError, ValueError):
        return frames
    hp = points[hull.vertices]
    # the largest faces are the likeliest box faces; cap the candidate count
    tri = points[hull.simplices]
    area = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    order = np.argsort(-area, kind="stable")
    normals = _unique_directions(hull.equations[order, :3], 1e-9, MAX_FACE_FRAMES)
    for n in normals:
        # complete an orthonormal frame around the face normal, then fit the
        # minimal rectangle of the projection onto the face plane
        helper = np.eye(3)[np.argmin(np.abs(n))]
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        w = np.cross(n, u)
        plane = np.column_stack([u, w])
        R2 = _rect_2d(hp @ plane)
        frames.append(np.column_stack([plane @ R2, n]))
    return frames


def min_bounding_box(points) -> RotBox:
    """Rotated box enclosing every point.

    Area-minimal in 2-D. In 3-D the best box over a set of candidate
    orientations (identity, principal axes, hull-face aligned) is returned.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.shape[0] == 0:
        raise ValueError("min_bounding_box needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    n = pts.shape[1]
    full = pts
    if n > 1 and pts.shape[0] > 4 * n:
        # only hull vertices matter for the box
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
    if n == 1:
        frames = [np.eye(1)]
    elif n == 2:
        frames = [np.eye(2), _rect_2d(pts)]
    elif n == 3:
        frames = _frames_3d(pts)
    else:
        raise ValueError("min_bounding_box supports 1-3 dimensions")
    best = None
    for R in frames:
        center, half, vol = _aabb_in_frame(pts, R)
        if best is None or vol < best[2] - 1e-15:
            best = (center, half, vol, R)
    center, half, _, R = best
    # guard containment against round-off in the frame change
    scale = max(1.0, float(np.abs(full).max()))
    half = half + 4 * np.finfo(float).eps * scale
    return RotBox(center, half, R)
