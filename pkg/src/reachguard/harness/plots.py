"""Static SVG snapshots of an episode: obstacles, footprints and the sliced
FRS tube of every approved plan."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402

from ..safeguard import Shield, halfplanes_batch  # noqa: E402

# fixed metadata keeps the SVG bytes identical across runs
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "reachguard"


@dataclass
class PlanTube:
    """Sliced FRS of one approved plan in the world frame."""

    iteration: int
    t_start: float  # episode time at which the plan started
    centers: np.ndarray  # (m_T, n_P)
    generators: np.ndarray  # (m_T, n_P, g)
    dt: float

    def interval(self, t_local) -> np.ndarray:
        i = np.floor(np.asarray(t_local, float) / self.dt + 1e-9).astype(int)
        return np.clip(i, 0, self.centers.shape[0] - 1)


def plan_tubes(shield: Shield, world, record) -> list[PlanTube]:
    """One tube per iteration whose plan the shield approved."""
    spec = shield.spec
    t_plan = spec.timing.t_plan
    tubes = []
    x = np.asarray(world.x0, float)
    for row in record.rows:
        if not row["failsafe"]:
            h = spec.find_h(spec.lookup_state(x))
            c, G = shield.sliced_tube(row["k_safe"], h)
            c = c + np.atleast_1d(spec.position(x))
            tubes.append(PlanTube(row["iteration"], row["iteration"] * t_plan, c, G, spec.dt_T))
        x = row["state"]
    return tubes


def tube_contains(tube: PlanTube, t_global, points, tol: float = 1e-7) -> np.ndarray:
    """Whether each footprint point (``(N, V, n_P)`` at times ``(N,)``) lies in
    the tube interval covering its time."""
    idx = tube.interval(np.asarray(t_global) - tube.t_start)
    A, b = halfplanes_batch(tube.centers[idx], tube.generators[idx])  # (N, r, n), (N, r)
    res = np.einsum("nrp,nvp->nvr", A, points) - b[:, None, :]
    return np.all(res <= tol, axis=-1)


def tube_samples(spec, record, tubes):
    """Yield ``(tube, t, footprint)`` for every executed sample governed by a tube."""
    by_start = {tb.iteration: tb for tb in tubes}
    current = None
    for it, (t, xs) in enumerate(record.states):
        if it in by_start:
            current = by_start[it]
        if current is None:
            continue
        t_local = np.asarray(t) - current.t_start
        keep = t_local <= current.centers.shape[0] * current.dt + 1e-9
        yield current, np.asarray(t)[keep], spec.footprint(xs[keep])


def _zono_polygon(c, G) -> np.ndarray:
    """Vertices of a 2-D zonotope in counter-clockwise order."""
    G = G[:, np.linalg.norm(G, axis=0) > 0]
    if G.shape[1] == 0:
        return c[None]
    G = np.where(G[1] < 0, -G, G)  # upper half plane
    G = G[:, np.argsort(np.arctan2(G[1], G[0]))]
    start = c - G.sum(axis=1)
    steps = np.concatenate([2 * G, -2 * G], axis=1).T
    return start + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)[:-1]])


def _box_polygon(o) -> np.ndarray:
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float) * o.half_lengths[:2]
    return o.center[:2] + corners @ o.rotation[:2, :2].T


def render_frames(env, world, record, tubes, out_dir, every: int = 5, prefix: str = "frame") -> list[Path]:
    """Write one SVG per ``every`` iterations plus a final frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(record.rows)
    stops = sorted(set(list(range(every, n, every)) + [n]))
    paths = []
    for upto in stops:
        fig = _draw(env, world, record, [tb for tb in tubes if tb.iteration < upto], upto)
        p = out_dir / f"{prefix}_{upto:04d}.svg"
        fig.savefig(p, format="svg", metadata=_SVG_META)
        plt.close(fig)
        paths.append(p)
    return paths


def _draw(env, world, record, tubes, upto):
    spec = env.spec
    if spec.n_P == 1:
        return _draw_1d(env, world, record, tubes, upto)
    fig, ax = plt.subplots(figsize=(10, 4) if spec.n_P == 2 else (10, 5))
    for o in world.obstacles:
        ax.add_patch(Polygon(_box_polygon(o), closed=True, fc="0.55", ec="0.2", lw=0.5))
    for tb in tubes[-3:]:
        for c, G in zip(tb.centers, tb.generators):
            ax.add_patch(Polygon(_zono_polygon(c[:2], G[:2]), closed=True, fc="tab:green", ec="none", alpha=0.12))
    for t, xs in record.states[:upto]:
        for fp in spec.footprint(xs[:: max(1, len(xs) // 4)]):
            pts = fp[:, :2]
            hull = pts[np.argsort(np.arctan2(*(pts - pts.mean(0)).T[::-1]))]
            ax.add_patch(Polygon(hull, closed=True, fc="none", ec="tab:blue", lw=0.4))
    lo, hi = world.bounds
    if record.states[:upto]:
        p = np.concatenate([xs[:, :2] for _, xs in record.states[:upto]])
        ax.set_xlim(max(lo[0], p[:, 0].min() - 20), min(hi[0], p[:, 0].max() + 30))
    ax.set_ylim(lo[1] - 1, hi[1] + 1)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{spec.name}: iteration {upto}")
    fig.tight_layout()
    return fig


def _draw_1d(env, world, record, tubes, upto):
    """Space-time view: position on x, time on y."""
    spec = env.spec
    fig, ax = plt.subplots(figsize=(6, 6))
    t_end = max(upto * spec.timing.t_plan, spec.timing.t_plan)
    for o in world.obstacles:
        ax.add_patch(Rectangle((o.center[0] - o.half_lengths[0], 0), 2 * o.half_lengths[0], t_end,
                               fc="0.55", ec="0.2", lw=0.5))
    for tb in tubes:
        rad = np.abs(tb.generators[:, 0]).sum(-1)
        for i, (c, r) in enumerate(zip(tb.centers[:, 0], rad)):
            t0 = tb.t_start + i * tb.dt
            ax.add_patch(Rectangle((c - r, t0), 2 * r, tb.dt, fc="tab:green", ec="none", alpha=0.08))
    for t, xs in record.states[:upto]:
        fp = spec.footprint(xs)[..., 0]
        ax.fill_betweenx(t, fp[:, 0], fp[:, -1], color="tab:blue", alpha=0.6, lw=0)
    ax.set_xlim(-env.track - 1, env.track + 1)
    ax.set_ylim(0, t_end)
    ax.set_xlabel("cart position [m]")
    ax.set_ylabel("time [s]")
    ax.set_title(f"{spec.name}: iteration {upto}")
    fig.tight_layout()
    return fig


def plot_curve(curve: np.ndarray, path, title: str = "training") -> Path:
    """Reward per episode and its running mean +- one standard deviation."""
    fig, ax = plt.subplots(figsize=(7, 4))
    e, r, m, s = curve.T
    ax.plot(e, r, color="0.7", lw=0.6, label="episode reward")
    ax.plot(e, m, color="tab:blue", label="running mean")
    ax.fill_between(e, m - s, m + s, color="tab:blue", alpha=0.2)
    ax.set_xlabel("episode")
    ax.set_ylabel("reward")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path
