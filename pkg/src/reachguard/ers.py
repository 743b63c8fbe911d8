"""Error Reachable Set: boxes bounding footprint plus tracking error.

For each valid pair of parameter cell ``K^j`` and initial-condition cell
``X0^h`` the closed loop is simulated from every corner of ``K^j x X0^h``
(pinned parameters follow the state through f_init). Footprint vertices minus
the plan position are collected every ``dt_ERS`` and binned by time interval;
each bin is enclosed in a minimum bounding box. Samples after ``t_fin`` (the
plan holds its final point) fold into the last interval so the stored braking
continuation stays certified. An interior audit re-simulates random samples
and inflates any box that misses them.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .dynamics import IntegrationError
from .robots import RobotSpec
from .zonogeom import RotBox, min_bounding_box

logger = logging.getLogger(__name__)

STATUS_VALID = 0
STATUS_UNREACHABLE = 1
STATUS_FAILED = 2


def corners(lo, hi) -> np.ndarray:
    """All ``2**n`` vertices of the box ``[lo, hi]``."""
    lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
    if lo.shape != hi.shape:
        raise ValueError("lo and hi differ in shape")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("box bounds must be finite")
    if lo.size > 12:
        raise ValueError("refusing to enumerate corners of a box with more than 12 dimensions")
    return np.array([np.where(b, hi, lo) for b in itertools.product((False, True), repeat=lo.size)])


def footprint_points(spec: RobotSpec, states) -> np.ndarray:
    return spec.footprint(states)


@dataclass
class ErsSettings:
    sub_steps: int = 10  # ERS samples per time interval
    secant_factor: float = 1.5
    audit_samples: int = 100
    audit_tol: float = 1e-7
    inflation_factor: float = 1.5
    max_inflation_rounds: int = 5
    extra_samples: int = 32  # random interior (k, x0) added to the corners
    relative_margin: float = 0.05  # fractional growth of every box half-length


def sample_stride(spec: RobotSpec, settings: ErsSettings) -> int:
    stride = spec.dt_T / settings.sub_steps / spec.robot.dt
    if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
        raise ValueError("ERS sample spacing must be a multiple of the integration step")
    return int(round(stride))


def simulate_offsets(spec: RobotSpec, k, x0, settings: ErsSettings) -> np.ndarray:
    """Footprint-minus-plan offsets sampled every ``dt_ERS`` over the plan and hold.

    Returns ``(n_samples, n_vertices, n_P)``; sample ``s`` is at ``s * dt_ERS``.
    """
    stride = sample_stride(spec, settings)
    duration = spec.timing.t_fin + spec.hold
    tr = spec.robot.rollout(x0, k, duration, p0=np.zeros(spec.n_P) if spec.n_P > 1 else 0.0)
    states = tr.x[::stride]
    t = tr.t[::stride]
    plan_p = spec.plan(np.minimum(t, spec.timing.t_fin), np.broadcast_to(k, (t.size, k.size)))[0]
    return footprint_points(spec, states) - plan_p[:, None, :]


def bin_offsets(spec: RobotSpec, offsets: np.ndarray, settings: ErsSettings) -> list[np.ndarray]:
    """Split per-sample offsets by time interval, boundary samples going to both
    neighbours and the hold phase going to the last interval."""
    sub = settings.sub_steps
    bins = []
    for i in range(spec.m_T):
        stop = (i + 1) * sub + 1 if i < spec.m_T - 1 else offsets.shape[0]
        bins.append(offsets[i * sub : stop])
    return bins


def _secant_pad(chunk: np.ndarray) -> float:
    if chunk.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(chunk, axis=0), axis=-1).max() / 2.0)


@dataclass
class ErsCellResult:
    j: int
    h: int
    status: int
    boxes: list = field(default_factory=list)  # RotBox per interval
    n_sims: int = 0
    audit: "AuditReport | None" = None

    def zonotope_arrays(self, n_P: int, m_T: int) -> tuple[np.ndarray, np.ndarray]:
        c = np.zeros((m_T, n_P))
        G = np.zeros((m_T, n_P, n_P))
        for i, b in enumerate(self.boxes):
            c[i] = b.center
            G[i] = b.rotation * b.half_lengths
        return c, G


@dataclass
class AuditReport:
    n_samples: int
    n_violating_samples: int
    max_exceedance: float
    rounds: int = 0

    @property
    def violation_fraction(self) -> float:
        return self.n_violating_samples / max(self.n_samples, 1)

    @property
    def passed(self) -> bool:
        return self.n_violating_samples == 0


def compute_ers_cell(spec: RobotSpec, j: int, h: int, settings: ErsSettings = ErsSettings(),
                     rng: np.random.Generator | None = None) -> ErsCellResult:
    """Boxes from the corners of ``K^j x X0^h`` plus ``settings.extra_samples``
    random interior samples (drawn from ``rng``; skipped when it is None)."""
    if not spec.pair_valid(j, h):
        return ErsCellResult(j, h, STATUS_UNREACHABLE)
    clouds: list[list[np.ndarray]] = [[] for _ in range(spec.m_T)]
    pads = np.zeros(spec.m_T)
    samples = spec.corner_samples(j, h)
    if rng is not None and settings.extra_samples > 0:
        samples = samples + spec.interior_samples(j, h, settings.extra_samples, rng)
    for k, x0 in samples:
        try:
            offs = simulate_offsets(spec, k, x0, settings)
        except IntegrationError as exc:
            logger.error("ERS cell (%d, %d) corner failed: %s", j, h, exc)
            return ErsCellResult(j, h, STATUS_FAILED, n_sims=len(samples))
        for i, chunk in enumerate(bin_offsets(spec, offs, settings)):
            clouds[i].append(chunk.reshape(-1, spec.n_P))
            pads[i] = max(pads[i], _secant_pad(chunk))
    boxes = []
    for i in range(spec.m_T):
        pts = np.vstack(clouds[i])
        box = min_bounding_box(pts)
        half = box.half_lengths * (1.0 + settings.relative_margin) + settings.secant_factor * pads[i]
        box = RotBox(box.center, half, box.rotation)
        if not np.all(box.contains(pts)):
            raise AssertionError("ERS box lost a collected offset point")
        boxes.append(box)
    return ErsCellResult(j, h, STATUS_VALID, boxes, n_sims=len(samples))


def _exceedance(box: RotBox, pts: np.ndarray) -> np.ndarray:
    """Per-axis amount by which points leave the box (zero when inside)."""
    local = (pts - box.center) @ box.rotation
    return np.maximum(np.abs(local) - box.half_lengths, 0.0).max(axis=0)


def interior_containment_audit(spec: RobotSpec, cell: ErsCellResult, n_samples: int,
                               rng: np.random.Generator, settings: ErsSettings = ErsSettings(),
                               samples=None) -> tuple[AuditReport, np.ndarray]:
    """Simulate random interior ``(k, x0)`` and check every offset against the boxes.

    Returns the report and the per-interval, per-axis maximum exceedance.
    """
    if cell.status != STATUS_VALID:
        return AuditReport(0, 0, 0.0), np.zeros((spec.m_T, spec.n_P))
    if samples is None:
        samples = spec.interior_samples(cell.j, cell.h, n_samples, rng)
    exceed = np.zeros((spec.m_T, spec.n_P))
    n_bad = 0
    for k, x0 in samples:
        offs = simulate_offsets(spec, k, x0, settings)
        bad = False
        for i, chunk in enumerate(bin_offsets(spec, offs, settings)):
            e = _exceedance(cell.boxes[i], chunk.reshape(-1, spec.n_P))
            exceed[i] = np.maximum(exceed[i], e)
            bad |= bool(np.any(e > settings.audit_tol))
        n_bad += bad
    return AuditReport(len(samples), n_bad, float(exceed.max(initial=0.0))), exceed


def audit_and_inflate(spec: RobotSpec, cell: ErsCellResult, rng: np.random.Generator,
                      settings: ErsSettings = ErsSettings()) -> AuditReport:
    """Audit with fresh samples each round; inflate violated boxes by the
    inflation factor times their exceedance until a round comes back clean."""
    if cell.status != STATUS_VALID or settings.audit_samples <= 0:
        cell.audit = AuditReport(0, 0, 0.0)
        return cell.audit
    rounds = 0
    while True:
        report, exceed = interior_containment_audit(spec, cell, settings.audit_samples, rng, settings)
        report.rounds = rounds
        if report.passed or rounds >= settings.max_inflation_rounds:
            cell.audit = report
            return report
        rounds += 1
        for i in np.nonzero(exceed.max(axis=1) > settings.audit_tol)[0]:
            b = cell.boxes[i]
            cell.boxes[i] = RotBox(b.center, b.half_lengths + settings.inflation_factor * exceed[i], b.rotation)
        logger.info("ERS cell (%d, %d) inflated (round %d, max exceedance %.3g)",
                    cell.j, cell.h, rounds, report.max_exceedance)


def _cell_worker(args):
    spec, j, h, settings, seed = args
    rng = np.random.default_rng(np.random.SeedSequence([seed, j, h]))
    cell = compute_ers_cell(spec, j, h, settings, rng)
    audit_and_inflate(spec, cell, rng, settings)
    return cell


def build_ers(spec: RobotSpec, settings: ErsSettings = ErsSettings(), seed: int = 0,
              workers: int = 1, pairs=None) -> dict:
    """Build every (j, h) ERS cell. Output is independent of ``workers``."""
    if pairs is None:
        pairs = [(j, h) for j in range(spec.m_K) for h in range(spec.m_0)]
    jobs = [(spec, j, h, settings, seed) for j, h in pairs]
    if workers > 1:
        from multiprocessing import get_context

        with get_context("spawn").Pool(workers) as pool:
            cells = pool.map(_cell_worker, jobs, chunksize=1)
    else:
        cells = [_cell_worker(job) for job in jobs]
    m_T, n_P = spec.m_T, spec.n_P
    centers = np.zeros((m_T, spec.m_K, spec.m_0, n_P))
    gens = np.zeros((m_T, spec.m_K, spec.m_0, n_P, n_P))
    status = np.full((spec.m_K, spec.m_0), STATUS_UNREACHABLE, dtype=np.int32)
    audits = []
    for cell in cells:
        status[cell.j, cell.h] = cell.status
        if cell.status == STATUS_VALID:
            c, G = cell.zonotope_arrays(n_P, m_T)
            centers[:, cell.j, cell.h] = c
            gens[:, cell.j, cell.h] = G
        audits.append((cell.j, cell.h, cell.status, cell.audit))
    return {"centers": centers, "generators": gens, "status": status, "audits": audits}


def double_integrator_peak_error(gamma_p: float, gamma_d: float, k_des: float, v0: float,
                                 duration: float = 1.0, dt: float = 1e-3, feedforward: bool = False,
                                 u_max: float | None = None) -> float:
    """Peak ``|p - p_plan|`` of a double integrator tracking ``p_plan = v0 t + k_des t^2 / 2``
    from matched initial conditions, integrated with RK4."""
    def f(t, z):
        e_p = z[0] - (v0 * t + 0.5 * k_des * t * t)
        e_v = z[1] - (v0 + k_des * t)
        u = -gamma_p * e_p - gamma_d * e_v + (k_des if feedforward else 0.0)
        if u_max is not None:
            u = min(max(u, -u_max), u_max)
        return np.array([z[1], u])

    z = np.array([0.0, v0])
    n = int(round(duration / dt))
    peak = 0.0
    for s in range(n):
        t = s * dt
        a = f(t, z)
        b = f(t + dt / 2, z + dt / 2 * a)
        c = f(t + dt / 2, z + dt / 2 * b)
        d = f(t + dt, z + dt * c)
        z = z + dt / 6 * (a + 2 * b + 2 * c + d)
        tn = t + dt
        peak = max(peak, abs(z[0] - (v0 * tn + 0.5 * k_des * tn * tn)))
    return peak


def double_integrator_error_exact(gamma_p: float, gamma_d: float, k_des: float, ts) -> np.ndarray:
    """Closed-form tracking error (no feedforward, no saturation) via the matrix exponential."""
    M = np.array([[0.0, 1.0, 0.0], [-gamma_p, -gamma_d, -1.0], [0.0, 0.0, 0.0]])
    return np.array([(expm(M * t) @ np.array([0.0, 0.0, k_des]))[0] for t in np.atleast_1d(ts)])


def corner_dominance_oracle(gamma_p: float, gamma_d: float, k_range, v0_range, n_interior: int = 30,
                            duration: float = 1.0, dt: float = 1e-3, feedforward: bool = False,
                            u_max: float | None = None, seed: int = 0) -> bool:
    """Whether the peak tracking error over interior ``(v0, k_des)`` samples is
    dominated by the peak over the corners of the ``(v0, k_des)`` box.

    The robot is a double integrator under the PD law
    ``u = -gamma_p (p - p_plan) - gamma_d (p' - p_plan')`` (plus the plan
    acceleration when ``feedforward``) tracking a constant-acceleration plan.
    """
    k_lo, k_hi = float(k_range[0]), float(k_range[1])
    v_lo, v_hi = float(v0_range[0]), float(v0_range[1])
    kw = dict(duration=duration, dt=dt, feedforward=feedforward, u_max=u_max)
    corner_max = max(double_integrator_peak_error(gamma_p, gamma_d, k, v, **kw)
                     for k in (k_lo, k_hi) for v in (v_lo, v_hi))
    rng = np.random.default_rng(seed)
    ks = rng.uniform(k_lo, k_hi, n_interior)
    vs = rng.uniform(v_lo, v_hi, n_interior)
    interior_max = max((double_integrator_peak_error(gamma_p, gamma_d, k, v, **kw)
                        for k, v in zip(ks, vs)), default=0.0)
    return bool(interior_max <= corner_max + 1e-9)
