"""Reach-set archive: a text header followed by packed little-endian arrays.

Layout::

    REACHGUARD-ARCHIVE\\n
    {json header}\\n
    <payload>

The header records the format version, robot tag, the spec overrides needed to
rebuild the partitions, build provenance, and one manifest entry per array
(name, dtype, shape, byte offset, byte count) plus a SHA-256 of the payload.
Nothing time-dependent is written, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ers import STATUS_VALID, ErsSettings, build_ers
from .prs import build_prs
from .robots import RobotSpec, make_spec

MAGIC = b"REACHGUARD-ARCHIVE\n"
FORMAT_VERSION = 1
_ARRAYS = ("prs_centers", "prs_generators", "ers_centers", "ers_generators", "ers_status", "audit")
_DTYPES = {"f8": "<f8", "i4": "<i4"}


class ArchiveFormatError(ValueError):
    """The file is not a readable archive of this format version."""


@dataclass(eq=False)
class ReachSetArchive:
    robot: str
    spec_overrides: dict
    prs_centers: np.ndarray
    prs_generators: np.ndarray
    ers_centers: np.ndarray
    ers_generators: np.ndarray
    ers_status: np.ndarray
    audit: np.ndarray  # rows (j, h, status, n_samples, n_violating, max_exceedance, rounds)
    provenance: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self._spec = None

    @property
    def spec(self) -> RobotSpec:
        if self._spec is None:
            self._spec = make_spec(self.robot, **_thaw(self.spec_overrides))
        return self._spec

    @property
    def audit_passed(self) -> bool:
        rows = self.audit[self.audit[:, 2] == STATUS_VALID]
        return bool(np.all(rows[:, 4] == 0))

    @property
    def n_failed_cells(self) -> int:
        return int(np.sum(self.ers_status == 2))

    def header(self) -> dict:
        spec = self.spec
        return {
            "format": "reachguard",
            "version": self.version,
            "robot": self.robot,
            "spec_overrides": self.spec_overrides,
            "timing": {"m_T": spec.m_T, "dt_T": spec.dt_T, "t_plan": spec.timing.t_plan,
                       "t_des": list(spec.timing.t_des), "t_fin": spec.timing.t_fin},
            "counts": {"m_K": spec.m_K, "m_0": spec.m_0, "n_P": spec.n_P, "n_K": spec.n_K},
            "provenance": self.provenance,
        }

    def to_bytes(self) -> bytes:
        manifest, chunks, offset = [], [], 0
        for name in _ARRAYS:
            arr = np.asarray(getattr(self, name))
            code = "i4" if name == "ers_status" else "f8"
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            manifest.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset,
                             "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
        payload = b"".join(chunks)
        head = self.header()
        head["arrays"] = manifest
        head["payload_sha256"] = hashlib.sha256(payload).hexdigest()
        text = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + text + b"\n" + payload

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReachSetArchive":
        if not data.startswith(MAGIC):
            raise ArchiveFormatError("missing archive magic line")
        end = data.find(b"\n", len(MAGIC))
        if end < 0:
            raise ArchiveFormatError("truncated header")
        try:
            head = json.loads(data[len(MAGIC):end])
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ArchiveFormatError(f"unreadable header: {exc}") from None
        if head.get("version") != FORMAT_VERSION:
            raise ArchiveFormatError(f"unsupported archive version {head.get('version')!r}")
        payload = data[end + 1:]
        if hashlib.sha256(payload).hexdigest() != head.get("payload_sha256"):
            raise ArchiveFormatError("payload checksum mismatch")
        arrays = {}
        try:
            for entry in head["arrays"]:
                raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
                arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
                arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="))
        except (KeyError, ValueError, TypeError) as exc:
            raise ArchiveFormatError(f"bad array manifest: {exc}") from None
        missing = set(_ARRAYS) - set(arrays)
        if missing:
            raise ArchiveFormatError(f"archive lacks arrays {sorted(missing)}")
        arch = cls(head["robot"], head.get("spec_overrides", {}), provenance=head.get("provenance", {}),
                   version=head["version"], **arrays)
        arch._check_shapes()
        return arch

    @classmethod
    def load(cls, path) -> "ReachSetArchive":
        return cls.from_bytes(Path(path).read_bytes())

    def _check_shapes(self):
        try:
            spec = self.spec
        except (TypeError, ValueError) as exc:
            raise ArchiveFormatError(f"cannot rebuild robot settings: {exc}") from None
        n = spec.n_P + spec.n_K
        expect = {
            "prs_centers": (spec.m_T, spec.m_K, n),
            "prs_generators": (spec.m_T, spec.m_K, n, spec.n_K + spec.n_P),
            "ers_centers": (spec.m_T, spec.m_K, spec.m_0, spec.n_P),
            "ers_generators": (spec.m_T, spec.m_K, spec.m_0, spec.n_P, spec.n_P),
            "ers_status": (spec.m_K, spec.m_0),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ArchiveFormatError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    def audit_csv(self) -> str:
        lines = ["j,h,status,n_samples,n_violating,max_exceedance,rounds"]
        for r in self.audit:
            lines.append(f"{int(r[0])},{int(r[1])},{int(r[2])},{int(r[3])},{int(r[4])},{r[5]:.6g},{int(r[6])}")
        return "\n".join(lines) + "\n"


def _thaw(overrides: dict) -> dict:
    """JSON lists back to tuples for spec keyword arguments."""
    return {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}


def _freeze(overrides: dict) -> dict:
    return {k: list(v) if isinstance(v, (tuple, np.ndarray)) else v for k, v in overrides.items()}


def build_archive(robot: str, spec_overrides: dict | None = None, settings: ErsSettings | None = None,
                  seed: int = 0, workers: int = 1, prs_samples: int = 64) -> ReachSetArchive:
    """Compute PRS and ERS for ``robot`` and pack them into an archive."""
    overrides = _freeze(dict(spec_overrides or {}))
    spec = make_spec(robot, **_thaw(overrides))
    settings = settings or ErsSettings()
    prs_c, prs_g = build_prs(spec, prs_samples)
    ers = build_ers(spec, settings, seed=seed, workers=workers)
    rows = []
    for j, h, status, rep in ers["audits"]:
        if rep is None:
            rows.append([j, h, status, 0, 0, 0.0, 0])
        else:
            rows.append([j, h, status, rep.n_samples, rep.n_violating_samples, rep.max_exceedance, rep.rounds])
    audit = np.array(rows, float).reshape(-1, 7)
    provenance = {"seed": int(seed), "prs_samples": int(prs_samples), "ers_settings": vars(settings).copy()}
    arch = ReachSetArchive(robot, overrides, prs_c, prs_g, ers["centers"], ers["generators"], ers["status"],
                           audit, provenance)
    arch._spec = spec
    return arch
