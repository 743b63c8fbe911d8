import json

import numpy as np
import pytest

from reachguard.archive import MAGIC, ArchiveFormatError, ReachSetArchive, build_archive
from reachguard.ers import STATUS_VALID, ErsSettings

TINY = {"k_counts": (2, 1), "theta_cells": 1, "m_T": 10}
TINY_ERS = ErsSettings(audit_samples=3, extra_samples=2)


@pytest.fixture(scope="module")
def tiny():
    return build_archive("cartpole", TINY, TINY_ERS, seed=1, prs_samples=8)


def test_tiny_archive_shapes(tiny):
    spec = tiny.spec
    assert spec.m_T == 10 and spec.m_K == 2 and spec.m_0 == 2
    assert tiny.ers_status.shape == (2, 2)
    assert tiny.audit.shape[1] == 7
    assert tiny.audit_passed and tiny.n_failed_cells == 0
    valid = tiny.ers_status == STATUS_VALID
    assert valid.any()
    assert tiny.audit_csv().count("\n") == tiny.audit.shape[0] + 1


def test_round_trip_preserves_everything(tiny, tmp_path):
    path = tiny.save(tmp_path / "t.rga")
    back = ReachSetArchive.load(path)
    assert back.robot == "cartpole"
    assert back.spec_overrides == {"k_counts": [2, 1], "theta_cells": 1, "m_T": 10}
    for name in ("prs_centers", "prs_generators", "ers_centers", "ers_generators", "ers_status", "audit"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tiny, name))
    assert back.provenance == json.loads(json.dumps(tiny.provenance))
    assert back.to_bytes() == tiny.to_bytes()


def test_rebuild_is_byte_identical(tiny):
    again = build_archive("cartpole", TINY, TINY_ERS, seed=1, prs_samples=8)
    assert again.to_bytes() == tiny.to_bytes()


def test_header_is_readable(tiny):
    data = tiny.to_bytes()
    assert data.startswith(MAGIC)
    head = json.loads(data[len(MAGIC):data.index(b"\n", len(MAGIC))])
    assert head["robot"] == "cartpole" and head["timing"]["m_T"] == 10
    assert {a["name"] for a in head["arrays"]} >= {"prs_centers", "ers_status"}


def test_corruption_is_detected(tiny):
    data = bytearray(tiny.to_bytes())
    with pytest.raises(ArchiveFormatError, match="magic"):
        ReachSetArchive.from_bytes(b"XX" + bytes(data))
    flipped = bytearray(data)
    flipped[-5] ^= 0xFF
    with pytest.raises(ArchiveFormatError, match="checksum"):
        ReachSetArchive.from_bytes(bytes(flipped))
    with pytest.raises(ArchiveFormatError):
        ReachSetArchive.from_bytes(bytes(data[:-16]))
    with pytest.raises(ArchiveFormatError, match="header"):
        ReachSetArchive.from_bytes(MAGIC + b"{not json\n")
    with pytest.raises(ArchiveFormatError, match="truncated"):
        ReachSetArchive.from_bytes(MAGIC + b"{")


def _rewrite_header(data: bytes, **changes) -> bytes:
    end = data.index(b"\n", len(MAGIC))
    head = json.loads(data[len(MAGIC):end])
    head.update(changes)
    return MAGIC + json.dumps(head).encode() + data[end:]


def test_version_and_shape_checks(tiny):
    data = tiny.to_bytes()
    with pytest.raises(ArchiveFormatError, match="version"):
        ReachSetArchive.from_bytes(_rewrite_header(data, version=99))
    # header claims a different partition than the arrays hold
    with pytest.raises(ArchiveFormatError, match="shape"):
        ReachSetArchive.from_bytes(_rewrite_header(data, spec_overrides={**TINY, "k_counts": [3, 1]}))
    with pytest.raises(ArchiveFormatError):
        ReachSetArchive.from_bytes(_rewrite_header(data, spec_overrides={"bogus": 1}))
