"""Session fixtures: reach-set archives are slow to build, so each one is
cached on disk under a hash of the modules that feed the build and reused
across runs."""

import hashlib
import os
from pathlib import Path

import pytest

import reachguard
from reachguard.archive import ReachSetArchive, build_archive
from reachguard.safeguard import Shield

SRC = Path(reachguard.__file__).parent
ARCHIVE_MODULES = ("archive", "dynamics", "ers", "planmodel", "prs", "robots", "zonogeom")
CACHE = Path(os.environ.get("REACHGUARD_TEST_CACHE", Path.home() / ".cache" / "reachguard-tests"))


def source_digest() -> str:
    h = hashlib.sha256()
    for name in ARCHIVE_MODULES:
        p = SRC / f"{name}.py"
        h.update(name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cached_archive(robot: str) -> ReachSetArchive:
    path = CACHE / source_digest() / f"{robot}.rga"
    if path.exists():
        return ReachSetArchive.load(path)
    arch = build_archive(robot, seed=0, workers=int(os.environ.get("REACHGUARD_WORKERS", "1")))
    arch.save(path)
    return arch


@pytest.fixture(scope="session")
def cartpole_archive():
    return cached_archive("cartpole")


@pytest.fixture(scope="session")
def car_archive():
    return cached_archive("car")


@pytest.fixture(scope="session")
def drone_archive():
    return cached_archive("drone")


@pytest.fixture(scope="session")
def cartpole_shield(cartpole_archive):
    return Shield.from_archive(cartpole_archive)


@pytest.fixture(scope="session")
def car_shield(car_archive):
    return Shield.from_archive(car_archive)


@pytest.fixture(scope="session")
def drone_shield(drone_archive):
    return Shield.from_archive(drone_archive)


# -- acceptance report --------------------------------------------------------------

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """``report(criterion, passed, detail)`` records one summary line."""

    def report(criterion: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
