import functools
from dataclasses import replace

import numpy as np
import pytest

from dicp import scenarios, sim
from dicp.cloud import estimate_normals
from dicp.solver import Mode, SolverParams, odometry

# Acceptance outcomes, printed once at the end of the session.
_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record_acceptance(label: str, passed: bool, detail: str) -> None:
    _ACCEPTANCE[label] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (int(s.split()[0][2:]), s)):
        ok, detail = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


@functools.lru_cache(maxsize=None)
def cached_sequence(name: str, noiseless: bool = False, **overrides):
    spec = scenarios.preset(name, **overrides)
    if noiseless:
        spec = replace(spec, noise=sim.NOISELESS)
    return scenarios.build(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@functools.lru_cache(maxsize=None)
def cached_pair(name: str, noiseless: bool = True, first: int = 0, **overrides):
    """``(source, target_with_normals, T_TS ground truth, samples)`` for scans ``first`` and ``first + 1``."""
    seq = cached_sequence(name, noiseless, **overrides)
    src, tgt = seq.scans[first], estimate_normals(seq.scans[first + 1], 20)
    a, b = seq.samples[first], seq.samples[first + 1]
    return src, tgt, b.pose.inverse() @ a.pose, (a, b)


@functools.lru_cache(maxsize=None)
def cached_odometry(name: str, mode: str = "DICP", seeding: str = "constant_velocity", noiseless: bool = False,
                    **overrides):
    seq = cached_sequence(name, noiseless, **overrides)
    params = SolverParams(mode=Mode(mode))
    return seq, odometry(seq.scans, params, seeding=seeding)
