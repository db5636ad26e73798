from __future__ import annotations

import pytest

from drivecluster.ekfsim import EkfConfig
from drivecluster.emcluster import NllCache
from drivecluster.trajdata import NoiseSpec, ScenarioSpec, synthesize


ZERO_NOISE = NoiseSpec(0.0, 0.0, 0.0, 0, 0.0)


@pytest.fixture(scope="session")
def default_cfg():
    return EkfConfig()


@pytest.fixture(scope="session")
def synth_set():
    """Default 3-archetype x 10 turn scenario with realistic noise."""
    return synthesize(ScenarioSpec(), seed=7)


@pytest.fixture(scope="session")
def synth_cache(synth_set, default_cfg):
    """Shared comparison cache over the default synthetic set."""
    mset, _ = synth_set
    return NllCache(mset, default_cfg, n_jobs=4)


@pytest.fixture(scope="session")
def small_set():
    """Smaller noisy set (4 per archetype) for faster pipeline tests."""
    spec = ScenarioSpec()
    spec = _with_counts(spec, 4)
    return synthesize(spec, seed=3)


@pytest.fixture(scope="session")
def small_cache(small_set, default_cfg):
    mset, _ = small_set
    return NllCache(mset, default_cfg, n_jobs=4)


@pytest.fixture(scope="session")
def zero_noise_set():
    """Zero-noise set: identical copies within each archetype (3 each)."""
    spec = ScenarioSpec(noise=ZERO_NOISE)
    spec = _with_counts(spec, 3)
    return synthesize(spec, seed=0)


@pytest.fixture(scope="session")
def zero_noise_cache(zero_noise_set, default_cfg):
    mset, _ = zero_noise_set
    return NllCache(mset, default_cfg, n_jobs=4)


def _with_counts(spec: ScenarioSpec, count: int) -> ScenarioSpec:
    import dataclasses

    return dataclasses.replace(
        spec, archetypes=tuple(dataclasses.replace(a, count=count)
                               for a in spec.archetypes))


def by_archetype(mset, labels) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for sid in sorted(mset.sample_ids):
        out.setdefault(labels[sid], []).append(sid)
    return out


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                name = nodeid.split("::")[-1].replace("test_", "", 1)
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{outcome:>6}  {name}")
