"""Shared fixtures; the expensive closed-loop runs execute once per session."""

from __future__ import annotations

import json

import pytest

from se3form import builtin_scenario_path, load_scenario, run


@pytest.fixture(scope="session")
def sec5_scenario():
    return load_scenario(builtin_scenario_path("paper_sec5"))


@pytest.fixture(scope="session")
def sec5_raw():
    with open(builtin_scenario_path("paper_sec5"), "r", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def sec5_run(sec5_scenario):
    """(trace, summary, wall-clock seconds) of the published scenario."""
    import time

    t0 = time.perf_counter()
    trace, summary = run(sec5_scenario)
    return trace, summary, time.perf_counter() - t0


@pytest.fixture(scope="session")
def single_edge_scenario():
    return load_scenario(builtin_scenario_path("single_edge_psi"))
