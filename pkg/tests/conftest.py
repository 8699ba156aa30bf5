"""Shared fixtures for the test suite."""

import os

import numpy as np
import pytest

from errormoments import NoiseSpec, RegressorNoise
from errormoments.pairwise import PairwiseStats

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

# One line per acceptance criterion, filled in by tests/test_acceptance.py and
# echoed after the run so the verdicts survive pytest's output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fixture_path(name: str) -> str:
    return os.path.join(FIXTURES, name)


def read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def stats_from_vectors(delta, delta_sq, n_items: int = 1) -> PairwiseStats:
    """Build a stats object straight from per-pair vectors.

    Handy for exact worked cases where the observables are written down
    directly instead of being computed from predictions.
    """
    delta = np.asarray(delta, dtype=np.float64)
    n_pairs = len(delta)
    n = round((1 + np.sqrt(1 + 8 * n_pairs)) / 2)
    return PairwiseStats(
        delta=delta,
        delta_sq=np.asarray(delta_sq, dtype=np.float64),
        n_regressors=int(n),
        n_items=n_items,
    )


@pytest.fixture
def independent_spec() -> NoiseSpec:
    """Three independent gaussian regressors with scales 1, 2, 3."""
    return NoiseSpec(
        regressors=(
            RegressorNoise("gaussian", 1.0),
            RegressorNoise("gaussian", 2.0),
            RegressorNoise("gaussian", 3.0),
        )
    )
