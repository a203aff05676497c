"""Shared fixtures and the acceptance-criterion summary hook."""

import numpy as np
import pytest

import pyragraph as pg
from pyragraph.seeding import make_rng

# criterion results recorded by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[name])


def random_pyramid(m: int, d: int, seed, classes: int = 2, scale: float = 1.0):
    rng = make_rng("test-pyramid", seed, m, d)
    return pg.EmbeddingPyramid(
        slide_id=f"t{seed}",
        feats_m1=scale * rng.standard_normal((m, d)),
        feats_m2=scale * rng.standard_normal((m, d)),
        feats_m3=scale * rng.standard_normal((m, d)),
        label=int(rng.integers(classes)),
        group_id=f"grp{seed}",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)
