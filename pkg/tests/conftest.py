import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_run():
    """A few epochs at d=8 on the smallest fixture; enough to exercise persistence and scoring."""
    from vogue.synth import fixture
    from vogue.trainer import TrainConfig, train

    cfg = TrainConfig.desk(d=8, heads=2, epochs=3, warmup=20, dev_fraction=0.25, seed=2)
    return train(fixture(16), cfg)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
