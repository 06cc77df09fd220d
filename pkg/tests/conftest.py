import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from surfilm.constitutive import ModelParams, SigmaModel

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def linear_params():
    return ModelParams(G=1.0, D=0.1, sigma=SigmaModel.linear(1.0, 1.0), eps=1e-2)


@pytest.fixture
def log_params():
    sig = SigmaModel.logarithmic(1.0, 0.8, 2.0, 1, 5.0)
    return ModelParams(G=2.0, D=0.05, sigma=sig, eps=2e-2, eta1=0.8)
