import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def unit_columns(rng, n, m):
    X = rng.standard_normal((n, m))
    X -= X.mean(axis=0)
    return X / np.linalg.norm(X, axis=0)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria with printed verdicts")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    lines = [LINES[k] for k in sorted(k for k in LINES if k < 10)]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
