import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, d, cond=None):
    """SPD matrix; with ``cond`` the eigenvalues are log-spaced in [1, cond]."""
    if cond is None:
        x = rng.standard_normal((4 * d, d))
        return x.T @ x / (4 * d)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.logspace(0, np.log10(cond), d)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def random_sym(rng, d):
    g = rng.standard_normal((d, d))
    return 0.5 * (g + g.T)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
