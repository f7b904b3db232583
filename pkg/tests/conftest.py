import numpy as np
import pytest

from pass_dsd.config import SystemConfig, table_users


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def users():
    return table_users()


@pytest.fixture
def rng():
    return philox(12345)


def random_state(rng, cfg, users=None):
    """Random feasible (W, s, X) for ``cfg``."""
    from pass_dsd.model import check_placement
    M, N, K = cfg.M, cfg.N, cfg.K
    W = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
    W *= np.sqrt(cfg.P_max) / np.linalg.norm(W)
    s = np.abs(rng.standard_normal(M * N))
    s = (s.reshape(M, N) / np.linalg.norm(s.reshape(M, N), axis=1, keepdims=True)).ravel()
    while True:
        X = np.sort(rng.uniform(cfg.x_min, cfg.x_max, size=(N, M)), axis=0)
        try:
            check_placement(X, cfg)
            return W, s, X
        except ValueError:
            continue


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
