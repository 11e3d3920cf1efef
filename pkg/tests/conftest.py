import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isac_xt.scenario import desk_scenario

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def desk():
    return desk_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hermitian_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


def random_covariances(rng, N, Nt, power=1.0):
    R = np.stack([random_hermitian_psd(rng, Nt) for _ in range(N)])
    return R * power / np.trace(R, axis1=1, axis2=2).real.sum()


# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
