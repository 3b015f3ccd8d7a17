import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochhom.ensemble import EnsembleSpec, sample
from stochhom.lattice import build_lattice

settings.register_profile("ci", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def checkerboard():
    return EnsembleSpec("checkerboard", lam=0.25, lo=0.25, hi=1.0, p_hi=0.5)


@pytest.fixture
def poisson():
    return EnsembleSpec("poisson_inclusions", lam=0.25, intensity=0.1, inclusion_radius=1,
                        background=1.0, inclusion_value=0.25)


@pytest.fixture
def small_field(checkerboard):
    lat = build_lattice(2, 5, "dirichlet")
    return sample(checkerboard, lat, 17)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
