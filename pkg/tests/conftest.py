import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sqdec.geometry import EPS_MAX, EPS_MIN, Superquadric

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_quat(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def random_sq(rng, scale_range=(0.05, 0.5), eps_range=(EPS_MIN, EPS_MAX), spread=0.3) -> Superquadric:
    return Superquadric(
        rng.uniform(*scale_range, size=3),
        rng.uniform(*eps_range, size=2),
        random_quat(rng),
        rng.uniform(-spread, spread, size=3),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
