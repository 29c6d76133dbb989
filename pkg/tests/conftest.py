import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bwpipe.dataset import ColumnMeta, DataMatrix
from bwpipe.synthgen import CohortSpec, generate_cohort

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cohort():
    """200 x 30 calibrated cohort with missing cells (target is the last column)."""
    return generate_cohort(CohortSpec(n=200, p=30, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_matrix(values, kinds=None, names=None):
    values = np.asarray(values, dtype=float)
    p = values.shape[1]
    kinds = kinds or ["continuous"] * p
    return DataMatrix(values, None, names, [ColumnMeta.for_kind(k) for k in kinds])


ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: the ten acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
