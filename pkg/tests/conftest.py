import numpy as np
import pytest

from randpolicy.data import ContinuousInterval, Dataset, Discrete
from randpolicy.simulate import benchmark_family, dose_benchmark, run_dgp

_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def dose_spec():
    return dose_benchmark()


@pytest.fixture(scope="session")
def dose_family():
    return benchmark_family()


@pytest.fixture(scope="session")
def dose_data(dose_spec):
    data, _ = run_dgp(dose_spec, 800, 20_240_101)
    return data


@pytest.fixture
def binary_dataset():
    rng = np.random.default_rng(5)
    n = 120
    x = rng.random((n, 2))
    t = (rng.random(n) < 0.5).astype(float)
    y = 1.0 + 2.0 * t * x[:, 0] + rng.normal(0, 0.3, n)
    return Dataset(y, t, x, Discrete((0.0, 1.0)))


@pytest.fixture
def interval_space():
    return ContinuousInterval(-1.0, 2.0)
