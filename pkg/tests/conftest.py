import time

import numpy as np
import pytest

from ntklab.bench import make_dataset
from ntklab.metrics import ScoreConfig, score_pool
from ntklab.netcore import Dataset
from ntklab.searchspace import sample_pool

# Planted-optimum bench setup shared by the search tests and the acceptance suite.
PLANT_POOL_SIZE = 1000
PLANT_POOL_SEED = 5
PLANT_SCORE = ScoreConfig(width=8, seed=1)
PLANT_MU, PLANT_NU = 300.0, 1.0
PLANT_NOISE = 0.01
PLANT_BENCH_SEED = 2


def orthonormal_rows(m, n0, seed=0):
    """m orthonormal input rows in dimension n0 (requires m <= n0)."""
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n0, m)))
    return q.T.copy()


def random_dataset(m, n0, seed=0, name="rand"):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, n0))
    X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1.0)
    return Dataset(X, rng.random(m), name)


@pytest.fixture(scope="session")
def plant_data():
    train, _, _ = make_dataset(n0=8, m_train=16, m_val=4, m_test=4, seed=0)
    return train


@pytest.fixture(scope="session")
def plant_pool():
    return sample_pool(PLANT_POOL_SIZE, PLANT_POOL_SEED)


# wall-clock seconds spent building the shared fixtures, for runtime criteria
FIXTURE_SECONDS: dict[str, float] = {}


@pytest.fixture(scope="session")
def plant_reports(plant_pool, plant_data):
    start = time.perf_counter()
    reports = score_pool(plant_pool, plant_data, PLANT_SCORE)
    FIXTURE_SECONDS["plant_reports"] = time.perf_counter() - start
    return reports


# One PASS/FAIL line per acceptance criterion in the terminal summary.
_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None and (report.when == "call" or report.failed):
        number, title = marker.args
        results = item.config.stash[_CRITERIA]
        ok = report.passed and results.get(number, (title, True))[1]
        results[number] = (title, ok)
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_CRITERIA]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
