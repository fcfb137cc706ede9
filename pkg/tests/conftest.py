import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sfcad.data import Dataset, METRICS

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def toy_dataset(T=40, V=3, seed=0, name="toy") -> Dataset:
    rng = np.random.default_rng(seed)
    frames = rng.normal(size=(T, V, len(METRICS)))
    labels = (rng.random(T) < 0.3).astype(np.int64)
    return Dataset(name, frames, labels, tuple(f"vnf{v}" for v in range(V)), np.arange(T),
                   manifest={"name": name})


@pytest.fixture
def toy():
    return toy_dataset()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
