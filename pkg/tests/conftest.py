import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from windpost.data import generate_synthetic, split_folds

settings.register_profile("windpost", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("windpost")


@pytest.fixture(scope="session")
def calibrated_small():
    return split_folds(generate_synthetic(4000, "calibrated", seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
