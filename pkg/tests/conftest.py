import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from randgrating.modes import MediumParams

settings.register_profile("default", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "randgrating", "configs")


@pytest.fixture
def medium():
    return MediumParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def config_dir():
    return os.path.abspath(CONFIG_DIR)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
