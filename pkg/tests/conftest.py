import sys

import pytest
import torch

from srddpm.schedule import ScheduleConfig, build_linear_schedule


@pytest.fixture(autouse=True)
def _single_thread():
    # the sandbox has one core; extra threads only add scheduling noise
    torch.set_num_threads(1)


@pytest.fixture
def two_step():
    """T = 2 schedule with beta = [0.1, 0.2]."""
    return build_linear_schedule(ScheduleConfig(2, 0.1, 0.2))


@pytest.fixture
def small_schedule():
    return build_linear_schedule(ScheduleConfig(50, 1e-4, 0.05))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
