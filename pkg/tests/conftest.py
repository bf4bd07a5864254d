import sys

import pytest

from dwellscope.simulator import SimConfig


@pytest.fixture
def small_config():
    """A quick two-hour run with every device detected."""
    return SimConfig(activation_prob=1.0, poll_interval=5, seed=3,
                     hourly_arrival_rates={9: 40.0, 10: 40.0}, late_arrival_rates=None)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
