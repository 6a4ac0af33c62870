import os

import numpy as np
import pytest

XI_GRID = (-3.0, -2.0, -1.0, -0.5, -0.2, 0.2, 0.5, 1.0, 2.0, 3.0)
MU_GRID = (-1.0, 0.0, 2.0)
SIGMA_GRID = (0.5, 1.0, 3.0)
TRIPLES = ((0.1, 0.5, 0.9), (0.25, 0.5, 0.75), (0.05, 0.6, 0.95))

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def measured(record_property):
    """Attach a short measurement note to the acceptance summary line."""
    def note(text):
        record_property("measured", text)
    return note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    _criteria[props["criterion"]] = (outcome, props["title"], props.get("measured", ""))


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", m.args[0]))
        item.user_properties.append(("title", m.args[1]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_criteria):
        outcome, title, note = _criteria[n]
        line = f"criterion {n:2d}: {outcome}  {title}"
        if note:
            line += f"  [{note}]"
        tr.write_line(line)


def mc_scale() -> tuple[int, float]:
    """Replicate count and tolerance multiplier for the large Monte Carlo checks.

    ``GEVMQ_ACCEPT_QUICK=1`` selects the reduced run (300 replicates, tolerances
    widened by 1.8).
    """
    if os.environ.get("GEVMQ_ACCEPT_QUICK") == "1":
        return 300, 1.8
    return 1000, 1.0
