"""Shared fixtures and the acceptance summary table.

The acceptance tests register one line each in ``ACCEPTANCE_LINES``; the
terminal-summary hook prints them as a block after the run so the criteria
read as a single checklist regardless of pytest's capture settings.
"""

import pytest

from smalljumps.models import make_constant_model, make_sine_model

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(
        f"{criterion}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sine_model():
    return make_sine_model(rho=0.5)


@pytest.fixture(scope="session")
def unit_model():
    return make_constant_model(rho=0.5, scale=1.0)
