"""Shared fixtures.

The replicated experiments behind the acceptance criteria take minutes, so
each config runs once per session and is shared by every test that reads it.
"""
from pathlib import Path

import pytest

from quasireg.harness import ExperimentConfig, run_experiment

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def load_config(name: str) -> ExperimentConfig:
    return ExperimentConfig.load(CONFIGS / name)


@pytest.fixture(scope="session")
def canonical_run():
    return run_experiment(load_config("canonical_1_2.yaml"))


@pytest.fixture(scope="session")
def regular_run():
    return run_experiment(load_config("regular_2.yaml"))


@pytest.fixture(scope="session")
def example1_run():
    return run_experiment(load_config("example1.yaml"))


ACCEPTANCE_LINES = {}


def report(number: int, passed: bool, text: str):
    """Record one acceptance verdict; all verdicts print at the end of the session."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {text}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
