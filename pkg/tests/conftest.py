import warnings

import numpy as np
import pytest

from funmed.simulate import Scenario, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sim_small():
    """A default-scenario dataset with 200 subjects."""
    return generate_dataset(Scenario(n_subjects=200, seed=11))


@pytest.fixture(autouse=True)
def _quiet_convergence_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion and assert it."""

    def check(label: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
