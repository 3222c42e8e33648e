import numpy as np
import pytest

from hexscatter.symbols import Bands, EnergyWindow, build_kappa


@pytest.fixture(scope="session")
def window():
    return EnergyWindow(1.2, 2.8)


@pytest.fixture(scope="session")
def bands(window):
    return Bands(build_kappa(window, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
