import numpy as np
import pytest

from fpisens.testbeds import BurgersConfig, BurgersProblem, NozzleConfig, NozzleProblem

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""

    def _record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[name] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[name])


@pytest.fixture(scope="session")
def nozzle():
    return NozzleProblem(NozzleConfig())


@pytest.fixture(scope="session")
def burgers5():
    return BurgersProblem(BurgersConfig(cells=5))


@pytest.fixture(scope="session")
def burgers():
    return BurgersProblem(BurgersConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
