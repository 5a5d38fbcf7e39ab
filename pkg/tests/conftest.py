import numpy as np
import pytest

from jumpforms.semigroup import decompose
from jumpforms.space import build_torus_stable, build_two_state


@pytest.fixture
def two_state():
    return build_two_state(1.0)


@pytest.fixture
def two_dec(two_state):
    return decompose(two_state)


@pytest.fixture
def torus8():
    return build_torus_stable(8, 1.0)


@pytest.fixture
def torus12():
    return build_torus_stable(12, 0.75)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Records one acceptance line; printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> None:
        _CRITERIA[number] = (title, bool(passed), detail)
        print(_line(number))

    return record


def _line(number: int) -> str:
    title, passed, detail = _CRITERIA[number]
    text = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}"
    return f"{text} ({detail})" if detail else text


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_line(number))
