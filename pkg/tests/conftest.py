import json
from pathlib import Path

import numpy as np
import pytest

from gridevd import load_fixture

DATA = Path(__file__).parent / "data"

CASES = ("case9", "case14", "case30", "case57")


@pytest.fixture(scope="session")
def reference_voltages():
    """Newton solutions from an independent MATPOWER-compatible solver."""
    return json.loads((DATA / "reference_voltages.json").read_text())["cases"]


@pytest.fixture(scope="session", params=CASES)
def any_case(request):
    return load_fixture(request.param)


@pytest.fixture(scope="session")
def case9():
    return load_fixture("case9")


@pytest.fixture(scope="session")
def case14():
    return load_fixture("case14")


@pytest.fixture(scope="session")
def case30():
    return load_fixture("case30")


@pytest.fixture(scope="session")
def case57():
    return load_fixture("case57")


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    A = rng.normal(size=(n, rank or n))
    return A @ A.T


_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the terminal summary lists them all."""

    def record(number: int, part: str, ok: bool, detail: str) -> bool:
        key = f"{number}{part}"
        _CRITERIA[key] = (ok, detail)
        print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {key:<4} {'PASS' if ok else 'FAIL'}  {detail}")
