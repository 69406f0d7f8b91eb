from __future__ import annotations

import numpy as np
import pytest

from curveflow import make_grid, make_nelson_siegel


@pytest.fixture
def unit_grid():
    return make_grid(1.0, 201)


@pytest.fixture
def grid10():
    return make_grid(10.0, 401)


@pytest.fixture
def ns_family():
    return make_nelson_siegel(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""

    def report(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
