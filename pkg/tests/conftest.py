from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line outcome of an acceptance criterion."""
    def record(k: int, ok: bool, detail: str) -> bool:
        CRITERIA[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(CRITERIA[k])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
