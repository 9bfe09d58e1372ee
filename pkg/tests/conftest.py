import numpy as np
import pytest

from jcas_channel.core import ScenarioConfig


@pytest.fixture
def small_cfg():
    """A light scenario that keeps generation fast."""
    return ScenarioConfig(n0=3, n1=1, n2=2, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    results = getattr(test_acceptance, "RESULTS", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
