import numpy as np
import pytest

from mte_sim.machine import Machine, MachineConfig

# acceptance results collected by tests/test_acceptance.py: number -> (ok, detail)
ACCEPTANCE = {}


@pytest.fixture
def machine():
    return Machine(MachineConfig(), memory_bytes=1 << 20)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
