import numpy as np
import pytest

from hetfl.params import Mask, ParamVector, make_layout


def vec(values, layout=None):
    values = np.asarray(values, dtype=np.float64)
    return ParamVector(values, layout or make_layout([("w", values.size)]))


def mask(bits, layout=None):
    bits = np.asarray(bits)
    return Mask(bits, layout or make_layout([("w", bits.size)]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one (number, title, passed, detail) entry per acceptance criterion, filled by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(
            f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
