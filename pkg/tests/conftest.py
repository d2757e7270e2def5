import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def e_bits():
    """First 10^6 binary digits of e (integer part included), the standard
    reference sequence for the statistical tests."""
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.prec = 1_000_100
    v = int(mpmath.floor(mpmath.e * mpmath.mpf(2) ** 1_000_000))
    digits = bin(v)[2:]
    return (np.frombuffer(digits.encode(), np.uint8) - ord("0"))[:1_000_000].astype(np.uint8)


def bits_of(text):
    return np.array([int(c) for c in text], dtype=np.uint8)


ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
