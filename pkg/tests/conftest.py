import warnings

import numpy as np
import pytest

from mtskew.expanding import build_model
from mtskew.mt_params import find_mt_parameter
from mtskew.skew import build_system

ACCEPTANCE_LINES = []


def record(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


@pytest.fixture(scope="session")
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cert2():
    return find_mt_parameter(2, 1, (1.9, 2.0))


@pytest.fixture(scope="session")
def cert3():
    return find_mt_parameter(3, 1, (1.5, 1.6))


@pytest.fixture(scope="session")
def model2(cert2):
    return build_model(cert2, 3)


@pytest.fixture(scope="session")
def model3(cert3):
    return build_model(cert3)


@pytest.fixture(scope="session")
def system(model2, cert3):
    """Default system: a = 2, m1 = 3, b the (3, 1) parameter, alpha = 1e-3, phi = x."""
    return build_system(model2, cert3, 1e-3)


@pytest.fixture(scope="session")
def even_system(model2, cert3):
    p = np.array([0.0, 1.0])
    for _ in range(model2.m1):
        p = np.polynomial.polynomial.polysub([model2.a], np.polynomial.polynomial.polymul(p, p))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_system(model2, cert3, 1e-3, p)
