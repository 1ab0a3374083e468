import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtskew.errors import NoSignChange, StrictnessViolation
from mtskew.mt_params import (MTCertificate, QuadraticParam, check_topological_exactness,
                              critical_orbit, find_mt_parameter, iterate_quadratic,
                              postcritical_set)


def cubic_root_oracle():
    # c**3 - 2 c**2 + 2 c - 2 has one real root, in (1.5, 1.6)
    f = lambda c: c ** 3 - 2 * c ** 2 + 2 * c - 2
    lo, hi = mpmath.mpf("1.5"), mpmath.mpf("1.6")
    with mpmath.workdps(40):
        for _ in range(200):
            mid = (lo + hi) / 2
            if f(mid) * f(lo) > 0:
                lo = mid
            else:
                hi = mid
        return float((lo + hi) / 2)


def test_full_parameter_is_exact(cert2):
    assert cert2.c == 2.0
    assert cert2.residual == 0.0
    assert (cert2.preperiod, cert2.period) == (2, 1)


def test_cubic_root_matches_independent_bisection(cert3):
    assert abs(cert3.c - cubic_root_oracle()) < 1e-13
    assert cert3.residual < 1e-14
    assert cert3.strictness_gap > 0.1


def test_orbit_of_full_parameter(cert2):
    np.testing.assert_array_equal(critical_orbit(2.0, 5), [0, 2, -2, -2, -2])


def test_postcritical_set_size(cert2, cert3):
    # Q^n(0) for 1 <= n <= k+p, where Q^{k+p}(0) = Q^k(0) repeats
    assert len(postcritical_set(cert2)) == 2
    assert len(postcritical_set(cert3)) == 3
    pc = postcritical_set(cert3)
    assert pc.is_closed()
    pts = pc.as_array()
    c = cert3.c
    for v in c - pts ** 2:
        assert np.min(np.abs(pts - v)) < 1e-9


def test_certificate_json_roundtrip(cert3):
    d = cert3.to_dict()
    assert set(d) >= {"c", "preperiod", "period", "residual", "strictness_gap", "postcritical"}
    assert d["c"] == cert3.c


def test_no_sign_change():
    with pytest.raises(NoSignChange):
        find_mt_parameter(2, 1, (1.2, 1.3))


def test_degenerate_orbit_is_rejected():
    # c = 1 gives a periodic critical orbit 0 -> 1 -> 0
    with pytest.raises(StrictnessViolation):
        MTCertificate.from_value(1.0, 2, 1)


def test_from_value_requires_closed_orbit():
    with pytest.raises(StrictnessViolation):
        MTCertificate.from_value(1.9, 2, 1)


def test_param_range():
    with pytest.raises(ValueError):
        QuadraticParam(2.5)
    with pytest.raises(ValueError):
        find_mt_parameter(0, 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(1.0, 2.0), st.floats(-1.0, 1.0), st.integers(0, 8))
def test_iterate_quadratic_composes(c, x, n):
    once = iterate_quadratic(c, iterate_quadratic(c, x, n), 1)
    assert once == pytest.approx(iterate_quadratic(c, x, n + 1), abs=1e-12)


def test_exactness(model2, model3):
    ok, steps = check_topological_exactness(model2)
    assert ok
    # the (3, 1) parameter has two bands that the map swaps
    ok3, _ = check_topological_exactness(model3)
    assert not ok3
    a = model3.a
    p = (-1 + math.sqrt(1 + 4 * a)) / 2
    lo = a - a * a
    # Q maps [lo, p] onto [p, a] and [p, a] into [lo, p]
    xs = np.linspace(lo, p, 1001)
    assert np.all(a - xs ** 2 >= p - 1e-12)
    xs = np.linspace(p, a, 1001)
    assert np.all(a - xs ** 2 <= p + 1e-12)
