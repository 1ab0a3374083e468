import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtskew import _kernels
from mtskew.errors import AlphaTooLarge, ConstantCoupling
from mtskew.rng import generator, key_for
from mtskew.skew import (alpha_max, build_system, compute_constants, estimate_sigma,
                         fiber_jacobian, initial_conditions, iterate, lyapunov_exponents)


# arithmetic kernels

@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(1.0, 2.0), st.floats(-1e-2, 1e-2))
def test_double_double_fiber(y, b, add):
    hi, lo = _kernels.dd_fiber(y, 0.0, b, add)
    with mpmath.workdps(40):
        exact = mpmath.mpf(b) - mpmath.mpf(y) ** 2 + mpmath.mpf(add)
        err = abs(mpmath.mpf(hi) + mpmath.mpf(lo) - exact)
    assert float(err) <= 1e-30 + 1e-30 * abs(float(exact))


def test_compensated_sum_matches_fsum():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(100000) * 10.0 ** rng.integers(-8, 8, 100000)
    s = c = 0.0
    for x in v:
        s, c = _kernels._kadd(s, c, x)
    assert s + c == pytest.approx(math.fsum(v), rel=1e-15, abs=1e-15)


# counter-based streams

def test_streams_are_keyed():
    keys = {key_for(s, i, t) for s in (0, 1) for i in (0, 1, 2) for t in ("orbit", "ulam")}
    assert len(keys) == 12
    a = generator(7, 3, "orbit").random(4)
    b = generator(7, 3, "orbit").random(4)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        key_for(-1, 0)


def test_initial_conditions_order_independent(system):
    all_ = initial_conditions(system, 5, range(10))
    rev = initial_conditions(system, 5, range(9, -1, -1))
    np.testing.assert_array_equal(all_, rev[::-1])


# system construction

@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 2.0))
def test_alpha_max_closed_form(b):
    assert alpha_max(b) == pytest.approx(math.sqrt(2 * b) - b, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 1.0))
def test_rectangle_invariance(system, frac, yfrac, tfrac):
    S = system.with_alpha(frac * system.alpha_max)
    lo, hi = S.base.I_a
    th = np.array([lo + tfrac * (hi - lo)])
    y = np.array([yfrac * S.R])
    th1, y1 = S.F(th, y)
    assert lo - 1e-12 <= th1[0] <= hi + 1e-12
    assert abs(y1[0]) <= S.R * (1 + 1e-12)


def test_alpha_limits(model2, cert2, cert3):
    assert alpha_max(cert3.c) == pytest.approx(0.21341, abs=1e-4)
    assert alpha_max(2.0) < 1e-15
    with pytest.raises(AlphaTooLarge):
        build_system(model2, cert3, 0.3)
    with pytest.raises(AlphaTooLarge):
        build_system(model2, cert2, 1e-3)
    with pytest.raises(ConstantCoupling):
        build_system(model2, cert3, 1e-3, [1.0])
    with pytest.warns(UserWarning):
        build_system(model2, cert3, 1e-3, [0.0, 0.0, 1.0])


def test_coupling_normalization(system):
    # phi = x / sup|x| on [-2, 2] is sin(theta) at a = 2
    th = np.linspace(-1.5, 1.5, 101)
    np.testing.assert_allclose(system.phi(th), np.sin(th), atol=1e-12)
    np.testing.assert_allclose(system.dphi(th), np.cos(th), atol=1e-9)


def test_decoupled_map_is_product(system):
    S = system.with_alpha(0.0)
    th = np.linspace(-1.5, 1.5, 31)
    y = np.linspace(-1.7, 1.7, 31)
    th1, y1 = S.F(th, y)
    np.testing.assert_array_equal(y1, S.b - y * y)
    np.testing.assert_allclose(th1, S.base.h(th), atol=0)


def test_kernel_matches_array_map(system):
    th, y = np.array([0.123]), np.array([0.456])
    # few steps only: the base expands by 8 per step
    acc = iterate(system, th[0], y[0], 5)
    for _ in range(5):
        th, y = system.F(th, y)
    assert acc.theta == pytest.approx(th[0], abs=1e-9)
    assert acc.y == pytest.approx(y[0], abs=1e-9)


def test_base_log_sum_is_exact(system):
    # tent^3 has slope 8 everywhere
    acc = iterate(system.with_alpha(0.0), 0.1, 0.3, 100000)
    assert acc.sum_log_dh == pytest.approx(100000 * math.log(8), rel=1e-14)


def test_full_fiber_stays_in_interval(model2, cert2):
    S = build_system(model2, cert2, 0.0)
    acc = iterate(S, 0.2, 0.3, 10000)
    assert abs(acc.y) <= 2


def test_cocycle_against_high_precision_differences(system):
    rng = np.random.default_rng(3)
    th = rng.uniform(*system.base.I_a, 5)
    y = rng.uniform(-1.5, 1.5, 5)
    n = 12
    jac, _, _ = fiber_jacobian(system, th, y, n)
    for k in range(5):
        path = [th[k]]
        t = np.array([th[k]])
        for _ in range(n):
            t, _ = system.F(t, np.zeros(1))
            path.append(t[0])
        add = system.alpha * system.phi(np.array(path[:-1]))
        with mpmath.workdps(60):
            def f(y0):
                v = mpmath.mpf(y0)
                for i in range(n):
                    v = system.b - v * v + mpmath.mpf(add[i])
                return v
            h = mpmath.mpf("1e-25")
            fd = (f(mpmath.mpf(y[k]) + h) - f(mpmath.mpf(y[k]) - h)) / (2 * h)
        assert jac[k] == pytest.approx(float(fd), rel=1e-9)


def test_lyapunov_reproducible_and_worker_independent(system):
    a = lyapunov_exponents(system, 4, 5000, 100, seed=9)
    b = lyapunov_exponents(system, 4, 5000, 100, seed=9, workers=2)
    np.testing.assert_array_equal(a.lambda_y, b.lambda_y)
    assert a.stats["n_orbits"] == 4


def test_dfinv_decoupled_full(model2, cert2):
    S = build_system(model2, cert2, 0.0)
    res = lyapunov_exponents(S, 2, 200000, 100, seed=1, dfinv=True)
    np.testing.assert_allclose(res.dfinv, -res.lambda_y, atol=1e-12)


# constants

def test_constants_reference_values():
    K = compute_constants(1e-3, 1.5)
    assert (K.N_alpha, K.M_alpha) == (5, 1)
    assert K.eta == pytest.approx(math.log(1.5) / (8 * math.log(32)))
    assert 0.5 * K.eta * math.log(1.5) == pytest.approx(0.00297, abs=1e-5)
    assert K.r0 == pytest.approx((0.5 - 2 * K.eta) * math.log(1000))
    assert compute_constants(1e-3, 1.5, l0=2, beta0=0.1).beta == 0.1


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 0.5), st.floats(1.01, 1.99))
def test_constants_properties(alpha, sigma):
    K = compute_constants(alpha, sigma)
    assert 4.0 ** K.N_alpha >= 1 / alpha * (1 - 1e-9)
    assert 32.0 ** K.M_alpha <= 1 / alpha * (1 + 1e-9)
    assert sigma ** K.N_alpha <= 1 / alpha


def test_sigma_fit(cert3):
    fit = estimate_sigma(cert3, 1e-3, trials=40, orbit_len=5000)
    assert 1.3 < fit.sigma < 1.55 and not fit.clamped
    full = estimate_sigma(2.0, 1e-3, trials=40, orbit_len=5000)
    assert full.sigma < 2


def test_even_system_builds_with_warning(model2, cert3):
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        build_system(model2, cert3, 1e-3, [2.0, 0.0, -1.0])
    assert any("even degree" in str(x.message) for x in w)
