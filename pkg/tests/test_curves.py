import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtskew.curves import (AdmissibleCurve, check_linear_approx, check_nonflat, curve_recurrence,
                           evolve_horizontal, horizontal, make_t_family, random_t_family,
                           random_words, separation_test, t_family_bounds)
from mtskew.errors import (DepthExceeded, MissingProvenance, NoFiniteL0, NoSeparation,
                           NotSubElement)
from mtskew.expanding import markov_partition, p1_branches


@pytest.fixture(scope="module")
def curve_set(system):
    rng = np.random.default_rng(11)
    words = [random_words(system, int(d), 1, rng)[0] for d in rng.integers(3, 9, 10)]
    return [evolve_horizontal(system, y, len(w), [w])[0]
            for y, w in zip(rng.uniform(-1, 1, 10), words)]


@settings(max_examples=10, deadline=None)
@given(st.floats(-1.7, 1.7))
def test_decoupled_push_is_constant(system, y0):
    S = system.with_alpha(0.0)
    for X in evolve_horizontal(S, y0, 1)[:3]:
        th = np.linspace(*X.domain, 17)
        np.testing.assert_allclose(X(th), S.b - y0 * y0, atol=1e-14)


def test_depth_one_linear_approximation(system):
    curves = evolve_horizontal(system, 0.0, 1)
    assert len(curves) == markov_partition(system.base, 1, "P").n_elements
    assert max(check_linear_approx(X)[0] for X in curves) <= 1e-9


def test_push_matches_direct_iteration(system):
    word = (3, 5, 1, 7, 0, 4)
    X = evolve_horizontal(system, 0.3, 6, [word])[0]
    th = X.nodes(10)
    br = p1_branches(system.base)
    t = th.copy()
    for e in reversed(word):
        t = br[e](t)
    tt, yy = t.copy(), np.full(10, 0.3)
    for _ in range(6):
        tt, yy = system.F(tt, yy)
    np.testing.assert_allclose(tt, th, atol=1e-10)
    np.testing.assert_allclose(X(th), yy, atol=1e-12)


def test_curve_metadata(curve_set, system):
    p0 = markov_partition(system.base, 0, "P")
    elements = [p0.element(i) for i in range(p0.n_elements)]
    for X in curve_set:
        assert X.provenance["depth"] == X.depth == len(X.word)
        assert X.residual <= 1e-9
        assert any(np.allclose(X.domain, e, atol=1e-12) for e in elements)


def test_missing_provenance(system):
    X = AdmissibleCurve((-1.0, 1.0), np.array([0.5]), 1e-3, 0.5, 0)
    with pytest.raises(MissingProvenance):
        X.t_values(np.array([0.0]))


def test_curve_cap(system):
    with pytest.raises(DepthExceeded):
        evolve_horizontal(system, 0.1, 5, "all", max_curves=100)


def test_t_family_members(system):
    rng = np.random.default_rng(2)
    el = random_t_family(system, rng, 0, 8)
    assert el.coeffs[0] == 1.0
    assert np.all(np.abs(el.coeffs) <= 4.0 ** np.arange(8))
    th = np.linspace(*el.omega, 9)
    np.testing.assert_allclose(el(th), el.coeffs @ el.terms(th))
    # the tail bound shrinks geometrically with the truncation length
    longer = random_t_family(system, rng, 0, 12)
    assert longer.truncation_bound < el.truncation_bound
    with pytest.raises(ValueError):
        make_t_family(system, 0, el.word[:2], [1.0, 5.0])


def test_t_family_rejects_uncovered_word(model3, cert3):
    # over the two-band base, branches onto the other P0 element do not compose
    from mtskew.skew import build_system

    S = build_system(model3, cert3, 1e-3)
    p0 = markov_partition(model3, 0, "P")
    assert p0.n_elements == 2
    br = p1_branches(model3)
    bad = next(i for i, b in enumerate(br) if not np.allclose(b.omega0, p0.element(0)))
    with pytest.raises(NotSubElement):
        make_t_family(S, 0, [bad], [1.0])


def test_t_family_bounds(system):
    res = t_family_bounds(system, 40, 2, np.random.default_rng(4), N_T=8)
    assert res["B_T"] > 0 and all(a > 0 for a in res["A"])
    assert res["B_T_half"] >= res["B_T"]


def test_nonflat_small_set(curve_set):
    rep = check_nonflat(curve_set)
    assert 0 <= rep.l0 <= 8 and rep.B > 0 and rep.A >= rep.B
    with pytest.raises(NoFiniteL0):
        check_nonflat(curve_set, l_max=1, threshold=1e6)


def test_curve_recurrence_monotone(curve_set, system):
    eps = [1e-1, 1e-2, 1e-3]
    for X in curve_set:
        fr = curve_recurrence(X, eps, system.base.length)
        assert np.all(np.diff(fr) <= 0) and np.all(fr >= 0)


def test_odd_coupling_separates(system):
    p1 = markov_partition(system.base, 1, "P")
    central = int(np.argmin(np.abs(p1.breakpoints))) - 1
    Y = evolve_horizontal(system, 0.3, 1, [[central]])[0]
    res = separation_test(system, Y, 2)
    assert res.M_star >= 1 and res.eps0 > 1e-4


def test_even_coupling_has_no_separation(even_system):
    with pytest.raises(NoSeparation) as exc:
        separation_test(even_system, horizontal(even_system, 0.3, 0), central_only=True)
    assert exc.value.best == {1: 0.0}
