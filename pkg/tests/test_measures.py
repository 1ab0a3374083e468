import numpy as np
import pytest
import scipy.sparse as sp

from mtskew.errors import NotConverged
from mtskew.measures import (attractor, build_ulam, critical_return_test, crossing_curve,
                             dump_and_recompute, fiber_ulam, recurrence_delta,
                             refinement_consistency, slow_recurrence, uniqueness_diagnostic,
                             vertical_exponent_vs_bound)
from mtskew.skew import compute_constants, lyapunov_exponents


@pytest.fixture(scope="module")
def small_ulam(system):
    return build_ulam(system, 64, 32)


def test_ulam_is_column_stochastic(small_ulam):
    u = small_ulam
    assert np.max(np.abs(u.column_sums() - 1)) == 0.0
    assert np.all(u.density >= 0) and u.density.sum() == pytest.approx(1, abs=1e-12)
    assert u.converged and u.residual < 1e-6


def test_ulam_is_seed_deterministic(system, small_ulam):
    again = build_ulam(system, 64, 32)
    assert (again.operator != small_ulam.operator).nnz == 0


def test_decoupled_marginals(system, cert3):
    u = build_ulam(system.with_alpha(0.0), 512, 256)
    assert np.abs(u.theta_marginal() - 1 / 512).sum() < 1e-2
    _, d1 = fiber_ulam(cert3.c, 256)
    assert np.abs(u.y_marginal() - d1).sum() < 1e-2


def test_uniqueness_identical_starts(small_ulam):
    d0 = np.ones(small_ulam.operator.shape[0])
    assert uniqueness_diagnostic(small_ulam, starts=[d0, d0.copy()]) == 0.0


def test_uniqueness_flags_disconnected_operator():
    block = np.array([[0.5, 0.5], [0.5, 0.5]])
    P = sp.csr_matrix(np.block([[block, np.zeros((2, 2))], [np.zeros((2, 2)), block]]))
    starts = [np.array([1.0, 1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0, 1.0])]
    assert uniqueness_diagnostic(P, starts=starts) == pytest.approx(2.0)


def test_not_converged_carries_partial_result(system):
    with pytest.raises(NotConverged) as exc:
        build_ulam(system, 32, 16, max_iter=2, strict=True)
    assert exc.value.result is not None and exc.value.result.steps == 2


def test_refinement_consistency(system, small_ulam):
    fine = build_ulam(system, 128, 64)
    rep = refinement_consistency(small_ulam, fine)
    assert np.isfinite(rep["l1_difference"]) and rep["l1_difference"] < 2
    with pytest.raises(ValueError):
        refinement_consistency(small_ulam, small_ulam)


def test_attractor_nested(system):
    prev = attractor(system, 0, 64, 32)
    assert prev.count == 64 * 32
    for n in (1, 2, 3):
        cur = attractor(system, n, 64, 32)
        assert cur.count <= prev.count
        assert not np.any(cur.cells & ~prev.cells)
        prev = cur


def test_density_lives_on_attractor(system):
    # Ulam's discretization spreads mass by at most one cell in y at the default grid
    u = build_ulam(system, 512, 256)
    A = attractor(system, 2, 512, 256)
    cover = A.cells.copy()
    cover[:, 1:] |= A.cells[:, :-1]
    cover[:, :-1] |= A.cells[:, 1:]
    assert u.mass[~cover].sum() < 1e-9


def test_recurrence_trivial_cases(system):
    rs = slow_recurrence(system, 5, [100, 1000], epsilon=1e3, eta=0.0, delta_tilde=0.1)
    assert np.all(rs.fractions == 0)
    assert rs.delta == pytest.approx(recurrence_delta(1e-3, 0.0))
    # a threshold below every visit records nothing
    tiny = slow_recurrence(system, 3, [100, 1000], eta=0.0, delta_tilde=1e-12)
    assert np.all(tiny.sums == 0)


def test_dump_reproduces_sums(system):
    kern, again, dump = dump_and_recompute(system, 0.2, 0.4, 20000, 0.05, [100, 1000, 20000])
    assert np.array_equal(kern, again)
    assert kern[-1] > 0 and len(dump) == 20000


def test_critical_return_shape(system):
    K = compute_constants(system.alpha, 1.4257)
    Y = crossing_curve(system, K.M_alpha)
    r = np.linspace(K.r0, K.r0 + 5, 6)
    res = critical_return_test(system, Y, K.M_alpha, list(r) + [60.0], n_samples=20000)
    fr = np.array(res["fractions"])
    assert np.all(np.diff(fr) <= 0) and fr[-1] == 0


def test_vertical_bounds(system):
    lyap = lyapunov_exponents(system, 3, 50000, 100, dfinv=True)
    K = compute_constants(system.alpha, 1.4257)
    rep = vertical_exponent_vs_bound(system, lyap, K)
    assert rep["per_orbit_ok"] and rep["lambda_y_ok"] and rep["dfinv_ok"]
    assert rep["C"] == pytest.approx(1 / 8, rel=1e-9)
