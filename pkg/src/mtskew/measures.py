"""Invariant densities, attractor cover and recurrence experiments.

The a.c.i.p. is approximated with Ulam's method on a rectangular grid of
``I_a x I_b``; uniqueness is probed by power iteration from several
random starts. The attractor ``F^n(I_a x I_b)`` is covered by propagating
fiber intervals along the backward tree of ``h``. The recurrence
experiments estimate how often and how deeply orbits approach the
critical line ``y = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import NotConverged
from .rng import generator
from .skew import SkewSystem, initial_conditions, iterate

__all__ = [
    "UlamEstimate",
    "AttractorEstimate",
    "RecurrenceStats",
    "build_ulam",
    "base_ulam",
    "fiber_ulam",
    "power_iteration",
    "uniqueness_diagnostic",
    "refinement_consistency",
    "attractor",
    "slow_recurrence",
    "critical_return_test",
    "vertical_exponent_vs_bound",
]


# ---------------------------------------------------------------------------
# Ulam operators
# ---------------------------------------------------------------------------

def power_iteration(P, d0=None, tol: float = 1e-10, max_iter: int = 10000):
    """Iterate ``d <- P d`` until the L1 step change drops below ``tol``.

    Returns ``(d, steps, converged, log)`` where ``log`` holds the step
    changes every 10 iterations.
    """
    n = P.shape[0]
    d = np.full(n, 1.0 / n) if d0 is None else np.asarray(d0, dtype=float) / np.sum(d0)
    log = []
    for k in range(1, max_iter + 1):
        dn = P @ d
        dn /= dn.sum()
        ch = float(np.abs(dn - d).sum())
        d = dn
        if k % 10 == 0 or ch < tol:
            log.append((k, ch))
        if ch < tol:
            return d, k, True, log
    return d, max_iter, False, log


@dataclass
class UlamEstimate:
    """Ulam discretization of the transfer operator and its fixed density."""

    n_theta: int
    n_y: int
    theta_edges: np.ndarray
    y_edges: np.ndarray
    operator: sp.csr_matrix
    density: np.ndarray
    residual: float
    steps: int
    converged: bool
    log: list = field(default_factory=list)

    @property
    def mass(self) -> np.ndarray:
        """Density as an ``(n_theta, n_y)`` array of cell masses."""
        return self.density.reshape(self.n_theta, self.n_y)

    def theta_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    def y_marginal(self) -> np.ndarray:
        return self.mass.sum(axis=0)

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.operator.sum(axis=0)).ravel()


def _assemble(src, tgt, n, weight):
    M = sp.coo_matrix((np.full(len(src), weight), (tgt, src)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return M


def build_ulam(system: SkewSystem, n_theta: int = 512, n_y: int = 256,
               samples: int = 8, seed: int = 0, tol: float = 1e-10,
               max_iter: int = 10000, strict: bool = False,
               chunk: int = 32) -> UlamEstimate:
    """Ulam matrix of ``F`` with stratified jittered sampling.

    Each cell is sampled on a ``samples x samples`` sub-grid. The theta
    jitter is drawn per theta column and the y jitter per cell, each from
    its own counter-based stream. The stationary density comes from power
    iteration started at the uniform density.

    Raises
    ------
    NotConverged
        Only with ``strict=True``; otherwise the flag is recorded.
    """
    if n_theta < 16 or n_y < 16:
        raise ValueError("grid must be at least 16 x 16")
    if samples * samples < 32:
        raise ValueError("need at least 32 samples per cell")
    model = system.base
    at = model.atlas
    lo, hi = model.I_a
    te = np.linspace(lo, hi, n_theta + 1)
    ye = np.linspace(-system.R, system.R, n_y + 1)
    dt, dy = te[1] - te[0], ye[1] - ye[0]
    N = n_theta * n_y
    S = samples
    srcs, tgts = [], []
    for c0 in range(0, n_theta, chunk):
        cols = np.arange(c0, min(c0 + chunk, n_theta))
        # theta sub-samples, jittered per column
        jt = np.array([generator(seed, int(c), "ulam").random(S) for c in cols])
        th = te[cols][:, None] + dt * (np.arange(S)[None, :] + jt) / S  # (C, S)
        hc, s = at.theta_to_chart(th.ravel())
        x = at.chart_to_x(hc, s)
        for _ in range(model.m1):
            hc, s = at.step(hc, s)
        th1 = at.chart_to_theta(hc, s)
        it1 = np.clip(((th1 - lo) / dt).astype(np.int64), 0, n_theta - 1).reshape(len(cols), S)
        ph = system.alpha * system.phi_x(x).reshape(len(cols), S)
        # y sub-samples, jittered per cell
        g = generator(seed, (1 << 40) + int(c0), "ulam")
        jy = g.random((len(cols), n_y, S))
        yy = ye[None, :n_y, None] + dy * (np.arange(S)[None, None, :] + jy) / S  # (C, Ny, S)
        base = system.b - yy * yy  # (C, Ny, S)
        y1 = base[:, :, None, :] + ph[:, None, :, None]  # (C, Ny, S_theta, S_y)
        iy1 = np.clip(((y1 - ye[0]) / dy).astype(np.int64), 0, n_y - 1)
        src = (cols[:, None, None, None] * n_y + np.arange(n_y)[None, :, None, None])
        src = np.broadcast_to(src, iy1.shape)
        tgt = it1[:, None, :, None] * n_y + iy1
        srcs.append(src.ravel())
        tgts.append(tgt.ravel())
    P = _assemble(np.concatenate(srcs), np.concatenate(tgts), N, 1.0 / (S * S))
    d, steps, conv, log = power_iteration(P, None, tol, max_iter)
    res = float(np.abs(P @ d - d).sum())
    est = UlamEstimate(n_theta, n_y, te, ye, P, d, res, steps, conv, log)
    if strict and not conv:
        raise NotConverged(f"power iteration did not converge in {max_iter} steps", est)
    return est


def base_ulam(model, n_theta: int = 512, samples: int = 64, seed: int = 0,
              tol: float = 1e-12, max_iter: int = 10000):
    """Ulam density of ``h`` alone on ``I_a``; returns ``(edges, mass)``."""
    at = model.atlas
    lo, hi = model.I_a
    te = np.linspace(lo, hi, n_theta + 1)
    dt = te[1] - te[0]
    jt = np.array([generator(seed, c, "ulam").random(samples) for c in range(n_theta)])
    th = te[:-1, None] + dt * (np.arange(samples)[None, :] + jt) / samples
    hc, s = at.theta_to_chart(th.ravel())
    for _ in range(model.m1):
        hc, s = at.step(hc, s)
    t1 = at.chart_to_theta(hc, s)
    tgt = np.clip(((t1 - lo) / dt).astype(np.int64), 0, n_theta - 1)
    src = np.repeat(np.arange(n_theta), samples)
    P = _assemble(src, tgt, n_theta, 1.0 / samples)
    d, *_ = power_iteration(P, None, tol, max_iter)
    return te, d


def fiber_ulam(b: float, n_y: int = 256, samples: int = 4096, seed: int = 0,
               tol: float = 1e-12, max_iter: int = 10000):
    """Ulam density of ``Q_b`` on ``[-sqrt(2b), sqrt(2b)]``; returns ``(edges, mass)``."""
    R = math.sqrt(2 * b)
    ye = np.linspace(-R, R, n_y + 1)
    dy = ye[1] - ye[0]
    g = generator(seed, (1 << 41), "ulam")
    y = ye[:-1, None] + dy * (np.arange(samples)[None, :] + g.random((n_y, samples))) / samples
    tgt = np.clip(((b - y * y - ye[0]) / dy).astype(np.int64), 0, n_y - 1).ravel()
    src = np.repeat(np.arange(n_y), samples)
    P = _assemble(src, tgt, n_y, 1.0 / samples)
    d, *_ = power_iteration(P, None, tol, max_iter)
    return ye, d


def uniqueness_diagnostic(ulam_or_operator, n_starts: int = 4, seed: int = 0,
                          tol: float = 1e-10, max_iter: int = 10000,
                          starts=None) -> float:
    """Largest pairwise L1 distance between limits of random starting densities.

    Accepts an :class:`UlamEstimate` or a column-stochastic matrix.

    Raises
    ------
    NotConverged
        Some start did not converge.
    """
    P = ulam_or_operator.operator if isinstance(ulam_or_operator, UlamEstimate) else ulam_or_operator
    n = P.shape[0]
    if starts is None:
        if n_starts < 2:
            raise ValueError("need at least two starts")
        starts = [generator(seed, k, "uniqueness").random(n) for k in range(n_starts)]
    lim = []
    for d0 in starts:
        d, _, conv, _ = power_iteration(P, d0, tol, max_iter)
        if not conv:
            raise NotConverged("a start did not converge")
        lim.append(d)
    return max(float(np.abs(lim[i] - lim[j]).sum())
               for i in range(len(lim)) for j in range(i))


def refinement_consistency(coarse: UlamEstimate, fine: UlamEstimate) -> dict:
    """Compare densities on grids ``N`` and ``2N`` after aggregating the fine one."""
    if fine.n_theta != 2 * coarse.n_theta or fine.n_y != 2 * coarse.n_y:
        raise ValueError("fine grid must double both dimensions")
    agg = fine.mass.reshape(coarse.n_theta, 2, coarse.n_y, 2).sum(axis=(1, 3))
    return {"l1_difference": float(np.abs(agg - coarse.mass).sum()),
            "coarse_residual": coarse.residual, "fine_residual": fine.residual}


# ---------------------------------------------------------------------------
# attractor
# ---------------------------------------------------------------------------

@dataclass
class AttractorEstimate:
    n: int
    cells: np.ndarray  # boolean (n_theta, n_y)

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    def difference(self, other: "AttractorEstimate") -> float:
        """Cells in exactly one of the two sets, relative to this set's size."""
        return float(np.sum(self.cells ^ other.cells)) / max(self.count, 1)


def _qb_interval(lo, hi, b):
    l2, h2 = lo * lo, hi * hi
    top = np.where((lo <= 0) & (hi >= 0), b, b - np.minimum(l2, h2))
    return b - np.maximum(l2, h2), top


def attractor(system: SkewSystem, n: int, n_theta: int = 512, n_y: int = 256,
              samples: int = 8, max_leaves: int = 1 << 22) -> AttractorEstimate:
    """Grid cells met by ``F^n(I_a x I_b)``.

    For sample points ``theta'`` in every theta column, each backward
    branch ``theta' = h^n(theta)`` carries the fiber interval ``I_b``
    forward exactly (``Q_b`` of an interval, shifted by ``alpha phi``);
    the y cells met by any of these intervals are marked.
    """
    model = system.base
    at = model.atlas
    lo, hi = model.I_a
    te = np.linspace(lo, hi, n_theta + 1)
    ye = np.linspace(-system.R, system.R, n_y + 1)
    if n == 0:
        return AttractorEstimate(0, np.ones((n_theta, n_y), dtype=bool))
    dt, dy = te[1] - te[0], ye[1] - ye[0]
    th = (te[:-1, None] + dt * (np.arange(samples)[None, :] + 0.5) / samples).ravel()
    col = np.repeat(np.arange(n_theta), samples)
    hc, s = at.theta_to_chart(th)
    # backward tree; levels[k] holds the charts at F-depth k
    levels = [(hc, s, np.arange(len(th)))]
    for _ in range(n):
        hc, s, _ = levels[-1]
        parent = np.arange(len(hc))
        for _ in range(model.m1):
            nh, ns, npar = [], [], []
            for sg in (-1.0, 1.0):
                ph, ps, ok = at.preimage(hc, s, sg)
                nh.append(ph[ok])
                ns.append(ps[ok])
                npar.append(parent[ok])
            hc, s, parent = np.concatenate(nh), np.concatenate(ns), np.concatenate(npar)
            if len(hc) > max_leaves:
                raise MemoryError("backward tree too large")
        levels.append((hc, s, parent))
    # forward interval propagation along each leaf chain
    leaf_lo = np.full(len(levels[-1][0]), -system.R)
    leaf_hi = np.full(len(levels[-1][0]), system.R)
    idx = np.arange(len(leaf_lo))
    for k in range(n, 0, -1):
        hc, s, parent = levels[k]
        x = at.chart_to_x(hc[idx], s[idx])
        add = system.alpha * system.phi_x(x)
        a_, b_ = _qb_interval(leaf_lo, leaf_hi, system.b)
        leaf_lo, leaf_hi = a_ + add, b_ + add
        idx = parent[idx]
    c = col[idx]
    i0 = np.clip(np.floor((leaf_lo - ye[0]) / dy).astype(np.int64), 0, n_y - 1)
    i1 = np.clip(np.floor((leaf_hi - ye[0]) / dy).astype(np.int64), 0, n_y - 1)
    diff = np.zeros((n_theta, n_y + 1), dtype=np.int64)
    np.add.at(diff, (c, i0), 1)
    np.add.at(diff, (c, i1 + 1), -1)
    cells = np.cumsum(diff[:, :n_y], axis=1) > 0
    return AttractorEstimate(n, cells)


# ---------------------------------------------------------------------------
# recurrence experiments
# ---------------------------------------------------------------------------

@dataclass
class RecurrenceStats:
    """Recurrence sums ``S_n = sum_{i<n, |y_i|<delta} log(1/|y_i|)`` over an ensemble."""

    delta: float
    Delta: int
    n_list: list
    epsilon: float
    sums: np.ndarray  # (orbits, len(n_list))
    fractions: np.ndarray
    slope: float | None
    intercept: float | None
    r_squared: float | None
    mean_rate: np.ndarray
    se_rate: np.ndarray
    event_counts: np.ndarray

    def tail_rows(self):
        for n, f in zip(self.n_list, self.fractions):
            yield (int(n), float(self.epsilon), float(f))

    def to_dict(self) -> dict:
        return {"delta": self.delta, "Delta": self.Delta, "epsilon": self.epsilon,
                "n_list": list(map(int, self.n_list)),
                "fractions": self.fractions.tolist(), "slope": self.slope,
                "intercept": self.intercept, "r_squared": self.r_squared,
                "mean_S_over_n": self.mean_rate.tolist(),
                "se_S_over_n": self.se_rate.tolist(),
                "mean_events": self.event_counts.mean(axis=0).tolist()}


def recurrence_delta(alpha: float, eta: float, delta_tilde: float = 0.1) -> float:
    return delta_tilde * alpha ** (1.0 - 2.0 * eta)


def slow_recurrence(system: SkewSystem, n_orbits: int = 1000, n_list=(1000, 10000, 100000),
                    epsilon: float = 1e-2, eta: float = 0.0, delta_tilde: float = 0.1,
                    seed: int = 0, burn_in: int = 1000) -> RecurrenceStats:
    """Exceedance fractions ``#{orbits : S_n > epsilon n} / N`` along ``n_list``.

    ``log(fraction)`` is fitted against ``sqrt(n)`` over the positive
    fractions; slope, intercept and R^2 are reported.
    """
    delta = recurrence_delta(system.alpha, eta, delta_tilde)
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    n_list = sorted(int(n) for n in n_list)
    nmax = n_list[-1]
    ics = initial_conditions(system, seed, range(n_orbits))
    sums = np.zeros((n_orbits, len(n_list)))
    counts = np.zeros((n_orbits, len(n_list)))
    for k in range(n_orbits):
        acc = iterate(system, ics[k, 0], ics[k, 1], nmax, burn_in, delta=delta,
                      checkpoints=n_list, max_events=100000)
        sums[k] = acc.checkpoints[:, 1]
        ev = acc.events[:, 0]
        counts[k] = [np.sum(ev < n) for n in n_list]
    frac = np.mean(sums > epsilon * np.array(n_list)[None, :], axis=0)
    rate = sums / np.array(n_list)[None, :]
    pos = frac > 0
    slope = icpt = r2 = None
    if pos.sum() >= 2:
        x = np.sqrt(np.array(n_list, dtype=float))[pos]
        yv = np.log(frac[pos])
        A = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
        icpt, slope = float(coef[0]), float(coef[1])
        ss = float(np.sum((yv - yv.mean()) ** 2))
        r2 = 1.0 - float(np.sum((A @ coef - yv) ** 2)) / ss if ss > 0 else 1.0
    Delta = int(math.floor(math.log(1.0 / delta) / math.log(system.base.lambda_g)))
    return RecurrenceStats(delta, Delta, n_list, float(epsilon), sums, frac, slope, icpt, r2,
                           rate.mean(axis=0), rate.std(axis=0) / math.sqrt(n_orbits), counts)


def dump_and_recompute(system: SkewSystem, theta0: float, y0: float, n: int, delta: float,
                       checkpoints, burn_in: int = 1000):
    """Run one orbit with a fiber dump; return kernel sums and sums recomputed from the dump."""
    dump = np.zeros(n)
    acc = iterate(system, theta0, y0, n, burn_in, delta=delta, checkpoints=checkpoints,
                  dump=dump, max_events=1)
    again = _kernels.recurrence_sums(dump, delta, np.asarray(checkpoints, dtype=np.int64))
    return acc.checkpoints[:, 1], again, dump


def _f_M(system, theta, y, M):
    for _ in range(M):
        theta, y = system.F(theta, y)
    return y


def critical_return_test(system: SkewSystem, curve, M: int, r_values, n_samples: int = 100000,
                         seed: int = 0) -> dict:
    """Fractions of ``theta`` in the curve's domain with ``|f_M(theta, Y(theta))| <= sqrt(alpha) e^-r``.

    A least-squares line through ``(r, log fraction)`` gives the decay rate
    ``beta0_hat`` (minus the slope) and its R^2.
    """
    lo, hi = curve.domain
    g = generator(seed, 0, "critical")
    th = lo + (hi - lo) * g.random(n_samples)
    fM = np.abs(_f_M(system, th, curve(th), M))
    r = np.asarray(r_values, dtype=float)
    sa = math.sqrt(system.alpha)
    frac = np.array([np.mean(fM <= sa * math.exp(-rv)) for rv in r])
    pos = frac > 0
    beta = r2 = None
    if pos.sum() >= 2:
        A = np.column_stack([np.ones(pos.sum()), r[pos]])
        yv = np.log(frac[pos])
        coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
        beta = -float(coef[1])
        ss = float(np.sum((yv - yv.mean()) ** 2))
        r2 = 1.0 - float(np.sum((A @ coef - yv) ** 2)) / ss if ss > 0 else 1.0
    return {"M": int(M), "r": r.tolist(), "fractions": frac.tolist(),
            "beta0_hat": beta, "r_squared": r2, "n_samples": int(n_samples)}


def crossing_curve(system: SkewSystem, M: int, element: int | None = None, sign: float = 1.0):
    """Depth-1 admissible curve ``Y`` with ``f_M(theta_mid, Y(theta_mid)) = 0``.

    The seed level ``y0`` is found by root bracketing, so that the curve
    crosses the critical set at the middle of its domain.
    """
    from scipy.optimize import brentq

    from .curves import evolve_horizontal
    from .expanding import markov_partition

    model = system.base
    p1 = markov_partition(model, 1, "P")
    if element is None:
        element = int(np.argmin(np.abs(p1.breakpoints))) if sign > 0 else 0
    R = system.R

    def g(y0):
        Y = evolve_horizontal(system, y0, 1, [[element]])[0]
        mid = 0.5 * (Y.domain[0] + Y.domain[1])
        return float(_f_M(system, np.array([mid]), Y(np.array([mid])), M)[0])

    ys = np.linspace(-R, R, 401)
    vals = np.array([g(y) for y in ys])
    idx = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))
    if len(idx) == 0:
        raise ValueError("no seed level produces a crossing")
    i = idx[-1] if sign > 0 else idx[0]
    y0 = brentq(g, ys[i], ys[i + 1], xtol=1e-15)
    return evolve_horizontal(system, y0, 1, [[element]])[0]


def vertical_exponent_vs_bound(system: SkewSystem, lyap, constants) -> dict:
    """Compare fiber exponents with the bounds built from ``sigma`` and ``eta``.

    Checks ``min Lambda_y >= (eta/2) log sigma``, the inverse-norm average
    ``(1/n) sum log|DF^-1| <= -(eta/3) log sigma`` and, per orbit,
    ``(1/n) sum log|DF^-1| <= C alpha - Lambda_y`` with
    ``C = sup|phi'| / lambda_g``.
    """
    model = system.base
    lo, hi = model.I_a
    th = np.linspace(lo, hi, 20001)[1:-1]
    C = float(np.max(np.abs(system.dphi(th)))) / model.lambda_g
    sig = constants.sigma
    eta = constants.eta
    lam_min = float(np.min(lyap.lambda_y))
    bound = 0.5 * eta * math.log(sig)
    inv = np.asarray(lyap.dfinv)
    upper = C * system.alpha - np.asarray(lyap.lambda_y)
    return {
        "lambda_y_min": lam_min,
        "lower_bound": bound,
        "lambda_y_ok": bool(lam_min >= bound),
        "dfinv_mean": float(np.mean(inv)),
        "dfinv_max": float(np.max(inv)),
        "dfinv_bound": -eta * math.log(sig) / 3.0,
        "dfinv_ok": bool(np.max(inv) <= -eta * math.log(sig) / 3.0),
        "C": C,
        "per_orbit_ok": bool(np.all(inv <= upper + 1e-12)),
        "per_orbit_margin": float(np.min(upper - inv)),
    }
