"""The skew product ``F(theta, y) = (h(theta), Q_b(y) + alpha * phi(theta))``.

The base is the expanding map ``h = h0**m1`` of an MT parameter ``a``;
the fiber is the quadratic map of a second MT parameter ``b``. The
coupling ``phi`` is a polynomial in the original coordinate ``x``,
rescaled so that ``|phi| <= 1``.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import polynomial as P

from . import _kernels
from .errors import (
    AlphaTooLarge,
    ConstantCoupling,
    EscapedRectangle,
    InconsistentConstants,
    InsufficientSegments,
)
from .expanding import ExpandingModel
from .mt_params import MTCertificate
from .rng import generator

__all__ = [
    "SkewSystem",
    "OrbitAccumulator",
    "LyapunovResult",
    "BEConstants",
    "SigmaFit",
    "build_system",
    "alpha_max",
    "iterate",
    "lyapunov_exponents",
    "compute_constants",
    "estimate_sigma",
    "fiber_jacobian",
]


def _invariant(b: float, alpha: float) -> bool:
    # extremes of Q_b on [-R, R] are b (at 0) and b - 2b = -b (at +-R)
    R = math.sqrt(2.0 * b)
    return (b + alpha <= R) and (-b - alpha >= -R)


def alpha_max(b: float) -> float:
    """Largest coupling strength keeping ``I_a x I_b`` invariant (bisection)."""
    if not _invariant(b, 0.0):
        return -1.0
    lo, hi = 0.0, 1.0
    if _invariant(b, hi):
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _invariant(b, mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True, eq=False)
class SkewSystem:
    """Skew product over an expanding base; see :func:`build_system`."""

    base: ExpandingModel
    fiber: MTCertificate
    alpha: float
    phi_poly: np.ndarray
    scale: float
    alpha_max: float

    @property
    def b(self) -> float:
        return self.fiber.c

    @property
    def R(self) -> float:
        return math.sqrt(2.0 * self.b)

    @property
    def I_b(self) -> tuple:
        return (-self.R, self.R)

    @property
    def phi_coeffs(self) -> np.ndarray:
        """Ascending coefficients of the normalized coupling in ``x``."""
        return self.phi_poly / self.scale

    @property
    def dphi_coeffs(self) -> np.ndarray:
        return P.polyder(self.phi_coeffs) if len(self.phi_coeffs) > 1 else np.zeros(1)

    def phi_x(self, x):
        return P.polyval(x, self.phi_coeffs)

    def dphi_x(self, x):
        return P.polyval(x, self.dphi_coeffs)

    def phi(self, theta):
        """Coupling in the expanding coordinate, ``phi_poly(u^{-1}(theta))/scale``."""
        at = self.base.atlas
        return self.phi_x(at.chart_to_x(*at.theta_to_chart(theta)))

    def dphi(self, theta):
        """``d phi / d theta = phi_poly'(x) / (scale * rho(x))``."""
        at = self.base.atlas
        hc, s = at.theta_to_chart(theta)
        x = at.chart_to_x(hc, s)
        return self.dphi_x(x) * np.exp(-at.log_rho(hc, s))

    def F(self, theta, y):
        """One step of the skew product on arrays (plain double precision)."""
        at = self.base.atlas
        hc, s = at.theta_to_chart(theta)
        x = at.chart_to_x(hc, s)
        for _ in range(self.base.m1):
            hc, s = at.step(hc, s)
        return at.chart_to_theta(hc, s), self.b - y * y + self.alpha * self.phi_x(x)

    def with_alpha(self, alpha: float) -> "SkewSystem":
        if alpha > self.alpha_max:
            raise AlphaTooLarge(f"alpha={alpha} exceeds alpha_max={self.alpha_max}")
        return replace(self, alpha=float(alpha))

    def kernel_args(self):
        at = self.base.atlas
        return (self.base.m1, at.a, at.pc, at.anchor, at.direction, at.pc_next,
                at.top, at.xbreaks, at.n_half, self.b, self.alpha,
                np.ascontiguousarray(self.phi_coeffs, dtype=float),
                np.ascontiguousarray(self.dphi_coeffs, dtype=float))


def _coupling_sup(poly: np.ndarray, lo: float, hi: float) -> float:
    grid = np.linspace(lo, hi, 10001)
    vals = np.abs(P.polyval(grid, poly))
    best = float(np.max(vals))
    if len(poly) > 2:
        for r in P.polyroots(P.polyder(poly)):
            if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                best = max(best, abs(P.polyval(r.real, poly)))
    return best


def build_system(model: ExpandingModel, fiber: MTCertificate, alpha: float,
                 phi_poly=(0.0, 1.0)) -> SkewSystem:
    """Assemble the skew product and check invariance of the rectangle.

    Parameters
    ----------
    model : ExpandingModel
        Base with parameter ``a`` and iterate ``m1``.
    fiber : MTCertificate
        Fiber parameter ``b`` in ``(1, 2]``.
    alpha : float
        Coupling strength, ``0 <= alpha <= alpha_max(b)``.
    phi_poly : sequence of float
        Ascending polynomial coefficients of the coupling in ``x``. The
        coupling is divided by its supremum on ``[a - a**2, a]`` (grid plus
        critical points), so ``phi_poly = x`` at ``a = 2`` gives
        ``phi(theta) = sin(theta)``.

    Raises
    ------
    ConstantCoupling
        ``phi_poly`` has no nonconstant term.
    AlphaTooLarge
        ``Q_b(+-sqrt(2b)) - alpha`` or ``b + alpha`` leaves ``I_b``.
    """
    poly = np.trim_zeros(np.asarray(phi_poly, dtype=float), "b")
    if len(poly) < 2:
        raise ConstantCoupling("coupling polynomial must be nonconstant")
    deg = len(poly) - 1
    if deg % 2 == 0:
        warnings.warn(f"coupling has even degree {deg}; the odd-degree hypothesis fails",
                      stacklevel=2)
    a = model.a
    scale = _coupling_sup(poly, a - a * a, a)
    if scale == 0.0:
        raise ConstantCoupling("coupling vanishes on the base interval")
    amax = alpha_max(fiber.c)
    alpha = float(alpha)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha > amax:
        raise AlphaTooLarge(
            f"alpha={alpha} breaks invariance of the rectangle; alpha_max={amax:.6g}")
    return SkewSystem(model, fiber, alpha, poly, scale, amax)


def fiber_jacobian(system: SkewSystem, theta, y, n: int):
    """``d f_n / d y`` as the product of ``Q_b'(y_i)``, plus the final point."""
    th = np.asarray(theta, dtype=float)
    yy = np.asarray(y, dtype=float)
    jac = np.ones_like(yy)
    for _ in range(n):
        jac = jac * (-2.0 * yy)
        th, yy = system.F(th, yy)
    return jac, th, yy


# ---------------------------------------------------------------------------
# orbits
# ---------------------------------------------------------------------------

@dataclass
class OrbitAccumulator:
    """State and Birkhoff sums of one orbit after ``n`` recorded steps."""

    theta: float
    y: float
    n: int
    sum_log_dh: float = 0.0
    sum_log_dq: float = 0.0
    sum_log_dfinv: float = 0.0
    n_events: int = 0
    recurrence_sum: float = 0.0
    events: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    checkpoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    chart: tuple = (0, 0.0)
    y_lo: float = 0.0

    @property
    def lambda_theta(self) -> float:
        return self.sum_log_dh / self.n if self.n else 0.0

    @property
    def lambda_y(self) -> float:
        return self.sum_log_dq / self.n if self.n else 0.0


def iterate(system: SkewSystem, theta0: float, y0: float, n: int, burn_in: int = 0,
            delta: float = 0.0, checkpoints=(), max_events: int = 100000,
            dump: np.ndarray | None = None, dfinv: bool = False) -> OrbitAccumulator:
    """Advance an orbit ``n`` steps after discarding ``burn_in`` steps.

    Accumulates ``sum log|h'(theta_i)|`` and ``sum log|2 y_i|`` for
    ``0 <= i < n``, and records the events ``|y_i| < delta``.

    Raises
    ------
    EscapedRectangle
        The fiber coordinate left ``I_b``.
    """
    at = system.base.atlas
    hc, s = at.theta_to_chart(np.array([theta0], dtype=float))
    cps = np.zeros((len(checkpoints), 2))
    cps[:, 0] = np.asarray(checkpoints, dtype=float)
    ev_i = np.zeros(max_events, dtype=np.int64)
    ev_v = np.zeros(max_events)
    dump = np.zeros(0) if dump is None else dump
    out = _kernels.orbit_kernel(
        int(hc[0]), float(s[0]), float(y0), 0.0, int(n), int(burn_in),
        *system.kernel_args(), float(delta), system.R * (1 + 1e-12), cps, ev_i, ev_v, dump, bool(dfinv))
    hc1, s1, yh, yl, sdh, sdq, sdf, nev, ssum, escaped, steps = out
    if escaped:
        raise EscapedRectangle(f"orbit left the invariant rectangle after {steps} steps")
    theta = float(at.chart_to_theta(np.array([hc1]), np.array([s1]))[0])
    k = min(nev, max_events)
    return OrbitAccumulator(theta, yh, int(n), sdh, sdq, sdf, int(nev), ssum,
                            np.column_stack([ev_i[:k], ev_v[:k]]), cps, (hc1, s1), yl)


def initial_conditions(system: SkewSystem, seed: int, indices) -> np.ndarray:
    """Uniform random ``(theta, y)`` on the rectangle, one stream per orbit."""
    lo, hi = system.base.I_a
    out = np.empty((len(indices), 2))
    for k, i in enumerate(indices):
        g = generator(seed, int(i), "orbit")
        u = g.random(2)
        out[k, 0] = lo + (hi - lo) * u[0]
        out[k, 1] = system.R * (2.0 * u[1] - 1.0)
    return out


@dataclass
class LyapunovResult:
    lambda_theta: np.ndarray
    lambda_y: np.ndarray
    dfinv: np.ndarray
    n: int
    seed: int
    orbit_ids: np.ndarray

    @property
    def stats(self) -> dict:
        ly = self.lambda_y
        return {
            "lambda_theta_mean": float(np.mean(self.lambda_theta)),
            "lambda_y_mean": float(np.mean(ly)),
            "lambda_y_std": float(np.std(ly)),
            "lambda_y_min": float(np.min(ly)),
            "lambda_y_rel_std": float(np.std(ly) / abs(np.mean(ly))) if np.mean(ly) else math.inf,
            "n_orbits": int(len(ly)),
            "n": int(self.n),
        }

    def rows(self):
        for k in range(len(self.lambda_y)):
            yield (int(self.orbit_ids[k]), float(self.lambda_theta[k]),
                   float(self.lambda_y[k]), int(self.n), int(self.seed))


def lyapunov_exponents(system: SkewSystem, n_orbits: int = 100, n: int = 10**6,
                       burn_in: int = 1000, seed: int = 0, workers: int = 1,
                       dfinv: bool = False) -> LyapunovResult:
    """Both Lyapunov exponents for an ensemble of random initial conditions.

    ``Lambda_theta = (1/n) sum log|h'(theta_i)|`` and
    ``Lambda_y = (1/n) sum log|2 y_i|``. Orbit ``i`` uses the stream
    ``(seed, i)``; results are reduced in orbit order.
    """
    ics = initial_conditions(system, seed, range(n_orbits))

    def run(k):
        acc = iterate(system, ics[k, 0], ics[k, 1], n, burn_in, dfinv=dfinv, max_events=1)
        return acc.lambda_theta, acc.lambda_y, acc.sum_log_dfinv / max(n, 1)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(run, range(n_orbits)))
    else:
        res = [run(k) for k in range(n_orbits)]
    arr = np.array(res).reshape(-1, 3)
    return LyapunovResult(arr[:, 0], arr[:, 1], arr[:, 2], int(n), int(seed),
                          np.arange(n_orbits))


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BEConstants:
    """Parameter constants derived from ``alpha`` and the fiber rate ``sigma``."""

    alpha: float
    sigma: float
    N_alpha: int
    M_alpha: int
    eta: float
    r0: float
    beta: float | None = None
    delta_star: float | None = None
    C_star: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def compute_constants(alpha: float, sigma: float, l0: int | None = None,
                      beta0: float | None = None, delta_star=None, C_star=None) -> BEConstants:
    """Evaluate ``N_alpha``, ``M_alpha``, ``eta`` and ``r0`` for given alpha, sigma.

    ``N_alpha`` is the smallest integer with ``alpha**-1 <= 4**N``. ``beta``
    is ``min(1/(2 l0), beta0)`` when both are supplied.

    Raises
    ------
    InconsistentConstants
        ``sigma**N_alpha > 1/alpha``.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    if not (1.0 < sigma < 2.0):
        raise ValueError("sigma must lie in (1, 2)")
    L = math.log(1.0 / alpha)
    N = math.ceil(L / math.log(4.0) - 1e-12)
    if N * math.log(sigma) > L + 1e-12:
        raise InconsistentConstants(
            f"sigma**N = {sigma ** N:.6g} exceeds 1/alpha = {1 / alpha:.6g} for N={N}")
    M = math.floor(L / math.log(32.0) + 1e-12)
    eta = math.log(sigma) / (8.0 * math.log(32.0))
    r0 = (0.5 - 2.0 * eta) * L
    beta = None
    if l0 is not None and beta0 is not None:
        beta = min(1.0 / (2 * l0), beta0)
    return BEConstants(alpha, sigma, N, M, eta, r0, beta, delta_star, C_star)


@dataclass(frozen=True)
class SigmaFit:
    sigma: float
    clamped: bool
    raw_sigma: float
    residual: float
    log_C: float
    C_star: float
    delta_star: float
    n_segments: int


def estimate_sigma(fiber: MTCertificate | float, alpha: float = 1e-3, trials: int = 200,
                   orbit_len: int = 20000, seed: int = 0, min_len: int = 10,
                   max_seg: int = 200) -> SigmaFit:
    """Fit the derivative growth of ``Q_b`` along segments avoiding ``|y| < sqrt(alpha)``.

    Each maximal segment (cut at length ``max_seg``) contributes the points
    ``(k, log|(Q_b^k)'|)``; a least-squares line gives ``log sigma`` as its
    slope. The fitted value is clamped into ``(1, 2)`` and the clamp is
    reported. ``C_star`` is the lower-envelope constant in
    ``|(Q_b^k)'| >= C_star sqrt(alpha) sigma**k`` and ``delta_star`` the
    smallest ``|y|`` met on accepted segments.

    Raises
    ------
    InsufficientSegments
        Fewer than two segments of length at least ``min_len``.
    """
    b = fiber.c if isinstance(fiber, MTCertificate) else float(fiber)
    r = math.sqrt(alpha) if alpha > 0 else 0.0
    R = math.sqrt(2 * b)
    ks, ls = [], []
    dmin = math.inf
    nseg = 0
    dump = np.zeros(orbit_len)
    for t in range(trials):
        g = generator(seed, t, "sigma")
        y0 = R * (2.0 * g.random() - 1.0)
        _kernels.fiber_orbit(y0, 0.0, b, orbit_len, dump)
        ys = dump[100:]  # transient
        far = np.abs(ys) >= r if r > 0 else np.abs(ys) > 0
        # split into maximal runs of far points
        edges = np.flatnonzero(np.diff(np.concatenate([[0], far.astype(np.int8), [0]])))
        for st, en in zip(edges[0::2], edges[1::2]):
            for s0 in range(st, en, max_seg):
                seg = ys[s0:min(en, s0 + max_seg)]
                if len(seg) < min_len:
                    continue
                nseg += 1
                cum = np.cumsum(np.log(2.0 * np.abs(seg)))
                ks.append(np.arange(1, len(seg) + 1))
                ls.append(cum)
                dmin = min(dmin, float(np.min(np.abs(seg))))
    if nseg < 2:
        raise InsufficientSegments(f"only {nseg} segments of length >= {min_len}")
    k = np.concatenate(ks).astype(float)
    lg = np.concatenate(ls)
    A = np.column_stack([np.ones_like(k), k])
    coef, *_ = np.linalg.lstsq(A, lg, rcond=None)
    logC, logs = coef
    resid = float(np.sqrt(np.mean((A @ coef - lg) ** 2)))
    raw = float(math.exp(logs))
    lo, hi = 1.0 + 1e-9, 2.0 - 1e-9
    sig = min(max(raw, lo), hi)
    sq = math.sqrt(alpha) if alpha > 0 else 1.0
    C_star = float(np.exp(np.min(lg - k * math.log(sig))) / sq)
    return SigmaFit(sig, sig != raw, raw, resid, float(logC), C_star, dmin, nseg)
