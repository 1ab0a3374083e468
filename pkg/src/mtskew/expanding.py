"""Expanding coordinate for an MT quadratic map and its Markov structure.

The metric ``rho(x) = prod_v |x - v|**-0.5`` over the post-critical set has
an inverse square-root singularity at every post-critical point. Its
primitive ``u(x) = int_0^x rho`` conjugates ``Q_a`` to an interval map
``h0 = u o Q_a o u^{-1}`` that is uniformly expanding.

Numerics
--------
Points are carried in *charts* that resolve the singularities. The domain
``[a - a**2, a]`` is cut at the post-critical points into cells, and each
cell is split at its midpoint into two half-cells. A half-cell anchored at
``v`` with direction ``d`` (+1 for the half to the right of ``v``, -1 for
the half to its left) uses the coordinate ``s >= 0`` with

    x = v + d * s**2,        theta = u(v) + d * Phi(s),

where ``Phi(s) = int_0^s 2 g_v(v + d t**2) dt`` and ``g_v`` is ``rho``
without the factor for ``v``. ``Phi`` is smooth in ``s``, so both it and
its inverse are stored as piecewise Chebyshev fits. The map ``Q_a`` is
stepped in chart form using exact identities for the displacement from
the image anchor, which avoids the cancellation that would otherwise snap
orbits onto the post-critical set.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import _cheb
from .errors import (
    DepthExceeded,
    EvaluationAtSingularity,
    NotABranch,
    NotExpanding,
    OutOfDomain,
)
from .mt_params import MTCertificate, PostCriticalSet, postcritical_set

__all__ = [
    "MetricModel",
    "ExpandingModel",
    "MarkovPartition",
    "InverseBranch",
    "DistortionReport",
    "build_metric",
    "build_model",
    "u_of_x",
    "x_of_theta",
    "h0",
    "h",
    "estimate_lambda_a",
    "markov_partition",
    "inverse_branch",
    "central_branches",
    "p1_branches",
    "distortion_report",
]

DEPTH_CAP = 40
MAX_BREAKPOINTS = 1 << 22
MERGE_TOL = 1e-12
MARKOV_TOL = 1e-9


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricModel:
    """Product metric with square-root singularities at the post-critical set."""

    pc: PostCriticalSet

    @property
    def points(self) -> np.ndarray:
        return self.pc.as_array()

    def log_rho(self, x):
        x = np.asarray(x, dtype=float)
        dist = np.abs(x[..., None] - self.points)
        if np.any(dist == 0.0):
            raise EvaluationAtSingularity("rho is infinite at a post-critical point")
        return -0.5 * np.sum(np.log(dist), axis=-1)

    def rho(self, x):
        """Density ``prod_v |x - v|**-0.5``."""
        return np.exp(self.log_rho(x))


def build_metric(pc: PostCriticalSet) -> MetricModel:
    if len(pc) == 0:
        raise ValueError("post-critical set is empty")
    return MetricModel(pc)


# ---------------------------------------------------------------------------
# chart atlas
# ---------------------------------------------------------------------------

class Atlas:
    """Singularity-resolving charts for ``u`` and chart-level ``Q_a`` steps.

    Half-cell ``2i`` is anchored at ``pc[i]`` with ``d = +1``; half-cell
    ``2i + 1`` is anchored at ``pc[i + 1]`` with ``d = -1``.
    """

    def __init__(self, a: float, pc: np.ndarray, tol: float = 1e-13):
        self.a = float(a)
        self.pc = np.asarray(pc, dtype=float)
        K = len(self.pc)
        if K < 2:
            raise ValueError("need at least two post-critical points")
        self.K = K
        self.n_half = 2 * (K - 1)
        mids = 0.5 * (self.pc[:-1] + self.pc[1:])
        self.xbreaks = np.empty(2 * K - 1)
        self.xbreaks[0::2] = self.pc
        self.xbreaks[1::2] = mids
        hc = np.arange(self.n_half)
        self.anchor = np.where(hc % 2 == 0, hc // 2, hc // 2 + 1).astype(np.int64)
        self.direction = np.where(hc % 2 == 0, 1.0, -1.0)
        half = 0.5 * np.diff(self.pc)
        self.smax = np.sqrt(np.repeat(half, 2))
        img = self.a - self.pc * self.pc
        self.pc_next = np.array(
            [int(np.argmin(np.abs(self.pc - y))) for y in img], dtype=np.int64
        )
        self.top = K - 1
        if abs(self.pc[self.top] - self.a) > 1e-12:
            raise ValueError("largest post-critical point must equal a")

        # reference values at the half-cell ends, then theta of anchors
        self.phimax = np.array(
            [self.phi_ref(np.array([j]), np.array([self.smax[j]]))[0] for j in hc]
        )
        A = np.zeros(K)
        for i in range(K - 1):
            A[i + 1] = A[i] + self.phimax[2 * i] + self.phimax[2 * i + 1]
        # u(0) = 0 fixes the additive constant
        self._A = A
        A0 = self._A_of_x_ref(0.0)
        self.theta_anchor = A - A0
        self.tbreaks = np.empty(2 * K - 1)
        self.tbreaks[0::2] = self.theta_anchor
        self.tbreaks[1::2] = self.theta_anchor[:-1] + self.phimax[0::2]

        fits_phi, fits_psi = [], []
        for j in hc:
            jj = int(j)
            fits_phi.append(_cheb.fit_piecewise(
                lambda s, jj=jj: self.phi_ref(np.full(s.shape, jj), s),
                0.0, self.smax[jj], tol=tol))
            fits_psi.append(_cheb.fit_piecewise(
                lambda t, jj=jj: self.psi_ref(np.full(t.shape, jj), t),
                0.0, self.phimax[jj], tol=tol))
        self._phi = _cheb.PiecewiseTable(fits_phi, self.smax)
        self._psi = _cheb.PiecewiseTable(fits_psi, self.phimax)

    # -- reference quadrature ----------------------------------------------
    def log_g(self, hc, x):
        """log of ``rho`` with the anchor factor of half-cell ``hc`` removed."""
        out = np.zeros(np.shape(x))
        anc = self.anchor[hc]
        for j in range(self.K):
            m = anc != j
            out = out - np.where(m, 0.5 * np.log(np.abs(x - self.pc[j]) + (~m)), 0.0)
        return out

    def dphi(self, hc, s):
        """Exact derivative ``Phi'(s) = 2 g(v + d s**2)``."""
        x = self.pc[self.anchor[hc]] + self.direction[hc] * s * s
        return 2.0 * np.exp(self.log_g(hc, x))

    def phi_ref(self, hc, s):
        """``Phi`` by 64-node Gauss-Legendre in the chart variable."""
        hc = np.asarray(hc)
        s = np.asarray(s, dtype=float)
        t, w = _cheb.gauss_legendre_64()
        sig = 0.5 * s[..., None] * (1.0 + t)
        vals = self.dphi(hc[..., None], sig)
        return 0.5 * s * np.sum(w * vals, axis=-1)

    def psi_ref(self, hc, delta):
        """Inverse of ``phi_ref`` by safeguarded Newton iteration."""
        hc = np.asarray(hc)
        delta = np.asarray(delta, dtype=float)
        lo = np.zeros_like(delta)
        hi = self.smax[hc] * np.ones_like(delta)
        s = hi * delta / self.phimax[hc]
        for _ in range(60):
            f = self.phi_ref(hc, s) - delta
            lo = np.where(f < 0, s, lo)
            hi = np.where(f >= 0, s, hi)
            sn = s - f / self.dphi(hc, s)
            bad = (sn <= lo) | (sn >= hi) | ~np.isfinite(sn)
            sn = np.where(bad, 0.5 * (lo + hi), sn)
            if np.all(np.abs(sn - s) <= 1e-16 * (1.0 + np.abs(s))):
                s = sn
                break
            s = sn
        return s

    def _A_of_x_ref(self, x):
        hc, s = self.x_to_chart(np.array([x]))
        j = self.anchor[hc]
        return float(self._A[j][0] + self.direction[hc][0] * self.phi_ref(hc, s)[0])

    # -- surrogates ------------------------------------------------------------
    def phi(self, hc, s):
        return self._phi(hc, s)

    def psi(self, hc, delta):
        s = self._psi(hc, delta)
        s = np.clip(s, 0.0, self.smax[hc])
        # one Newton polish with the exact derivative
        f = self._phi(hc, s) - delta
        d = self.dphi(hc, s)
        s = np.where(d > 0, s - f / d, s)
        return np.clip(s, 0.0, self.smax[hc])

    # -- conversions -----------------------------------------------------------
    def locate_x(self, x):
        hc = np.searchsorted(self.xbreaks, x, side="right") - 1
        return np.clip(hc, 0, self.n_half - 1)

    def x_to_chart(self, x):
        x = np.asarray(x, dtype=float)
        hc = self.locate_x(x)
        v = self.pc[self.anchor[hc]]
        s = np.sqrt(np.maximum(self.direction[hc] * (x - v), 0.0))
        return hc, s

    def chart_to_x(self, hc, s):
        return self.pc[self.anchor[hc]] + self.direction[hc] * s * s

    def chart_to_theta(self, hc, s, exact: bool = False):
        ph = self.phi_ref(hc, s) if exact else self.phi(hc, s)
        return self.theta_anchor[self.anchor[hc]] + self.direction[hc] * ph

    def theta_to_chart(self, theta):
        theta = np.asarray(theta, dtype=float)
        hc = np.clip(np.searchsorted(self.tbreaks, theta, side="right") - 1,
                     0, self.n_half - 1)
        delta = self.direction[hc] * (theta - self.theta_anchor[self.anchor[hc]])
        delta = np.clip(delta, 0.0, self.phimax[hc])
        return hc, self.psi(hc, delta)

    # -- dynamics --------------------------------------------------------------
    def log_rho(self, hc, s):
        """``log rho`` at a chart point, exact near the anchor."""
        x = self.chart_to_x(hc, s)
        with np.errstate(divide="ignore"):
            return -np.log(s) + self.log_g(hc, x)

    def _side(self, j, delta):
        # half-cell adjacent to post-critical point j on the side of delta
        hc = np.where(delta >= 0, 2 * j, 2 * j - 1)
        return np.clip(hc, 0, self.n_half - 1)

    def step(self, hc, s):
        """One application of ``Q_a`` in chart form. Returns ``(hc', s')``."""
        hc = np.asarray(hc)
        s = np.asarray(s, dtype=float)
        j = self.anchor[hc]
        v = self.pc[j]
        d = self.direction[hc]
        s2 = s * s
        x = v + d * s2
        y = self.a - x * x
        h2 = self.locate_x(y)
        j2 = self.anchor[h2]
        delta = y - self.pc[j2]
        top = j2 == self.top
        nxt = (~top) & (j2 == self.pc_next[j])
        delta = np.where(top, -x * x, delta)
        delta = np.where(nxt, -d * s2 * (2.0 * v + d * s2), delta)
        exact = top | nxt
        h2 = np.where(exact, self._side(j2, delta), h2)
        s_new = np.sqrt(np.maximum(self.direction[h2] * delta, 0.0))
        return h2, s_new

    def log_dh0(self, hc, s, hc2=None, s2=None):
        """``log|h0'|`` at a chart point (its image may be supplied)."""
        if hc2 is None:
            hc2, s2 = self.step(hc, s)
        x = self.chart_to_x(hc, s)
        with np.errstate(divide="ignore"):
            return self.log_rho(hc2, s2) + np.log(2.0 * np.abs(x)) - self.log_rho(hc, s)

    def preimage(self, hc2, s2, sign):
        """Chart of the preimage ``x = sign * sqrt(a - y)`` of a chart point.

        Returns ``(hc, s, valid)``; ``valid`` is False where the preimage
        leaves the domain.
        """
        hc2 = np.asarray(hc2)
        s2 = np.asarray(s2, dtype=float)
        sign = np.broadcast_to(np.asarray(sign, dtype=float), s2.shape)
        j2 = self.anchor[hc2]
        d2 = self.direction[hc2]
        v2 = self.pc[j2]
        top = j2 == self.top
        rad = np.where(top, s2 * s2, (self.a - v2) - d2 * s2 * s2)
        xabs = np.where(top, s2, np.sqrt(np.maximum(rad, 0.0)))
        x = sign * xabs
        valid = (x >= self.pc[0] - 1e-15) & (rad >= -1e-15)
        x = np.clip(x, self.pc[0], self.a)
        hc = self.locate_x(x)
        j = self.anchor[hc]
        w = self.pc[j]
        use = (~top) & (self.pc_next[j] == j2)
        # y - v2 = -e(2w + e) with x = w + e; take the small root stably
        dlt = d2 * s2 * s2
        disc = np.sqrt(np.maximum(w * w - dlt, 0.0))
        den = w + np.sign(w) * disc
        with np.errstate(divide="ignore", invalid="ignore"):
            e = np.where(den != 0, -dlt / den, 0.0)
        hc_p = self._side(j, e)
        s_p = np.sqrt(np.abs(e))
        s_plain = np.sqrt(np.maximum(self.direction[hc] * (x - w), 0.0))
        hc = np.where(use, hc_p, hc)
        s = np.where(use, s_p, s_plain)
        return hc, s, valid


# ---------------------------------------------------------------------------
# expanding model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ExpandingModel:
    """Conjugated expanding map ``h0`` with its constants and partitions.

    Build with :func:`build_model`. Fields are treated as read-only;
    partitions are computed lazily and cached.
    """

    cert: MTCertificate
    metric: MetricModel
    atlas: Atlas
    m1: int
    lambda_a: float
    lambda_mode: str
    m0: int
    I_a: tuple
    _partitions: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def a(self) -> float:
        return self.cert.c

    @property
    def tilde_lambda_a(self) -> float:
        return 0.5 * (self.lambda_a + 4.0 ** (1.0 / self.m0))

    @property
    def lambda_g(self) -> float:
        return self.lambda_a ** self.m1

    @property
    def length(self) -> float:
        return self.I_a[1] - self.I_a[0]

    # h0 / h on theta arrays ---------------------------------------------------
    def h0(self, theta):
        hc, s = self.atlas.theta_to_chart(theta)
        return self.atlas.chart_to_theta(*self.atlas.step(hc, s))

    def h(self, theta, n: int = 1):
        hc, s = self.atlas.theta_to_chart(theta)
        for _ in range(self.m1 * n):
            hc, s = self.atlas.step(hc, s)
        return self.atlas.chart_to_theta(hc, s)

    def log_dh(self, theta, n_base: int | None = None):
        """``log|(h0^k)'|`` with ``k = n_base`` (default ``m1``)."""
        k = self.m1 if n_base is None else n_base
        hc, s = self.atlas.theta_to_chart(theta)
        out = np.zeros(np.shape(hc))
        for _ in range(k):
            hc2, s2 = self.atlas.step(hc, s)
            out = out + self.atlas.log_dh0(hc, s, hc2, s2)
            hc, s = hc2, s2
        return out

    def transition_matrix(self) -> np.ndarray:
        """Boolean ``A[i, j]``: ``h0`` maps part of Q0 element i onto element j."""
        q0 = markov_partition(self, 0)
        q1 = markov_partition(self, 1)
        n0 = q0.n_elements
        A = np.zeros((n0, n0), dtype=bool)
        b = q0.breakpoints
        hc, s = q1.charts
        ih, is_ = self.atlas.step(hc, s)
        img = self.atlas.chart_to_theta(ih, is_)
        for k in range(q1.n_elements):
            mid = 0.5 * (q1.breakpoints[k] + q1.breakpoints[k + 1])
            parent = int(np.searchsorted(b, mid) - 1)
            im = 0.5 * (img[k] + img[k + 1])
            child = int(np.clip(np.searchsorted(b, im) - 1, 0, n0 - 1))
            A[parent, child] = True
        return A

    def summary(self) -> dict:
        counts = [markov_partition(self, n).n_elements
                  for n in sorted(self._partitions)]
        return {
            "a": self.a,
            "m1": self.m1,
            "lambda_a": self.lambda_a,
            "m0": self.m0,
            "lambda_g": self.lambda_g,
            "I_a": [self.I_a[0], self.I_a[1]],
            "partition_counts": counts,
        }


def _domain_check(model, x):
    a = model.a
    lo = a - a * a
    x = np.asarray(x, dtype=float)
    if np.any((x < lo - 1e-14) | (x > a + 1e-14)) or np.any(~np.isfinite(x)):
        raise OutOfDomain(f"x outside [{lo}, {a}]")
    return np.clip(x, lo, a)


def u_of_x(model: ExpandingModel, x, exact: bool = False):
    """Expanding coordinate ``u(x) = int_0^x rho``.

    ``exact=True`` uses the Gauss-Legendre reference instead of the
    Chebyshev surrogate.
    """
    x = _domain_check(model, x)
    hc, s = model.atlas.x_to_chart(x)
    return model.atlas.chart_to_theta(hc, s, exact=exact)


def x_of_theta(model: ExpandingModel, theta):
    """Inverse of :func:`u_of_x`."""
    theta = np.asarray(theta, dtype=float)
    lo, hi = model.I_a
    if np.any((theta < lo - 1e-13) | (theta > hi + 1e-13)) or np.any(~np.isfinite(theta)):
        raise OutOfDomain(f"theta outside [{lo}, {hi}]")
    hc, s = model.atlas.theta_to_chart(np.clip(theta, lo, hi))
    return model.atlas.chart_to_x(hc, s)


def h0(model: ExpandingModel, theta):
    return model.h0(theta)


def h(model: ExpandingModel, theta):
    return model.h(theta)


def _min_log_ratio(atlas: Atlas, xs, n: int):
    hc, s = atlas.x_to_chart(xs)
    tot = np.zeros(len(xs))
    for _ in range(n):
        hc2, s2 = atlas.step(hc, s)
        tot += atlas.log_dh0(hc, s, hc2, s2)
        hc, s = hc2, s2
    return tot / n


def estimate_lambda_a(model_or_atlas, grid_size: int = 20001):
    """Infimum of ``rho(Q x)|Q'(x)| / rho(x)`` over a grid, refined locally.

    Returns ``(lambda_a, mode)`` where mode is ``"one-step"`` or
    ``"n-step:<n>"`` when the geometric-mean fallback was needed.

    Raises
    ------
    NotExpanding
        No mode gives an expansion constant above 1.
    """
    atlas = model_or_atlas.atlas if hasattr(model_or_atlas, "atlas") else model_or_atlas
    if grid_size < 1000:
        raise ValueError("grid_size must be at least 1000")
    lo, hi = atlas.pc[0], atlas.a
    xs = np.linspace(lo, hi, grid_size)
    xs = xs[np.min(np.abs(xs[:, None] - atlas.pc[None, :]), axis=1) > 0]
    # one-sided limits at the post-critical points, where the infimum may sit
    eps = 1e-12 * (hi - lo)
    near = np.concatenate([atlas.pc - eps, atlas.pc + eps])
    xs = np.unique(np.concatenate([xs, near[(near > lo) & (near < hi)]]))
    best, mode = -np.inf, None
    for n in range(1, 9):
        vals = _min_log_ratio(atlas, xs, n)
        vals = np.where(np.isfinite(vals), vals, np.inf)
        i = int(np.argmin(vals))
        lam = vals[i]
        # refine the minimum between the neighbouring grid points
        a_, b_ = xs[max(i - 1, 0)], xs[min(i + 1, len(xs) - 1)]
        if b_ > a_:
            r = minimize_scalar(
                lambda t: float(_min_log_ratio(atlas, np.array([t]), n)[0]),
                bounds=(a_, b_), method="bounded", options={"xatol": 1e-13})
            if np.isfinite(r.fun):
                lam = min(lam, r.fun)
        if lam > best:
            best, mode = lam, ("one-step" if n == 1 else f"n-step:{n}")
        if n == 1 and lam > 0:
            break
    if best <= 0:
        raise NotExpanding("no n-step mean (n <= 8) exceeds 1 for the product metric")
    return float(np.exp(best)), mode


def _m0_from_lambda(lam: float) -> int:
    # smallest m with lam**m > 4; the margin keeps lam = 2 from reading 2**2 > 4
    ll = np.log(lam)
    m = 1
    while m * ll <= np.log(4.0) + 1e-9:
        m += 1
    return m


def build_model(cert: MTCertificate, m1: int | None = None,
                grid_size: int = 20001) -> ExpandingModel:
    """Build the expanding model for a certified parameter ``a``.

    Parameters
    ----------
    cert : MTCertificate
    m1 : int, optional
        Iterate used for ``h = h0**m1``. Defaults to ``m0`` and may only be
        raised above it.
    grid_size : int
        Grid for the expansion constant.
    """
    pc = postcritical_set(cert)
    metric = build_metric(pc)
    atlas = Atlas(cert.c, pc.as_array())
    lam, mode = estimate_lambda_a(atlas, grid_size)
    m0 = _m0_from_lambda(lam)
    if m1 is None:
        m1 = m0
    if int(m1) < m0:
        raise ValueError(f"m1={m1} must be at least m0={m0}")
    I_a = (float(atlas.theta_anchor[0]), float(atlas.theta_anchor[-1]))
    return ExpandingModel(cert, metric, atlas, int(m1), lam, mode, m0, I_a)


# ---------------------------------------------------------------------------
# Markov partitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarkovPartition:
    """Level-n partition ``Q_n`` of ``I_a`` (breakpoints in theta)."""

    level: int
    breakpoints: np.ndarray
    charts: tuple
    nested: bool
    markov: bool

    @property
    def elements(self) -> np.ndarray:
        b = self.breakpoints
        return np.column_stack([b[:-1], b[1:]])

    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    def locate(self, theta):
        """Index of the element containing each theta (right-closed at the end)."""
        idx = np.searchsorted(self.breakpoints, theta, side="right") - 1
        return np.clip(idx, 0, self.n_elements - 1)

    def element(self, i: int):
        return float(self.breakpoints[i]), float(self.breakpoints[i + 1])


def _merge(theta, hc, s):
    order = np.argsort(theta, kind="stable")
    theta, hc, s = theta[order], hc[order], s[order]
    keep = np.ones(len(theta), dtype=bool)
    keep[1:] = np.diff(theta) > MERGE_TOL
    return theta[keep], hc[keep], s[keep]


def _check_markov(model, fine: MarkovPartition, coarse_b: np.ndarray) -> bool:
    atlas = model.atlas
    ih, is_ = atlas.step(*fine.charts)
    img = atlas.chart_to_theta(ih, is_)
    pos = np.searchsorted(coarse_b, img)
    pos = np.clip(pos, 1, len(coarse_b) - 1)
    left = coarse_b[pos - 1]
    right = coarse_b[pos]
    near = np.where(np.abs(img - left) < np.abs(img - right), pos - 1, pos)
    if np.any(np.abs(coarse_b[near] - img) > MARKOV_TOL):
        return False
    return bool(np.all(np.abs(np.diff(near)) == 1))


def markov_partition(model: ExpandingModel, n: int, kind: str = "Q") -> MarkovPartition:
    """Nested Markov partition of level ``n``.

    ``kind="Q"`` gives ``Q_n`` for ``h0``; ``kind="P"`` gives
    ``P_n = Q_{m1 n}`` for ``h``. Breakpoints are the pullbacks of
    ``u(PC)`` through the monotone branches of ``h0``; each level is
    checked for nesting and the Markov property.

    Raises
    ------
    DepthExceeded
        More than 40 base steps, or too many breakpoints to hold.
    """
    base = n * model.m1 if kind == "P" else n
    if kind not in ("P", "Q"):
        raise ValueError("kind must be 'P' or 'Q'")
    if n < 0:
        raise ValueError("level must be nonnegative")
    if base > DEPTH_CAP:
        raise DepthExceeded(f"{base} base steps exceed the cap of {DEPTH_CAP}")
    cache = model._partitions
    if base in cache:
        return cache[base]
    atlas = model.atlas
    if 0 not in cache:
        j = np.arange(atlas.K)
        hc0 = np.where(j == 0, 0, 2 * j - 1)
        s0 = np.zeros(atlas.K)
        th0 = atlas.theta_anchor.copy()
        cache[0] = MarkovPartition(0, th0, (hc0, s0), True, True)
    start = max(k for k in cache if k <= base)
    for lev in range(start + 1, base + 1):
        prev = cache[lev - 1]
        if 2 * len(prev.breakpoints) > MAX_BREAKPOINTS:
            raise DepthExceeded(f"level {lev} would exceed {MAX_BREAKPOINTS} breakpoints")
        hs, ss = [cache[0].charts[0]], [cache[0].charts[1]]
        for sign in (-1.0, 1.0):
            hc, s, ok = atlas.preimage(prev.charts[0], prev.charts[1], sign)
            hs.append(hc[ok])
            ss.append(s[ok])
        hc = np.concatenate(hs)
        s = np.concatenate(ss)
        th = atlas.chart_to_theta(hc, s)
        th, hc, s = _merge(th, hc, s)
        nested = bool(np.all(np.min(np.abs(prev.breakpoints[:, None] - th[None, :]), axis=1)
                             <= MERGE_TOL)) if len(th) < 20000 else _nested_sorted(prev.breakpoints, th)
        part = MarkovPartition(lev, th, (hc, s), nested, True)
        markov = _check_markov(model, part, prev.breakpoints)
        part = MarkovPartition(lev, th, (hc, s), nested, markov)
        cache[lev] = part
    return cache[base]


def _nested_sorted(coarse, fine):
    pos = np.clip(np.searchsorted(fine, coarse), 1, len(fine) - 1)
    d = np.minimum(np.abs(fine[pos] - coarse), np.abs(fine[pos - 1] - coarse))
    return bool(np.all(d <= MERGE_TOL))


# ---------------------------------------------------------------------------
# inverse branches
# ---------------------------------------------------------------------------

class InverseBranch:
    """Inverse ``tau_n = (h^n restricted to w_n)^{-1}`` from ``w0`` to ``w_n``.

    The branch is encoded by the sign of ``x`` along the forward orbit of
    the midpoint of ``w_n``; evaluation chains the chart preimages. The
    derivative follows from the chain rule, ``tau' = prod 1/h0'``.
    """

    def __init__(self, model: ExpandingModel, omega0, omega_n, depth: int,
                 base_steps: int | None = None):
        self.model = model
        self.omega0 = (float(omega0[0]), float(omega0[1]))
        self.omega_n = (float(omega_n[0]), float(omega_n[1]))
        self.depth = int(depth)
        self.n_base = model.m1 * self.depth if base_steps is None else int(base_steps)
        atlas = model.atlas
        mid = 0.5 * (self.omega_n[0] + self.omega_n[1])
        hc, s = atlas.theta_to_chart(np.array([mid]))
        signs = []
        for _ in range(self.n_base):
            x = atlas.chart_to_x(hc, s)[0]
            signs.append(1.0 if x >= 0 else -1.0)
            hc, s = atlas.step(hc, s)
        self.signs = tuple(signs)
        end = atlas.chart_to_theta(hc, s)[0]
        lo, hi = self.omega0
        if not (lo < end < hi):
            raise NotABranch("h^n of the branch element does not land in omega0")
        img = np.sort(self.evaluate(np.array([lo, hi])))
        if abs(img[0] - self.omega_n[0]) > MARKOV_TOL or abs(img[1] - self.omega_n[1]) > MARKOV_TOL:
            raise NotABranch("branch element is not mapped onto omega0")
        self.orientation = float(np.prod([-sg for sg in self.signs])) if self.signs else 1.0

    def pull_chart(self, hc, s):
        """Apply the branch to chart points; returns ``(hc, s, log|tau'|)``."""
        atlas = self.model.atlas
        logd = np.zeros(np.shape(hc))
        for sg in reversed(self.signs):
            ph, ps, _ = atlas.preimage(hc, s, sg)
            logd = logd - atlas.log_dh0(ph, ps, hc, s)
            hc, s = ph, ps
        return hc, s, logd

    def evaluate_chart(self, theta):
        """Chart of ``tau(theta)`` and ``log|tau'(theta)|``."""
        atlas = self.model.atlas
        theta = np.clip(np.asarray(theta, dtype=float), *self.omega0)
        hc, s = atlas.theta_to_chart(theta)
        return self.pull_chart(hc, s)

    def evaluate(self, theta):
        hc, s, _ = self.evaluate_chart(theta)
        return self.model.atlas.chart_to_theta(hc, s)

    __call__ = evaluate

    def x(self, theta):
        hc, s, _ = self.evaluate_chart(theta)
        return self.model.atlas.chart_to_x(hc, s)

    def derivative(self, theta):
        _, _, logd = self.evaluate_chart(theta)
        return self.orientation * np.exp(logd)

    def check(self, n_grid: int = 100):
        """Round-trip error and the ratio ``max|tau'| / lambda_g**-n`` on a grid."""
        lo, hi = self.omega0
        th = lo + (hi - lo) * (np.arange(n_grid) + 0.5) / n_grid
        t = self.evaluate(th)
        atlas = self.model.atlas
        hc, s = atlas.theta_to_chart(t)
        for _ in range(self.n_base):
            hc, s = atlas.step(hc, s)
        back = atlas.chart_to_theta(hc, s)
        lam = self.model.lambda_a ** self.n_base
        return float(np.max(np.abs(back - th))), float(np.max(np.abs(self.derivative(th))) * lam)


def inverse_branch(model: ExpandingModel, omega0, omega_n, depth: int) -> InverseBranch:
    return InverseBranch(model, omega0, omega_n, depth)


def p1_branches(model: ExpandingModel):
    """Inverse branches of ``h`` onto every element of P1, in element order."""
    if "p1" not in model._cache:
        p0 = markov_partition(model, 0, "P")
        p1 = markov_partition(model, 1, "P")
        mids = 0.5 * (p1.breakpoints[:-1] + p1.breakpoints[1:])
        imgs = model.h(mids)
        out = []
        for k in range(p1.n_elements):
            w0 = p0.element(int(p0.locate(imgs[k])))
            out.append(InverseBranch(model, w0, p1.element(k), 1))
        model._cache["p1"] = out
    return model._cache["p1"]


def central_branches(model: ExpandingModel):
    """Inverse branches of ``h`` onto the two P1 elements adjacent to 0.

    Returns ``(tau_plus, tau_minus)``; ``tau_plus`` lands to the right of 0.
    """
    p0 = markov_partition(model, 0, "P")
    p1 = markov_partition(model, 1, "P")
    b = p1.breakpoints
    i0 = int(np.argmin(np.abs(b)))
    if abs(b[i0]) > 1e-12:
        raise NotABranch("0 is not a breakpoint of P1")
    out = []
    for el in ((b[i0], b[i0 + 1]), (b[i0 - 1], b[i0])):
        mid = 0.5 * (el[0] + el[1])
        img = model.h(np.array([mid]))[0]
        w0 = p0.element(int(p0.locate(img)))
        out.append(InverseBranch(model, w0, el, 1))
    return tuple(out)


# ---------------------------------------------------------------------------
# distortion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DistortionReport:
    """Empirical constant for ``C^-1 |h0^n E|^2 <= |E|/|w_n| <= C |h0^n E|``."""

    level: int
    C_d: float
    worst_left: float
    worst_right: float
    n_samples: int

    def satisfied(self, C=None) -> bool:
        C = self.C_d if C is None else C
        return self.worst_left <= C * (1 + 1e-12) and self.worst_right <= C * (1 + 1e-12)


def distortion_report(model: ExpandingModel, n: int, samples: int = 1000,
                      rng: np.random.Generator | None = None) -> DistortionReport:
    """Sample subintervals ``E`` of elements of ``Q_n`` and measure distortion.

    ``worst_left`` is the largest ``|h0^n E|**2 / (|E|/|w_n|)`` and
    ``worst_right`` the largest ``(|E|/|w_n|) / |h0^n E|``; ``C_d`` is
    the larger of the two.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    q = markov_partition(model, n)
    atlas = model.atlas
    idx = rng.integers(0, q.n_elements, samples)
    lo, hi = q.breakpoints[idx], q.breakpoints[idx + 1]
    uu = np.sort(rng.random((samples, 2)), axis=1)
    # first sample uses the full element
    uu[0] = (0.0, 1.0)
    el = lo + (hi - lo) * uu[:, 0]
    er = lo + (hi - lo) * uu[:, 1]
    el[0], er[0] = lo[0], hi[0]
    ends = np.concatenate([el, er])
    hc, s = atlas.theta_to_chart(ends)
    for _ in range(n):
        hc, s = atlas.step(hc, s)
    img = atlas.chart_to_theta(hc, s)
    himg = np.abs(img[samples:] - img[:samples])
    ratio = (er - el) / (hi - lo)
    ok = (ratio > 0) & (himg > 0)
    left = np.max(himg[ok] ** 2 / ratio[ok])
    right = np.max(ratio[ok] / himg[ok])
    return DistortionReport(n, float(max(left, right)), float(left), float(right), int(ok.sum()))
