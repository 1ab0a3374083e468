"""Admissible curves, the family of T functions, and their checks.

An admissible curve is the image ``F^n`` of a horizontal segment ``Y = y0``
over an element of ``P_n``; it is a graph over an element of ``P_0``.
Curves are stored as Chebyshev series on their domain. Each push along
a branch also carries the matching function ``T`` of the linear
recursion ``T1 = (phi o tau)' + D * (T o tau) * tau'`` with
``D = Q_b'(X(tau theta0))``, so that ``X' - alpha T`` can be checked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.fft import dct

from ._cheb import chop
from .errors import (
    DepthExceeded,
    MissingProvenance,
    NoFiniteL0,
    NoSeparation,
    NotSubElement,
)
from .expanding import markov_partition, p1_branches

__all__ = [
    "AdmissibleCurve",
    "TFamilyElement",
    "NonFlatReport",
    "SeparationResult",
    "horizontal",
    "push_curve",
    "evolve_horizontal",
    "random_words",
    "t_family_eval",
    "random_t_family",
    "t_family_bounds",
    "check_linear_approx",
    "check_nonflat",
    "curve_recurrence",
    "separation_test",
]

DEFAULT_DEGREE = 64
MAX_DEGREE = 512
RESIDUAL_TOL = 1e-9
MAX_CURVES = 4096


def _nodes(n: int) -> np.ndarray:
    return np.cos(np.pi * (np.arange(n) + 0.5) / n)


def _coeffs_from_nodes(vals: np.ndarray) -> np.ndarray:
    n = len(vals)
    c = dct(vals, type=2) / n
    c[0] *= 0.5
    return c


def _to_unit(theta, dom):
    return (2.0 * np.asarray(theta, dtype=float) - (dom[0] + dom[1])) / (dom[1] - dom[0])


def _from_unit(t, dom):
    return 0.5 * (dom[0] + dom[1]) + 0.5 * (dom[1] - dom[0]) * t


def _eval(coeffs, dom, theta, i=0):
    c = coeffs
    if i:
        c = C.chebder(c, i) * (2.0 / (dom[1] - dom[0])) ** i
    return C.chebval(_to_unit(theta, dom), c)


@dataclass(frozen=True, eq=False)
class AdmissibleCurve:
    """Graph ``theta -> X(theta)`` over a P0 element with its provenance.

    Attributes
    ----------
    domain : tuple of float
    coeffs : ndarray
        Chebyshev coefficients on ``domain``.
    alpha : float
    y0 : float
        Level of the horizontal seed.
    start : int
        P0 index of the seed element.
    word : tuple of int
        P1 indices of the successive pushes; ``depth = len(word)``.
    T : ndarray or None
        Chebyshev coefficients of the matching T function.
    residual : float
        Largest relative off-node interpolation residual over the pushes.
    """

    domain: tuple
    coeffs: np.ndarray
    alpha: float
    y0: float
    start: int
    word: tuple = ()
    T: np.ndarray | None = None
    residual: float = 0.0
    theta0_mode: str = "midpoint"

    @property
    def depth(self) -> int:
        return len(self.word)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, theta, i: int = 0):
        return _eval(self.coeffs, self.domain, theta, i)

    def t_values(self, theta, i: int = 0):
        if self.T is None:
            raise MissingProvenance("curve carries no T recursion")
        return _eval(self.T, self.domain, theta, i)

    def nodes(self, n: int | None = None) -> np.ndarray:
        n = len(self.coeffs) if n is None else n
        return _from_unit(_nodes(n), self.domain)

    @property
    def provenance(self) -> dict:
        return {"y0": self.y0, "depth": self.depth, "start": self.start,
                "word": list(self.word), "alpha": self.alpha,
                "domain": list(self.domain)}


def horizontal(system, y0: float, start: int = 0) -> AdmissibleCurve:
    """Depth-0 horizontal curve ``Y = y0`` on the P0 element ``start``."""
    p0 = markov_partition(system.base, 0, "P")
    lo, hi = system.I_b
    if not (lo <= y0 <= hi):
        raise ValueError(f"y0={y0} outside I_b")
    return AdmissibleCurve(p0.element(start), np.array([float(y0)]), system.alpha,
                           float(y0), int(start), (), np.zeros(1), 0.0)


def _adaptive_fit(sample, dom, deg):
    n = deg + 1
    while True:
        th = _from_unit(_nodes(n), dom)
        vals = sample(th)
        coefs = [_coeffs_from_nodes(v) for v in vals]
        chk = _from_unit(np.cos(np.pi * np.arange(1, n) / n), dom)
        truth = sample(chk)
        res = 0.0
        for c, t in zip(coefs, truth):
            scale = max(np.max(np.abs(t)), 1e-300)
            res = max(res, float(np.max(np.abs(_eval(c, dom, chk) - t)) / scale))
        if res <= RESIDUAL_TOL or n >= MAX_DEGREE + 1:
            return [chop(c) for c in coefs], res
        n = 2 * (n - 1) + 1


def push_curve(system, X: AdmissibleCurve, element: int, deg: int = DEFAULT_DEGREE,
               theta0_mode: str = "midpoint") -> AdmissibleCurve:
    """Image of ``X`` restricted to the P1 element ``element``.

    The new curve lives on ``h(element)`` and equals
    ``alpha * phi(tau theta) + Q_b(X(tau theta))`` with ``tau`` the inverse
    branch onto ``element``.

    Raises
    ------
    NotSubElement
        The element is not contained in the domain of ``X``.
    """
    model = system.base
    p1 = markov_partition(model, 1, "P")
    el = p1.element(element)
    lo, hi = X.domain
    if el[0] < lo - 1e-12 or el[1] > hi + 1e-12:
        raise NotSubElement(f"P1 element {element} {el} not inside {X.domain}")
    tau = p1_branches(model)[element]
    at = model.atlas
    dom = tau.omega0
    alpha, b = system.alpha, system.b
    if theta0_mode == "midpoint":
        th0 = 0.5 * (dom[0] + dom[1])
    elif theta0_mode == "left":
        th0 = dom[0] + 0.25 * (dom[1] - dom[0])
    else:
        th0 = dom[0] + 0.75 * (dom[1] - dom[0])
    D = -2.0 * float(X(tau(np.array([th0])))[0])
    if abs(D) > 4.0:
        raise ValueError("|D| exceeds 4; curve left the invariant rectangle")
    has_T = X.T is not None

    def sample(theta):
        hc, s, logd = tau.evaluate_chart(theta)
        x = at.chart_to_x(hc, s)
        t = at.chart_to_theta(hc, s)
        Xv = X(t)
        vals = alpha * system.phi_x(x) + (b - Xv * Xv)
        if not has_T:
            return (vals,)
        dtau = tau.orientation * np.exp(logd)
        dphi = system.dphi_x(x) * np.exp(-at.log_rho(hc, s)) * dtau
        return vals, dphi + D * X.t_values(t) * dtau

    fits, res = _adaptive_fit(sample, dom, deg)
    return AdmissibleCurve(dom, fits[0], alpha, X.y0, X.start, X.word + (int(element),),
                           fits[1] if has_T else None, max(res, X.residual), theta0_mode)


def _children(model, dom):
    p1 = markov_partition(model, 1, "P")
    b = p1.breakpoints
    i0 = int(np.argmin(np.abs(b - dom[0])))
    i1 = int(np.argmin(np.abs(b - dom[1])))
    return list(range(i0, i1))


def evolve_horizontal(system, y0: float, n: int, words="all", start: int | None = None,
                      deg: int = DEFAULT_DEGREE, max_curves: int = MAX_CURVES):
    """Push the horizontal curve ``Y = y0`` ``n`` times.

    Parameters
    ----------
    words : "all" or sequence
        ``"all"`` follows every admissible branch word of length ``n``;
        otherwise a single word (sequence of P1 indices) or a list of them.
    start : int, optional
        P0 element of the seed; by default the one containing the first
        element of each word (index 0 for ``"all"``).

    Returns
    -------
    list of AdmissibleCurve
    """
    model = system.base
    p0 = markov_partition(model, 0, "P")
    p1 = markov_partition(model, 1, "P")
    if isinstance(words, str):
        if words != "all":
            raise ValueError("words must be 'all' or a sequence of P1 indices")
        starts = range(p0.n_elements) if start is None else [start]
        layer = [horizontal(system, y0, s) for s in starts]
        for _ in range(n):
            nxt = []
            for X in layer:
                kids = _children(model, X.domain)
                if len(nxt) + len(kids) > max_curves:
                    raise DepthExceeded(f"more than {max_curves} curves requested")
                nxt.extend(push_curve(system, X, e, deg) for e in kids)
            layer = nxt
        return layer
    words = list(words)
    if words and np.isscalar(words[0]):
        words = [words]
    out = []
    for w in words:
        if len(w) != n:
            raise ValueError(f"word {w} has length {len(w)}, expected {n}")
        if start is None:
            mid = 0.5 * sum(p1.element(w[0])) if n else 0.0
            s0 = int(p0.locate(mid))
        else:
            s0 = start
        X = horizontal(system, y0, s0)
        for e in w:
            X = push_curve(system, X, int(e), deg)
        out.append(X)
    return out


def random_words(system, n: int, count: int, rng, start: int = 0):
    """Random admissible words of length ``n`` starting in P0 element ``start``."""
    model = system.base
    p0 = markov_partition(model, 0, "P")
    branches = p1_branches(model)
    out = []
    for _ in range(count):
        dom = p0.element(start)
        w = []
        for _ in range(n):
            kids = _children(model, dom)
            e = int(kids[rng.integers(len(kids))])
            w.append(e)
            dom = branches[e].omega0
        out.append(tuple(w))
    return out


# ---------------------------------------------------------------------------
# the family of T functions
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TFamilyElement:
    """``T = sum_k c_k (phi o tau_k)'`` on a P0 element, truncated at ``N_T``.

    ``word[k-1]`` is the P1 element whose inverse branch is applied at step
    ``k``, so ``tau_k = sigma_{word[k-1]} o ... o sigma_{word[0]}``.
    """

    system: object
    omega: tuple
    word: tuple
    coeffs: np.ndarray
    truncation_bound: float = field(default=0.0)

    @property
    def N_T(self) -> int:
        return len(self.word)

    def terms(self, theta):
        """Array of ``(phi o tau_k)'(theta)`` with shape ``(N_T, len(theta))``."""
        system = self.system
        at = system.base.atlas
        branches = p1_branches(system.base)
        hc, s = at.theta_to_chart(np.asarray(theta, dtype=float))
        logd = np.zeros(np.shape(hc))
        orient = 1.0
        out = []
        for e in self.word:
            br = branches[e]
            hc, s, ld = br.pull_chart(hc, s)
            logd = logd + ld
            orient *= br.orientation
            x = at.chart_to_x(hc, s)
            out.append(system.dphi_x(x) * np.exp(-at.log_rho(hc, s) + logd) * orient)
        return np.array(out)

    def __call__(self, theta):
        return np.asarray(self.coeffs) @ self.terms(theta)


def _tail_bound(system, N_T: int, omega) -> float:
    lam = system.base.lambda_g
    r = 4.0 / lam
    if r >= 1.0:
        return math.inf
    th = np.linspace(omega[0], omega[1], 2001)[1:-1]
    sup_dphi = float(np.max(np.abs(system.dphi(th))))
    return sup_dphi * 0.25 * r ** (N_T + 1) / (1.0 - r)


def _validate_word(system, omega, word):
    branches = p1_branches(system.base)
    mid = np.array([0.5 * (omega[0] + omega[1])])
    dom = omega
    for e in word:
        br = branches[e]
        lo, hi = br.omega0
        if not (lo - 1e-12 <= dom[0] and dom[1] <= hi + 1e-12):
            raise NotSubElement(f"P1 element {e} does not cover the current image")
        mid = br.evaluate(mid)
        dom = tuple(np.sort(br.evaluate(np.array(dom))))
    return True


def t_family_eval(element: TFamilyElement, theta):
    """Values of the truncated series on ``theta``."""
    return element(theta)


def make_t_family(system, omega_index: int, word, coeffs) -> TFamilyElement:
    p0 = markov_partition(system.base, 0, "P")
    omega = p0.element(omega_index)
    word = tuple(int(e) for e in word)
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) != len(word):
        raise ValueError("need one coefficient per branch")
    bounds = 4.0 ** np.arange(len(word))
    if np.any(np.abs(coeffs[1:]) > bounds[1:] * (1 + 1e-12)):
        raise ValueError("coefficients must satisfy |c_k| <= 4**(k-1)")
    _validate_word(system, omega, word)
    return TFamilyElement(system, omega, word, coeffs, _tail_bound(system, len(word), omega))


def random_t_family(system, rng, omega_index: int = 0, N_T: int = 12) -> TFamilyElement:
    """Random member with ``c_1 = 1`` and ``c_k`` uniform in ``[-4**(k-1), 4**(k-1)]``."""
    model = system.base
    p0 = markov_partition(model, 0, "P")
    branches = p1_branches(model)
    omega = p0.element(omega_index)
    dom = omega
    word = []
    for _ in range(N_T):
        cands = [e for e, br in enumerate(branches)
                 if br.omega0[0] - 1e-12 <= dom[0] and dom[1] <= br.omega0[1] + 1e-12]
        e = int(cands[rng.integers(len(cands))])
        word.append(e)
        dom = tuple(np.sort(branches[e].evaluate(np.array(dom))))
    k = np.arange(N_T)
    coeffs = rng.uniform(-1.0, 1.0, N_T) * 4.0 ** k
    coeffs[0] = 1.0
    return TFamilyElement(system, omega, tuple(word), coeffs,
                          _tail_bound(system, N_T, omega))


def t_family_bounds(system, n_elements: int = 1000, l0: int = 2, rng=None,
                    omega_index: int = 0, N_T: int = 12, deg: int = 48) -> dict:
    """Sample family members; estimate ``A_i = sup|T^(i)|`` and ``B_T``.

    ``B_T`` is the smallest value over the sample of
    ``min_theta sum_{i < l0} |T^(i)(theta)|``. Returned alongside the same
    estimate from the first half of the sample, to judge its stability.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    p0 = markov_partition(system.base, 0, "P")
    omega = p0.element(omega_index)
    t = _nodes(deg + 1)
    th = _from_unit(t, omega)
    grid = np.linspace(omega[0], omega[1], 513)
    A = np.zeros(l0 + 1)
    mins = np.empty(n_elements)
    for k in range(n_elements):
        el = random_t_family(system, rng, omega_index, N_T)
        c = _coeffs_from_nodes(el(th))
        tot = np.zeros_like(grid)
        for i in range(l0 + 1):
            v = np.abs(_eval(c, omega, grid, i))
            A[i] = max(A[i], float(np.max(v)))
            if i < l0:
                tot += v
        mins[k] = float(np.min(tot))
    half = max(n_elements // 2, 1)
    return {"A": A.tolist(), "B_T": float(np.min(mins)),
            "B_T_half": float(np.min(mins[:half])), "n": n_elements,
            "two_B_T": 2 * float(np.min(mins))}


# ---------------------------------------------------------------------------
# checks on curves
# ---------------------------------------------------------------------------

def check_linear_approx(X: AdmissibleCurve, l: int = 3) -> np.ndarray:
    """Sup norms of ``(X' - alpha T)^(i)``, ``i = 0..l``, on the node grid.

    Raises
    ------
    MissingProvenance
        ``X`` was not built with the T recursion.
    """
    if X.T is None or X.depth == 0:
        raise MissingProvenance("curve has no recorded T recursion")
    n = max(len(X.coeffs), len(X.T))
    E = np.zeros(n)
    dX = C.chebder(X.coeffs) * (2.0 / (X.domain[1] - X.domain[0])) if len(X.coeffs) > 1 else np.zeros(1)
    E[: len(dX)] += dX
    E[: len(X.T)] -= X.alpha * X.T
    th = X.nodes(n)
    return np.array([float(np.max(np.abs(_eval(E, X.domain, th, i)))) for i in range(l + 1)])


@dataclass(frozen=True)
class NonFlatReport:
    """Empirical constants of ``B alpha <= sum_{i<=l0} |X^(i)|``, ``sum_{i<=l0+1} <= A alpha``."""

    l0: int
    B: float
    A: float
    per_curve: list
    B_by_l: list

    def to_dict(self) -> dict:
        return {"l0": self.l0, "B_hat": self.B, "A_hat": self.A,
                "B_by_l": self.B_by_l, "per_curve": self.per_curve}


def _deriv_sums(X, grid_n, l_max):
    th = np.linspace(X.domain[0], X.domain[1], grid_n)
    D = np.array([np.abs(X(th, i)) for i in range(1, l_max + 2)])
    return np.cumsum(D, axis=0) / X.alpha  # row l-1: sum_{i<=l}


def check_nonflat(curves, l_max: int = 8, grid: int = 257, threshold: float = 1e-3,
                  stability: float = 0.2, fixed_l0: int | None = None) -> NonFlatReport:
    """Smallest ``l0`` with ``inf sum_{i<=l0} |X^(i)| / alpha`` bounded below.

    The infimum over curves and a uniform grid must be at least
    ``threshold`` and change by less than ``stability`` (relative) when
    the grid is doubled. With ``fixed_l0`` the search is skipped.

    Raises
    ------
    NoFiniteL0
        No ``l0 <= l_max`` qualifies.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("no curves given")
    if any(X.depth < 1 for X in curves):
        raise ValueError("curves must have depth >= 1 (horizontal curves are flat)")
    S1 = [_deriv_sums(X, grid, l_max) for X in curves]
    S2 = [_deriv_sums(X, 2 * grid - 1, l_max) for X in curves]
    B1 = [min(float(np.min(s[l - 1])) for s in S1) for l in range(1, l_max + 1)]
    B2 = [min(float(np.min(s[l - 1])) for s in S2) for l in range(1, l_max + 1)]
    l0 = None
    if fixed_l0 is not None:
        l0 = int(fixed_l0)
    else:
        for l in range(1, l_max + 1):
            b1, b2 = B1[l - 1], B2[l - 1]
            if b1 >= threshold and abs(b2 - b1) <= stability * b1:
                l0 = l
                break
    if l0 is None:
        raise NoFiniteL0(f"no l0 <= {l_max} gives a stable positive lower bound")
    Bh = B2[l0 - 1]
    Ah = max(float(np.max(s[l0])) for s in S2)
    per = [{"word": list(X.word), "depth": X.depth, "y0": X.y0,
            "min_sum": float(np.min(s[l0 - 1])), "max_sum": float(np.max(s[l0]))}
           for X, s in zip(curves, S2)]
    return NonFlatReport(l0, Bh, Ah, per, B2)


def curve_recurrence(X: AdmissibleCurve, eps_list, total_length: float,
                     resolution: float = 1e-6, grid: int = 4097) -> np.ndarray:
    """Normalized measure of ``{theta in domain : |X(theta)| <= alpha eps}``.

    Crossings of the level are located on a grid and refined by bisection
    to ``resolution * |domain|``; the measure is divided by
    ``total_length`` (the length of ``I_a``).
    """
    lo, hi = X.domain
    width = hi - lo
    th = np.linspace(lo, hi, grid)
    vals = np.abs(X(th))
    out = []
    for eps in eps_list:
        lev = X.alpha * eps
        g = vals - lev
        pts = [lo]
        idx = np.flatnonzero(np.sign(g[:-1]) != np.sign(g[1:]))
        for i in idx:
            a_, b_ = th[i], th[i + 1]
            ga = g[i]
            while b_ - a_ > resolution * width:
                m = 0.5 * (a_ + b_)
                gm = abs(float(X(np.array([m]))[0])) - lev
                if np.sign(gm) == np.sign(ga):
                    a_, ga = m, gm
                else:
                    b_ = m
            pts.append(0.5 * (a_ + b_))
        pts.append(hi)
        pts = np.array(pts)
        mids = 0.5 * (pts[:-1] + pts[1:])
        inside = np.abs(X(mids)) <= lev
        out.append(float(np.sum(np.diff(pts)[inside])) / total_length)
    return np.array(out)


@dataclass(frozen=True)
class SeparationResult:
    M_star: int
    eps0: float
    pair: tuple
    best_by_M: dict

    def to_dict(self) -> dict:
        return {"M_star": self.M_star, "eps0_hat": self.eps0,
                "pair": [list(p) for p in self.pair],
                "best_by_M": {str(k): v for k, v in self.best_by_M.items()}}


def _sibling_curves(system, X, M, central_only):
    if central_only:
        p1 = markov_partition(system.base, 1, "P")
        b = p1.breakpoints
        i0 = int(np.argmin(np.abs(b)))
        return [push_curve(system, X, i0), push_curve(system, X, i0 - 1)]
    layer = [X]
    for _ in range(M):
        layer = [push_curve(system, Y, e) for Y in layer for e in _children(system.base, Y.domain)]
    return layer


def separation_test(system, X: AdmissibleCurve, M_search: int = 2,
                    threshold: float = 1e-4, central_only: bool = False,
                    grid: int = 513) -> SeparationResult:
    """Search for sibling pieces ``Z+``, ``Z-`` of ``F^M(X)`` that separate.

    For each ``M <= M_search`` the pieces of ``F^M(X)`` sharing a common
    domain are compared; ``M_star`` is the first ``M`` for which some pair
    has ``sup |Z+ - Z-| >= threshold * alpha`` and ``eps0`` is the largest
    ``sup |Z+ - Z-| / alpha`` at that level. ``central_only`` restricts the
    search to the two P1 elements adjacent to 0 at ``M = 1``.

    Raises
    ------
    NoSeparation
        No pair reaches the threshold.
    """
    alpha = system.alpha
    best_by_M = {}
    best_pair = None
    Ms = [1] if central_only else range(1, M_search + 1)
    for M in Ms:
        pieces = _sibling_curves(system, X, M, central_only)
        groups = {}
        for Z in pieces:
            groups.setdefault((round(Z.domain[0], 9), round(Z.domain[1], 9)), []).append(Z)
        best, pair = 0.0, None
        for dom, Zs in groups.items():
            th = np.linspace(dom[0], dom[1], grid)
            V = np.array([Z(th) for Z in Zs])
            for i in range(len(Zs)):
                d = np.max(np.abs(V[i + 1:] - V[i]), axis=1) if i + 1 < len(Zs) else []
                for j, dj in enumerate(d):
                    if dj > best:
                        best, pair = float(dj), (Zs[i].word, Zs[i + 1 + j].word)
        best_by_M[M] = best / alpha if alpha > 0 else math.inf * best
        if best >= threshold * alpha and alpha > 0:
            return SeparationResult(M, best / alpha, pair, best_by_M)
        best_pair = pair if best_pair is None else best_pair
    raise NoSeparation(
        f"no sibling pair separates by {threshold:g} alpha for M <= {max(Ms)}",
        best=best_by_M)
