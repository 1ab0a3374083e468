"""Misiurewicz-Thurston parameters of the quadratic family ``Q_c(x) = c - x**2``.

A parameter is Misiurewicz-Thurston (MT) when the critical point 0 is
strictly preperiodic: ``Q_c^{k+p}(0) = Q_c^k(0)`` while the points
``Q_c^i(0)``, ``0 <= i < k+p``, are pairwise distinct.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .errors import NoSignChange, StrictnessViolation

__all__ = [
    "QuadraticParam",
    "MTCertificate",
    "PostCriticalSet",
    "iterate_quadratic",
    "critical_orbit",
    "find_mt_parameter",
    "postcritical_set",
    "check_topological_exactness",
]

STRICTNESS_TOL = 1e-6
RESIDUAL_TOL = 1e-10
DEDUP_TOL = 1e-9
_BISECT_WIDTH = 1e-14
_MP_DIGITS = 50


@dataclass(frozen=True)
class QuadraticParam:
    """A parameter ``c`` in ``(1, 2]``."""

    c: float

    def __post_init__(self):
        c = float(self.c)
        if not (1.0 < c <= 2.0):
            raise ValueError(f"quadratic parameter must lie in (1, 2], got {c!r}")
        object.__setattr__(self, "c", c)

    def __call__(self, x):
        return self.c - x * x


@dataclass(frozen=True)
class MTCertificate:
    """Certificate that the critical orbit of ``Q_c`` is strictly preperiodic.

    Attributes
    ----------
    param : QuadraticParam
    preperiod, period : int
        ``Q_c^{k+p}(0) = Q_c^k(0)`` with ``k = preperiod`` and ``p = period``.
    residual : float
        ``|Q_c^{k+p}(0) - Q_c^k(0)|`` evaluated in extended precision at the
        double ``c``.
    strictness_gap : float
        Smallest distance between two of the points ``Q_c^i(0)``, ``0 <= i < k+p``.
    """

    param: QuadraticParam
    preperiod: int
    period: int
    residual: float
    strictness_gap: float
    orbit: tuple = field(default=(), repr=False)

    @property
    def c(self) -> float:
        return self.param.c

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "preperiod": self.preperiod,
            "period": self.period,
            "residual": self.residual,
            "strictness_gap": self.strictness_gap,
            "postcritical": list(postcritical_set(self).points),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_value(cls, c: float, preperiod: int, period: int) -> "MTCertificate":
        """Certify a known parameter value (no root search).

        Raises
        ------
        StrictnessViolation
            The orbit of 0 does not close up to ``RESIDUAL_TOL`` or is degenerate.
        """
        cert = _certify(float(c), int(preperiod), int(period))
        if cert.residual > RESIDUAL_TOL:
            raise StrictnessViolation(
                f"orbit of 0 under Q_c, c={c!r}, is not preperiodic with (k, p)=({preperiod}, "
                f"{period}): residual {cert.residual:.3e}"
            )
        return cert


@dataclass(frozen=True)
class PostCriticalSet:
    """Sorted post-critical points ``{Q_c^n(0): n >= 1}``."""

    points: tuple
    c: float

    def __len__(self):
        return len(self.points)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    def is_closed(self, tol: float = 1e-10) -> bool:
        pts = self.as_array()
        img = self.c - pts * pts
        return bool(np.all(np.min(np.abs(img[:, None] - pts[None, :]), axis=1) <= tol))


def iterate_quadratic(c, x, n: int):
    """Return ``Q_c^n(x)`` by n-fold application.

    Works elementwise for array ``x``; ``c`` may be a float or a
    :class:`QuadraticParam`.
    """
    if isinstance(c, QuadraticParam):
        c = c.c
    if n < 0:
        raise ValueError("n must be nonnegative")
    for _ in range(n):
        x = c - x * x
    return x


def critical_orbit(c: float, length: int, precise: bool = False):
    """Points ``Q_c^i(0)`` for ``0 <= i < length``.

    With ``precise=True`` the orbit is evaluated with mpmath at 50 digits
    from the exact binary value of ``c``, then rounded.
    """
    if precise:
        with mpmath.workdps(_MP_DIGITS):
            cm = mpmath.mpf(c)
            x = mpmath.mpf(0)
            out = []
            for _ in range(length):
                out.append(x)
                x = cm - x * x
            return out
    out = np.empty(length)
    x = 0.0
    for i in range(length):
        out[i] = x
        x = c - x * x
    return out


def _G(c: float, k: int, p: int):
    # G(c) = Q^{k+p}(0) - Q^k(0) together with dG/dc
    x, dx = 0.0, 0.0
    xk = dxk = 0.0
    for i in range(k + p):
        if i == k:
            xk, dxk = x, dx
        x, dx = c - x * x, 1.0 - 2.0 * x * dx
    if k + p == k:  # pragma: no cover - p >= 1 enforced
        xk, dxk = x, dx
    return x - xk, dx - dxk


def _certify(c: float, k: int, p: int) -> MTCertificate:
    orbit = critical_orbit(c, k + p + 1, precise=True)
    with mpmath.workdps(_MP_DIGITS):
        residual = float(abs(orbit[k + p] - orbit[k]))
        pts = orbit[: k + p]
        gap = min(
            float(abs(pts[i] - pts[j])) for i in range(len(pts)) for j in range(i)
        ) if len(pts) > 1 else math.inf
    if gap <= STRICTNESS_TOL:
        raise StrictnessViolation(
            f"orbit of 0 under Q_c, c={c!r}, is not strictly preperiodic with "
            f"(k, p)=({k}, {p}): two orbit points are {gap:.3e} apart"
        )
    return MTCertificate(
        QuadraticParam(c), k, p, residual, gap, tuple(float(v) for v in orbit)
    )


def find_mt_parameter(preperiod: int, period: int, bracket=(1.0, 2.0)) -> MTCertificate:
    """Locate and certify an MT parameter with given preperiod and period.

    The root of ``G(c) = Q_c^{k+p}(0) - Q_c^k(0)`` is bracketed by bisection
    down to width 1e-14 and then polished by two safeguarded Newton steps.
    When several roots lie in the bracket, the one reached by bisection is
    returned; others may exist.

    Parameters
    ----------
    preperiod, period : int
        ``k >= 1`` and ``p >= 1``.
    bracket : tuple of float
        ``(lo, hi)`` with ``1 <= lo < hi <= 2`` on which G changes sign.

    Returns
    -------
    MTCertificate

    Raises
    ------
    NoSignChange
        G has the same strict sign at both bracket ends.
    StrictnessViolation
        The root found has a degenerate (periodic or shorter) orbit.
    """
    k, p = int(preperiod), int(period)
    if k < 1 or p < 1:
        raise ValueError("preperiod and period must be positive")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (1.0 <= lo < hi <= 2.0):
        raise ValueError(f"bracket must satisfy 1 <= lo < hi <= 2, got {bracket!r}")
    glo, ghi = _G(lo, k, p)[0], _G(hi, k, p)[0]
    if glo == 0.0:
        return _certify(lo, k, p)
    if ghi == 0.0:
        return _certify(hi, k, p)
    if glo * ghi > 0:
        raise NoSignChange(
            f"G(c) = Q_c^{k + p}(0) - Q_c^{k}(0) has constant sign on [{lo}, {hi}]"
        )
    while hi - lo > _BISECT_WIDTH:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm = _G(mid, k, p)[0]
        if gm == 0.0:
            lo = hi = mid
            break
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    for _ in range(2):
        g, dg = _G(c, k, p)
        if g == 0.0 or dg == 0.0:
            break
        cn = c - g / dg
        # safeguard: stay inside the final bracket, accept only if better
        if lo <= cn <= hi and abs(_G(cn, k, p)[0]) <= abs(g):
            c = cn
    return _certify(c, k, p)


def postcritical_set(cert: MTCertificate, tol: float = DEDUP_TOL) -> PostCriticalSet:
    """Return the sorted post-critical set of a certified parameter.

    The orbit is evaluated in extended precision and deduplicated within
    ``tol``. Since ``Q^{k+p}(0) = Q^k(0)`` there are ``k + p - 1`` points.
    """
    k, p = cert.preperiod, cert.period
    orbit = cert.orbit or tuple(float(v) for v in critical_orbit(cert.c, k + p + 1, True))
    pts = sorted(orbit[1 : k + p + 1])
    out = []
    for v in pts:
        if not out or abs(v - out[-1]) > tol:
            out.append(float(v))
    return PostCriticalSet(tuple(out), cert.c)


def check_topological_exactness(model, max_steps: int = 50):
    """Smallest ``M0 <= max_steps`` with ``h^{M0}(w) = I_a`` for every w in P0.

    The check runs on the Boolean transition graph of ``h0`` between the
    elements of Q0 (read off the children in Q1), raised to the power m1.

    Returns
    -------
    (bool, int or None)
    """
    A = model.transition_matrix().astype(np.int64)
    n = A.shape[0]
    B = np.eye(n, dtype=np.int64)
    for _ in range(model.m1):
        B = np.minimum(B @ A, 1)
    R = np.eye(n, dtype=np.int64)
    for M in range(max_steps + 1):
        if np.all(R > 0):
            return True, M
        R = np.minimum(R @ B, 1)
    return False, None
