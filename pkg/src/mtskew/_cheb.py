"""Small piecewise Chebyshev toolkit used by the coordinate surrogates."""
from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)


def gauss_legendre_64():
    return _GL_NODES, _GL_WEIGHTS


def cheb_points(n: int) -> np.ndarray:
    """First-kind Chebyshev points on [-1, 1], ascending."""
    k = np.arange(n)
    return -np.cos((2 * k + 1) * np.pi / (2 * n))


def fit_piecewise(f, lo: float, hi: float, deg: int = 20, tol: float = 1e-13,
                  max_pieces: int = 4096, min_width: float = 0.0):
    """Adaptive piecewise Chebyshev fit of a vectorized scalar function.

    Intervals are bisected until the fit error on interleaved check points
    drops below ``tol``. Returns ``(edges, coeffs)`` with
    ``len(edges) == len(coeffs) + 1``.
    """
    x_fit = cheb_points(deg + 1)
    x_chk = np.linspace(-0.995, 0.995, 3 * deg + 7)
    todo = [(lo, hi)]
    done = []
    while todo:
        a, b = todo.pop()
        xm, xr = 0.5 * (a + b), 0.5 * (b - a)
        c = C.chebfit(x_fit, f(xm + xr * x_fit), deg)
        err = np.max(np.abs(C.chebval(x_chk, c) - f(xm + xr * x_chk)))
        if err <= tol or len(done) + len(todo) >= max_pieces or (b - a) <= min_width:
            done.append((a, b, c))
        else:
            todo.append((xm, b))
            todo.append((a, xm))
    done.sort(key=lambda t: t[0])
    edges = np.array([d[0] for d in done] + [done[-1][1]])
    coeffs = np.array([d[2] for d in done])
    return edges, coeffs


class PiecewiseTable:
    """Many independent piecewise Chebyshev fits addressed by an integer key.

    Fit ``j`` lives on ``[0, length_j]``; evaluation takes ``(key, t)``
    arrays and looks up the piece through a single sorted edge array.
    """

    def __init__(self, fits, lengths):
        self.lengths = np.asarray(lengths, dtype=float)
        keys, lo, hi, coef, first, last = [], [], [], [], [], []
        n = 0
        for j, (edges, coeffs) in enumerate(fits):
            L = self.lengths[j]
            first.append(n)
            for i in range(len(coeffs)):
                keys.append(j + edges[i] / L)
                lo.append(edges[i])
                hi.append(edges[i + 1])
                coef.append(coeffs[i])
                n += 1
            last.append(n - 1)
        self.keys = np.array(keys)
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        deg = max(len(c) for c in coef)
        self.coef = np.zeros((n, deg))
        for i, c in enumerate(coef):
            self.coef[i, : len(c)] = c
        self.first = np.array(first)
        self.last = np.array(last)

    def __call__(self, key, t):
        key = np.asarray(key)
        t = np.asarray(t, dtype=float)
        L = self.lengths[key]
        idx = np.searchsorted(self.keys, key + t / L, side="right") - 1
        idx = np.clip(idx, self.first[key], self.last[key])
        lo, hi = self.lo[idx], self.hi[idx]
        z = (2.0 * t - (lo + hi)) / (hi - lo)
        # Clenshaw with per-point coefficient rows
        b1 = np.zeros_like(z)
        b2 = np.zeros_like(z)
        for k in range(self.coef.shape[1] - 1, 0, -1):
            b1, b2 = self.coef[idx, k] + 2.0 * z * b1 - b2, b1
        return self.coef[idx, 0] + z * b1 - b2

    @property
    def n_pieces(self) -> int:
        return len(self.keys)


def chop(coeffs: np.ndarray, tol: float = 1e-15) -> np.ndarray:
    """Zero out the trailing Chebyshev coefficients that sit at rounding level."""
    c = np.array(coeffs, dtype=float)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        return c
    big = np.nonzero(np.abs(c) > tol * scale)[0]
    cut = big[-1] + 1 if big.size else 1
    c[cut:] = 0.0
    return c
