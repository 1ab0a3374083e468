"""Compiled orbit kernels.

The base point is carried in chart form ``(half-cell, s)`` (see
:mod:`mtskew.expanding`); the fiber coordinate is carried in
double-double arithmetic so that orbits passing very close to ``y = 0``
do not round onto the post-critical orbit of ``Q_b``.
"""
import math

import numpy as np
from numba import njit

_SPLIT = 134217729.0  # 2**27 + 1


@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def _two_prod(a, b):
    p = a * b
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def dd_fiber(yh, yl, b, add):
    """``b - y**2 + add`` for double-double ``y``."""
    p, e = _two_prod(yh, yh)
    e += 2.0 * yh * yl
    s, t = _two_sum(b, -p)
    t -= e
    s2, t2 = _two_sum(s, add)
    t2 += t
    hi = s2 + t2
    lo = t2 - (hi - s2)
    return hi, lo


@njit(cache=True, inline="always")
def _kadd(sm, c, v):
    # Neumaier compensated accumulation
    t = sm + v
    if abs(sm) >= abs(v):
        c += (sm - t) + v
    else:
        c += (v - t) + sm
    return t, c


@njit(cache=True, inline="always")
def _locate(xb, x, nh):
    k = 0
    for i in range(1, len(xb)):
        if x >= xb[i]:
            k = i
    if k > nh - 1:
        k = nh - 1
    return k


@njit(cache=True, inline="always")
def _side(j, delta, nh):
    k = 2 * j if delta >= 0.0 else 2 * j - 1
    if k < 0:
        k = 0
    if k > nh - 1:
        k = nh - 1
    return k


@njit(cache=True, inline="always")
def _plog(hc, s, x, pc, anchor):
    # s**2 * prod_{k != anchor} |x - pc_k|, whose -1/2 log is log rho
    j = anchor[hc]
    p = s * s
    for k in range(len(pc)):
        if k != j:
            p *= abs(x - pc[k])
    return p


@njit(cache=True)
def chart_step(hc, s, a, pc, anchor, direction, pc_next, top, xb, nh):
    """One ``Q_a`` step; returns ``(hc', s', x)`` where x is the source point."""
    j = anchor[hc]
    v = pc[j]
    d = direction[hc]
    s2 = s * s
    x = v + d * s2
    y = a - x * x
    h2 = _locate(xb, y, nh)
    j2 = anchor[h2]
    if j2 == top:
        delta = -x * x
        h2 = _side(j2, delta, nh)
    elif j2 == pc_next[j]:
        delta = -d * s2 * (2.0 * v + d * s2)
        h2 = _side(j2, delta, nh)
    else:
        delta = y - pc[j2]
    t = direction[h2] * delta
    if t < 0.0:
        t = 0.0
    return h2, math.sqrt(t), x


@njit(cache=True, inline="always")
def _horner(c, x):
    r = 0.0
    for i in range(len(c) - 1, -1, -1):
        r = r * x + c[i]
    return r


@njit(cache=True, nogil=True)
def orbit_kernel(hc, s, yh, yl, n, burn, m1, a, pc, anchor, direction, pc_next,
                 top, xb, nh, b, alpha, phi_c, dphi_c, delta, ybound,
                 checkpoints, ev_idx, ev_val, dump, want_dfinv):
    """Advance one orbit of the skew product.

    Returns ``(hc, s, yh, yl, sum_log_dh, sum_log_dq, sum_log_dfinv,
    n_events, s_sum, escaped, steps_done)``. Checkpointed recurrence sums
    are written to ``checkpoints[:, 1]`` (step counts in column 0), events
    ``(i, |y_i|)`` fill ``ev_idx``/``ev_val`` up to their capacity, and when
    ``dump`` is nonempty it receives the fiber values ``y_i``.
    """
    sum_dh = 0.0
    sum_dq = 0.0
    sum_dfi = 0.0
    c_dh = 0.0
    c_dq = 0.0
    c_dfi = 0.0
    n_ev = 0
    ssum = 0.0
    cp = 0
    ncp = checkpoints.shape[0]
    cap = len(ev_idx)
    nd = len(dump)
    x0 = pc[anchor[hc]] + direction[hc] * s * s
    px = _plog(hc, s, x0, pc, anchor)
    for it in range(burn + n):
        i = it - burn
        # fiber quantities at the current point
        y = yh
        x = pc[anchor[hc]] + direction[hc] * s * s
        phi = _horner(phi_c, x)
        if i >= 0:
            ay = abs(y)
            if nd > 0 and i < nd:
                dump[i] = y
            lq = math.log(2.0 * ay)
            sum_dq, c_dq = _kadd(sum_dq, c_dq, lq)
            if ay < delta:
                ssum += -math.log(ay)
                if n_ev < cap:
                    ev_idx[n_ev] = i
                    ev_val[n_ev] = ay
                n_ev += 1
        # base step h = h0**m1 with log-derivative
        ldh = 0.0
        xs = x
        for _ in range(m1):
            h2, s2, xx = chart_step(hc, s, a, pc, anchor, direction, pc_next, top, xb, nh)
            y2 = pc[anchor[h2]] + direction[h2] * s2 * s2
            py = _plog(h2, s2, y2, pc, anchor)
            ldh += 0.5 * math.log(4.0 * xx * xx * px / py)
            hc, s, px = h2, s2, py
        if i >= 0:
            sum_dh, c_dh = _kadd(sum_dh, c_dh, ldh)
            if want_dfinv:
                # |DF^{-1}| for DF = [[h', 0], [alpha phi', Q_b'(y)]]
                rho_x = math.exp(-0.5 * math.log(_plog_at(xs, pc)))
                dphi = _horner(dphi_c, xs) / rho_x
                p = math.exp(-ldh)
                r = 1.0 / (2.0 * abs(y))
                q = alpha * dphi * p * r
                T = p * p + q * q + r * r
                D = p * r
                disc = T * T - 4.0 * D * D
                if disc < 0.0:
                    disc = 0.0
                sum_dfi, c_dfi = _kadd(sum_dfi, c_dfi, 0.5 * math.log(0.5 * (T + math.sqrt(disc))))
        yh, yl = dd_fiber(yh, yl, b, alpha * phi)
        if abs(yh) > ybound:
            return (hc, s, yh, yl, sum_dh + c_dh, sum_dq + c_dq, sum_dfi + c_dfi,
                    n_ev, ssum, True, it + 1)
        if i >= 0:
            while cp < ncp and checkpoints[cp, 0] == i + 1:
                checkpoints[cp, 1] = ssum
                cp += 1
    return (hc, s, yh, yl, sum_dh + c_dh, sum_dq + c_dq, sum_dfi + c_dfi,
            n_ev, ssum, False, burn + n)


@njit(cache=True, inline="always")
def _plog_at(x, pc):
    p = 1.0
    for k in range(len(pc)):
        p *= abs(x - pc[k])
    return p


@njit(cache=True, nogil=True)
def fiber_orbit(yh, yl, b, n, dump):
    """Iterate ``Q_b`` alone in double-double; fills ``dump`` with y_i."""
    for i in range(n):
        dump[i] = yh
        yh, yl = dd_fiber(yh, yl, b, 0.0)
    return yh, yl


@njit(cache=True)
def recurrence_sums(ys, delta, checkpoints):
    """Sequential recurrence sums from a dumped orbit (same order as the kernel)."""
    ssum = 0.0
    cp = 0
    out = np.zeros(len(checkpoints))
    for i in range(len(ys)):
        ay = abs(ys[i])
        if ay < delta:
            ssum += -math.log(ay)
        while cp < len(checkpoints) and checkpoints[cp] == i + 1:
            out[cp] = ssum
            cp += 1
    return out
