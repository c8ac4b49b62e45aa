"""Numeric kernels for the hot inner loops.

Every kernel is written as plain Python over float64 arrays and compiled
with numba when available.  Setting the environment variable
``ADP_SCHED_NO_NUMBA=1`` (before import) skips compilation and runs the
same source as ordinary Python, which is slow but has no native
dependencies.  ``USING_NUMBA`` reports which path is active.
"""

import math
import os

import numpy as np

_flag = os.environ.get("ADP_SCHED_NO_NUMBA", "").strip().lower()
USING_NUMBA = _flag not in ("1", "true", "yes")
if USING_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        USING_NUMBA = False

if USING_NUMBA:
    def _jit(fn):
        return _njit(cache=True)(fn)
else:
    def _jit(fn):
        return fn

LN2 = 0.6931471805599453


def _pwl_eval_src(xs, vs, x):
    # Linear interpolation with clamping at the domain ends; exact at
    # breakpoints.  Domain policing happens in the Python wrappers.
    n = xs.shape[0]
    if x <= xs[0]:
        return vs[0]
    if x >= xs[n - 1]:
        return vs[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    t = (x - xs[lo]) / (xs[lo + 1] - xs[lo])
    return vs[lo] + t * (vs[lo + 1] - vs[lo])


pwl_eval = _jit(_pwl_eval_src)


def _interval_gap_src(xs, vs, i):
    # Worst-case vertical distance between the lower chord of interval i
    # and the upper envelope formed by the flanking chords extended into
    # the interval.  For concave data the true function lies between the
    # two, so this bounds the approximation error on the interval.
    n = xs.shape[0]
    if n == 2:
        d = vs[1] - vs[0]
        if d < 0.0:
            d = -d
        return d
    k_i = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i])
    b_i = vs[i] - k_i * xs[i]
    has_left = i >= 1
    has_right = i <= n - 3
    if has_left and has_right:
        kl = (vs[i] - vs[i - 1]) / (xs[i] - xs[i - 1])
        bl = vs[i] - kl * xs[i]
        kr = (vs[i + 2] - vs[i + 1]) / (xs[i + 2] - xs[i + 1])
        br = vs[i + 1] - kr * xs[i + 1]
        den = kl - kr
        if den < 0.0:
            den = -den
        if den < 1e-300:
            return 0.0  # three collinear chords: no slack in this interval
        z = (br - bl) / (kl - kr)
        if z < xs[i]:
            z = xs[i]
        elif z > xs[i + 1]:
            z = xs[i + 1]
        up_l = kl * z + bl
        up_r = kr * z + br
        up = up_l if up_l < up_r else up_r
        gap = up - (k_i * z + b_i)
    elif has_right:
        kr = (vs[i + 2] - vs[i + 1]) / (xs[i + 2] - xs[i + 1])
        br = vs[i + 1] - kr * xs[i + 1]
        gap = (kr * xs[i] + br) - vs[i]
    else:
        kl = (vs[i] - vs[i - 1]) / (xs[i] - xs[i - 1])
        bl = vs[i] - kl * xs[i]
        gap = (kl * xs[i + 1] + bl) - vs[i + 1]
    if gap < 0.0:
        gap = 0.0
    return gap


interval_gap = _jit(_interval_gap_src)


def _foresight_src(xs, vs, x, lam, alpha, h_rep, u_y, u_x, u_c, c_off):
    """Maximize  u_y*y + u_x*x + u_c - lam*(2**(y+c_off)-1)/h_rep + alpha*W(x-y)
    over 0 <= y <= x, where W is the concave piecewise-linear function
    (xs, vs).  Exact: the objective is concave in y, so the maximizer is
    either a stationary point inside a segment of W (closed form for the
    exponential cost) or a segment edge.  Ties resolve to the largest y.

    Returns (y, value).  Assumes xs[0] <= 0 <= x <= xs[-1].
    """
    n = xs.shape[0]
    if x < 0.0:
        x = 0.0
    if x <= xs[0]:
        cost = 0.0
        if lam > 0.0:
            cost = lam * ((2.0 ** c_off) - 1.0) / h_rep
        return 0.0, u_x * x + u_c - cost + alpha * pwl_eval(xs, vs, x)

    # Work in z = x - y (retained backlog).  The right-derivative of the
    # objective w.r.t. z on the segment starting at breakpoint j is
    #   d(j) = -u_y + lam*ln2*2**(x - xs[j] + c_off)/h_rep + alpha*k_j
    # which decreases in j, so the crossing segment is found by bisection.
    # The smallest maximizing z (largest y) is returned.
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] < x:
            lo = mid
        else:
            hi = mid
    jmax = lo  # last breakpoint strictly below x

    k0 = (vs[1] - vs[0]) / (xs[1] - xs[0])
    d0 = -u_y + alpha * k0
    if lam > 0.0:
        d0 += lam * LN2 * (2.0 ** (x - xs[0] + c_off)) / h_rep
    if d0 <= 0.0:
        zstar = xs[0]
    else:
        lo = 0
        hi = jmax + 1  # sentinel: treated as non-positive derivative
        while hi - lo > 1:
            mid = (lo + hi) // 2
            k = (vs[mid + 1] - vs[mid]) / (xs[mid + 1] - xs[mid])
            d = -u_y + alpha * k
            if lam > 0.0:
                d += lam * LN2 * (2.0 ** (x - xs[mid] + c_off)) / h_rep
            if d > 0.0:
                lo = mid
            else:
                hi = mid
        jstar = lo
        z_hi = xs[jstar + 1]
        if z_hi > x:
            z_hi = x
        zstar = z_hi
        if lam > 0.0:
            k = (vs[jstar + 1] - vs[jstar]) / (xs[jstar + 1] - xs[jstar])
            r = (u_y - alpha * k) * h_rep / (lam * LN2)
            if r > 0.0:
                zs = x + c_off - math.log2(r)
                if zs < z_hi:
                    zstar = zs
                    if zstar < xs[jstar]:
                        zstar = xs[jstar]

    y = x - zstar
    if y < 0.0:
        y = 0.0
    val = u_y * y + u_x * x + u_c + alpha * pwl_eval(xs, vs, zstar)
    if lam > 0.0:
        expo = y + c_off
        if expo > 1020.0:
            val = -1.0e300
        else:
            val -= lam * ((2.0 ** expo) - 1.0) / h_rep
    return y, val


foresight_opt = _jit(_foresight_src)


def _foresight_batch_src(xs, vs, pts, lam, alpha, h_rep, u_y, u_x, u_c, c_off):
    m = pts.shape[0]
    ys = np.empty(m)
    js = np.empty(m)
    for i in range(m):
        y, j = foresight_opt(xs, vs, pts[i], lam, alpha, h_rep, u_y, u_x, u_c, c_off)
        ys[i] = y
        js[i] = j
    return ys, js


foresight_batch = _jit(_foresight_batch_src)


def _vt_pd_expect_src(J, P, apmf):
    # Post-decision expectation: averages J over the arrival pmf (with the
    # buffer cap absorbing overflow at the top grid point) and the channel
    # transition row of the current state.
    ng = J.shape[0]
    nh = J.shape[1]
    na = apmf.shape[0]
    A = np.zeros((ng, nh))
    for iz in range(ng):
        for k in range(na):
            nxt = iz + k
            if nxt > ng - 1:
                nxt = ng - 1
            w = apmf[k]
            for hp in range(nh):
                A[iz, hp] += w * J[nxt, hp]
    V = np.zeros((ng, nh))
    for iz in range(ng):
        for h in range(nh):
            acc = 0.0
            for hp in range(nh):
                acc += P[h, hp] * A[iz, hp]
            V[iz, h] = acc
    return V


vt_pd_expect = _jit(_vt_pd_expect_src)


def _vt_greedy_src(V, u_tab, c_tab, lam, alpha):
    # One-step maximization over the on-grid action set y <= x, from the
    # post-decision value table V.  Ties resolve to the largest action.
    ng = V.shape[0]
    nh = V.shape[1]
    J = np.empty((ng, nh))
    pol = np.empty((ng, nh), dtype=np.int64)
    for ix in range(ng):
        for h in range(nh):
            best = -1.0e300
            barg = 0
            for iy in range(ix + 1):
                v = u_tab[ix, iy] - lam * c_tab[h, iy] + alpha * V[ix - iy, h]
                if v >= best:
                    best = v
                    barg = iy
            J[ix, h] = best
            pol[ix, h] = barg
    return J, pol


vt_greedy = _jit(_vt_greedy_src)
