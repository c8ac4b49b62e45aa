"""Concave piecewise-linear functions and adaptive sandwich approximation.

A concave function is approximated from below by the chords of sampled
points and from above by extending the neighboring chords into each
interval.  The vertical distance between the two envelopes bounds the
approximation error on each interval, and refinement always bisects the
interval with the largest bound, so an oracle is approximated to a target
accuracy ``delta`` with evaluations concentrated where the function
actually bends.
"""

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConcavityError, DomainError

# Tolerance on slope increases before sampled data is rejected as
# non-concave.  Exact concave oracles stay orders of magnitude below this.
SLOPE_TOL = 1e-9

# Interior breakpoints whose adjacent slopes agree this tightly are
# redundant and get dropped after refinement.
_COLLINEAR_TOL = 1e-12

# Intervals narrower than this fraction of the domain are never bisected.
_MIN_WIDTH_FRAC = 1e-9


def _check_concave(xs, vs):
    slopes = np.diff(vs) / np.diff(xs)
    if slopes.size >= 2:
        worst = float(np.max(np.diff(slopes)))
        if worst > SLOPE_TOL:
            raise ConcavityError(
                f"slope increases by {worst:.3e} (tolerance {SLOPE_TOL:.0e})"
            )
    return slopes


@dataclass(frozen=True)
class Breakpoint:
    x: float
    value: float


class PwlConcave:
    """Immutable concave piecewise-linear function on [xs[0], xs[-1]]."""

    __slots__ = ("xs", "vs")

    def __init__(self, xs, vs):
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        vs = np.ascontiguousarray(vs, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != vs.shape or xs.size < 2:
            raise ValueError("need matching 1-D arrays with at least 2 breakpoints")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(vs))):
            raise ValueError("breakpoints must be finite")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("breakpoint abscissae must be strictly increasing")
        _check_concave(xs, vs)
        xs.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "vs", vs)

    def __setattr__(self, name, value):
        raise AttributeError("PwlConcave is immutable")

    @property
    def domain(self):
        return float(self.xs[0]), float(self.xs[-1])

    @property
    def n_breakpoints(self):
        return int(self.xs.size)

    def breakpoints(self):
        return [Breakpoint(float(x), float(v)) for x, v in zip(self.xs, self.vs)]

    def slopes(self):
        return np.diff(self.vs) / np.diff(self.xs)

    def left_slope(self, x):
        """Slope of the segment ending at x (first segment's at the left end)."""
        a, b = self.xs[0], self.xs[-1]
        if x < a - _MIN_WIDTH_FRAC * (b - a) or x > b + _MIN_WIDTH_FRAC * (b - a):
            raise DomainError(f"{x} outside domain [{a}, {b}]")
        i = int(np.searchsorted(self.xs, x, side="left"))
        i = min(max(i - 1, 0), self.xs.size - 2)
        return float((self.vs[i + 1] - self.vs[i]) / (self.xs[i + 1] - self.xs[i]))

    def right_slope(self, x):
        """Slope of the segment starting at x (last segment's at the right end)."""
        a, b = self.xs[0], self.xs[-1]
        if x < a - _MIN_WIDTH_FRAC * (b - a) or x > b + _MIN_WIDTH_FRAC * (b - a):
            raise DomainError(f"{x} outside domain [{a}, {b}]")
        i = int(np.searchsorted(self.xs, x, side="right"))
        i = min(max(i - 1, 0), self.xs.size - 2)
        return float((self.vs[i + 1] - self.vs[i]) / (self.xs[i + 1] - self.xs[i]))

    def eval(self, x):
        """Evaluate at a scalar or array of points inside the domain."""
        a, b = self.xs[0], self.xs[-1]
        slack = _MIN_WIDTH_FRAC * (b - a)
        pts = np.asarray(x, dtype=np.float64)
        if np.any(pts < a - slack) or np.any(pts > b + slack):
            raise DomainError(f"evaluation outside domain [{a}, {b}]")
        if pts.ndim == 0:
            return float(_kernels.pwl_eval(self.xs, self.vs, float(pts)))
        return np.interp(np.clip(pts, a, b), self.xs, self.vs)

    def __call__(self, x):
        return self.eval(x)

    def __repr__(self):
        a, b = self.domain
        return f"PwlConcave({self.n_breakpoints} breakpoints on [{a:g}, {b:g}])"

    def to_row(self):
        """Serialize as ``x1,v1;x2,v2;...`` with 12 significant digits."""
        return ";".join(f"{x:.12g},{v:.12g}" for x, v in zip(self.xs, self.vs))

    @classmethod
    def from_row(cls, row):
        pairs = [p for p in row.strip().split(";") if p]
        xs = np.empty(len(pairs))
        vs = np.empty(len(pairs))
        for i, pair in enumerate(pairs):
            sx, sv = pair.split(",")
            xs[i] = float(sx)
            vs[i] = float(sv)
        return cls(xs, vs)


@dataclass(frozen=True)
class GapReport:
    max_gap: float
    interval_index: int
    gaps: np.ndarray


class SandwichResult(NamedTuple):
    pwl: PwlConcave
    n_evals: int
    converged: bool
    max_gap: float


def segment_gaps(f: PwlConcave) -> GapReport:
    """Per-interval upper bounds on how far a concave function through the
    breakpoints can rise above the chord interpolation."""
    n = f.n_breakpoints
    gaps = np.empty(n - 1)
    for i in range(n - 1):
        gaps[i] = _kernels.interval_gap(f.xs, f.vs, i)
    idx = int(np.argmax(gaps))  # lowest index on ties
    return GapReport(max_gap=float(gaps[idx]), interval_index=idx, gaps=gaps)


def _prune_collinear(xs, vs):
    keep = [0]
    for i in range(1, len(xs) - 1):
        kl = (vs[i] - vs[keep[-1]]) / (xs[i] - xs[keep[-1]])
        kr = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i])
        if abs(kl - kr) > _COLLINEAR_TOL * (1.0 + abs(kl)):
            keep.append(i)
    keep.append(len(xs) - 1)
    idx = np.array(keep)
    return xs[idx], vs[idx]


def _scalar_gap(xs, vs, i):
    # Same computation as the interval_gap kernel, on python scalars; the
    # refinement loop below calls it on short lists where array round-trips
    # dominate.  Keep the two in sync.
    n = len(xs)
    if n == 2:
        return abs(vs[1] - vs[0])
    k_i = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i])
    b_i = vs[i] - k_i * xs[i]
    has_left = i >= 1
    has_right = i <= n - 3
    if has_left and has_right:
        kl = (vs[i] - vs[i - 1]) / (xs[i] - xs[i - 1])
        bl = vs[i] - kl * xs[i]
        kr = (vs[i + 2] - vs[i + 1]) / (xs[i + 2] - xs[i + 1])
        br = vs[i + 1] - kr * xs[i + 1]
        if abs(kl - kr) < 1e-300:
            return 0.0  # three collinear chords: no slack in this interval
        z = (br - bl) / (kl - kr)
        if z < xs[i]:
            z = xs[i]
        elif z > xs[i + 1]:
            z = xs[i + 1]
        up = min(kl * z + bl, kr * z + br)
        gap = up - (k_i * z + b_i)
    elif has_right:
        kr = (vs[i + 2] - vs[i + 1]) / (xs[i + 2] - xs[i + 1])
        br = vs[i + 1] - kr * xs[i + 1]
        gap = (kr * xs[i] + br) - vs[i]
    else:
        kl = (vs[i] - vs[i - 1]) / (xs[i] - xs[i - 1])
        bl = vs[i] - kl * xs[i]
        gap = (kl * xs[i + 1] + bl) - vs[i + 1]
    return gap if gap > 0.0 else 0.0


def sandwich_approximate(
    oracle: Callable[[float], float],
    domain,
    delta: float,
    max_evals: int = 10_000,
    grid: Optional[Sequence[float]] = None,
    oracle_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SandwichResult:
    """Approximate a concave oracle from below to accuracy ``delta``.

    Starts from the domain endpoints plus the midpoint and repeatedly
    bisects the interval with the largest gap bound until every bound is
    at most ``delta``.
    The returned function never exceeds the oracle and trails it by at
    most the reported ``max_gap`` (== ``delta`` when ``converged``).

    ``delta == 0`` requires ``grid``: the oracle is evaluated on that full
    grid instead of being refined adaptively.  ``oracle_batch``, when
    given, evaluates an array of points in one call (used on the grid
    path).  If ``max_evals`` runs out first, the best approximation so far
    is returned with ``converged=False``.
    """
    a, b = float(domain[0]), float(domain[1])
    if not b > a:
        raise ValueError("domain must have positive width")
    if delta < 0:
        raise ValueError("delta must be >= 0")

    if delta == 0:
        if grid is None:
            raise ValueError("delta == 0 needs an evaluation grid")
        pts = np.ascontiguousarray(grid, dtype=np.float64)
        if pts[0] != a or pts[-1] != b or np.any(np.diff(pts) <= 0):
            raise ValueError("grid must run from domain start to end, increasing")
        if oracle_batch is not None:
            vals = np.asarray(oracle_batch(pts), dtype=np.float64)
        else:
            vals = np.array([oracle(float(p)) for p in pts])
        _check_concave(pts, vals)
        return SandwichResult(PwlConcave(pts, vals), int(pts.size), True, 0.0)

    # Plain lists: the loop inserts one point at a time into short arrays,
    # where numpy's insert machinery costs more than the arithmetic.
    # Two endpoint samples alone admit no upper bound on a concave
    # function (any hump fits through them), so the midpoint is always
    # evaluated before the first convergence check.
    mid0 = 0.5 * (a + b)
    xs = [a, mid0, b]
    vs = [float(oracle(a)), float(oracle(mid0)), float(oracle(b))]
    n_evals = 3
    gaps = [_scalar_gap(xs, vs, 0), _scalar_gap(xs, vs, 1)]
    # Intervals too narrow to bisect are masked out of the refinement.
    open_ = [True, True]
    min_width = _MIN_WIDTH_FRAC * (b - a)

    while True:
        worst = -1.0
        j = 0
        for i in range(len(gaps)):
            if open_[i] and gaps[i] > worst:
                worst = gaps[i]
                j = i
        if worst <= delta:
            converged = max(gaps) <= delta
            break
        if n_evals >= max_evals:
            converged = False
            break
        if xs[j + 1] - xs[j] < min_width:
            open_[j] = False
            continue
        mid = 0.5 * (xs[j] + xs[j + 1])
        fmid = float(oracle(mid))
        n_evals += 1
        xs.insert(j + 1, mid)
        vs.insert(j + 1, fmid)
        gaps.insert(j, 0.0)
        open_.insert(j, True)
        # A new point changes the flanking chords of four intervals.
        for i in range(max(0, j - 1), min(len(gaps), j + 3)):
            gaps[i] = _scalar_gap(xs, vs, i)

    xs = np.array(xs)
    vs = np.array(vs)
    _check_concave(xs, vs)
    pxs, pvs = _prune_collinear(xs, vs)
    return SandwichResult(
        PwlConcave(pxs, pvs), n_evals, converged, float(max(gaps))
    )


def blend_reapproximate(
    f: PwlConcave,
    g_oracle: Callable[[float], float],
    beta: float,
    delta: float,
    max_evals: int = 10_000,
    grid: Optional[Sequence[float]] = None,
    g_batch: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> SandwichResult:
    """Re-approximate the concave blend ``(1-beta)*f + beta*g_oracle``.

    The blend of a concave piecewise-linear function with a concave oracle
    is concave, so the sandwich refinement applies directly.  The reported
    ``n_evals`` counts blend evaluations, i.e. how many points the update
    actually touched.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")

    # The refinement only probes inside f's domain, so f can be read through
    # the raw interpolation kernel without per-call domain checks.
    fxs, fvs = f.xs, f.vs
    if beta == 0.0:
        def blended(x):
            return _kernels.pwl_eval(fxs, fvs, x)
        batch = None if grid is None else (lambda pts: f.eval(pts))
    elif beta == 1.0:
        blended = g_oracle
        batch = g_batch
    else:
        def blended(x):
            return (1.0 - beta) * _kernels.pwl_eval(fxs, fvs, x) + beta * g_oracle(x)
        if g_batch is None:
            batch = None
        else:
            def batch(pts):
                return (1.0 - beta) * f.eval(pts) + beta * np.asarray(g_batch(pts))

    return sandwich_approximate(
        blended, f.domain, delta, max_evals=max_evals, grid=grid,
        oracle_batch=batch,
    )
