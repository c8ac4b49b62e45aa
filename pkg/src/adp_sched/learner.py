"""Online learning of post-decision value functions.

The learner never sees the arrival or channel distributions.  Each slot it
observes the realized arrival and the new channel state, optionally refreshes
the value function of the previous channel state (a batch update over all
backlogs at once, since the observed transition applies to every backlog),
then transmits greedily against the current value model.  The multiplier
that prices energy can be adapted online from a running cost average on a
slower schedule.
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import _kernels
from .env import LinearUtility, delay_utility, energy_cost
from .errors import ConfigError, NumericalAssumptionError
from .pwl import PwlConcave, blend_reapproximate

_LN2 = math.log(2.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class StepSchedule:
    """Maps the update index t >= 1 to a step size in [0, 1].

    Kinds: "harmonic" c/t, "polynomial" c/t**p, "constant" c.  The decaying
    kinds satisfy the usual stochastic-approximation conditions (divergent
    sum, convergent sum of squares) for p in (0.5, 1].
    """
    kind: str
    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("harmonic", "polynomial", "constant"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        hi_ok = self.c <= 1.0
        if self.kind == "constant":
            if not 0.0 <= self.c <= 1.0:
                raise ConfigError("constant step must lie in [0, 1]")
        elif not (0.0 < self.c <= 1.0):
            raise ConfigError("step scale must lie in (0, 1]")
        if self.kind == "polynomial" and not 0.5 < self.p <= 1.0:
            raise ConfigError("polynomial decay needs p in (0.5, 1]")
        if self.kind == "harmonic":
            object.__setattr__(self, "p", 1.0)
        if self.kind == "constant":
            object.__setattr__(self, "p", 0.0)

    def __call__(self, t):
        if t < 1:
            raise ValueError("update index starts at 1")
        if self.kind == "constant":
            return self.c
        return self.c / t ** self.p

    @classmethod
    def parse(cls, text):
        """Parse "harmonic[:c]", "poly:c:p", or "const:c"."""
        parts = str(text).strip().split(":")
        name = parts[0].lower()
        try:
            if name == "harmonic":
                return cls("harmonic", float(parts[1]) if len(parts) > 1 else 1.0)
            if name in ("poly", "polynomial"):
                return cls("polynomial", float(parts[1]), float(parts[2]))
            if name in ("const", "constant"):
                return cls("constant", float(parts[1]))
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad schedule spec {text!r}") from exc
        raise ConfigError(f"unknown schedule kind {name!r}")


def _golden_max(fn, lo, hi, tol=1e-9):
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fn(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fn(x1)
    return 0.5 * (a + b)


def foresighted_optimize(x, h_gain, lam, V_h, alpha, utility=None, cost=None,
                         cost_offset=0.0):
    """Maximize u(x,y) - lam*c(h, y + cost_offset) + alpha*V_h(x-y), y in [0, x].

    Returns (y*, value), ties resolved to the largest y.  cost_offset
    curries transmission already committed by higher-priority traffic into
    the convex cost.  The default linear-utility/exponential-cost pair is
    solved in closed form per segment of V_h; other callables fall back to
    candidate enumeration (segment edges) plus golden-section inside each
    segment, with a sampled concavity check that rejects structurally
    unsuitable objectives.
    """
    utility = utility or delay_utility()
    cost = cost or energy_cost
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    lo, hi = V_h.domain
    if x < -1e-9 or x > hi + 1e-9 * max(1.0, hi):
        raise ValueError(f"backlog {x} outside the value domain [0, {hi}]")
    x = min(max(x, 0.0), hi)
    if isinstance(utility, LinearUtility) and cost is energy_cost:
        y, val = _kernels.foresight_opt(
            V_h.xs, V_h.vs, x, lam, alpha, h_gain,
            utility.y_coeff, utility.x_coeff, 0.0, cost_offset)
        return float(y), float(val)

    def g(y):
        return float(utility(x, y) - lam * cost(h_gain, y + cost_offset)
                     + alpha * V_h.eval(x - y))

    if x == 0.0:
        return 0.0, g(0.0)
    probes = np.linspace(0.0, x, 5)
    pv = [g(p) for p in probes]
    scale = 1e-9 * (1.0 + max(abs(v) for v in pv))
    for i in range(1, 4):
        if pv[i] < 0.5 * (pv[i - 1] + pv[i + 1]) - scale:
            raise NumericalAssumptionError(
                "foresighted objective is not concave on [0, x]")
    edges = [float(x - b) for b in V_h.xs if 0.0 < x - b < x]
    cands = [0.0, x] + edges
    for a, b in zip(sorted(cands), sorted(cands)[1:]):
        if b - a > 1e-9:
            cands.append(_golden_max(g, a, b))
    best_y, best_v = 0.0, -math.inf
    for y in sorted(cands):
        v = g(y)
        if v >= best_v - 1e-12 * (1.0 + abs(best_v)):
            if v > best_v:
                best_v = v
            best_y = y
    return best_y, best_v


def _utility_partials(utility, x, y):
    if isinstance(utility, LinearUtility):
        return utility.x_coeff, utility.y_coeff
    ex = 1e-6 * max(abs(x), 1.0)
    ey = 1e-6 * max(abs(y), 1.0)
    ux = (utility(x, y) - utility(x - ex, y)) / ex
    uy = (utility(x, y) - utility(x, max(y - ey, 0.0))) / max(
        ey, y - max(y - ey, 0.0)) if y > 0 else 0.0
    return float(ux), float(uy)


def _cost_derivative(cost, h_gain, y, offset=0.0):
    if cost is energy_cost:
        return _LN2 * 2.0 ** (y + offset) / h_gain
    q = y + offset
    e = 1e-6 * max(abs(q), 1.0)
    lo = max(q - e, 0.0)
    return float((cost(h_gain, q) - cost(h_gain, lo)) / max(q - lo, 1e-300))


def _value_left_slope(x, y_star, h_gain, lam, V_h, alpha, utility, cost,
                      cost_offset=0.0):
    """Left derivative of x -> J(x, h) at x from the active argmax branch.

    Envelope theorem: when the drain-all constraint binds (y* = x) the
    backlog enters through both utility arguments and the cost; otherwise
    only through utility and the retained-backlog slope of V.
    """
    ux, uy = _utility_partials(utility, x, y_star)
    if y_star >= x - 1e-9 * (1.0 + x):
        return ux + uy - lam * _cost_derivative(cost, h_gain, y_star,
                                                cost_offset)
    return ux + alpha * V_h.left_slope(x - y_star)


class Learner:
    """Single-trajectory online scheduler with periodic value refreshes.

    Call learn_step once per slot with the realized arrival of the previous
    slot and the fresh channel state; it returns the transmit amount.  All
    state (value model, multiplier, counters) lives on the instance.
    """

    def __init__(self, B, h_reps, alpha, lam=0.0, delta=0.1,
                 refresh_period=1, beta=None, gamma=None, cbar=None,
                 lambda_window=100, utility=None, cost=None, grid_step=1.0,
                 h0=0, max_evals=10_000):
        if B <= 0:
            raise ConfigError("buffer size must be positive")
        if not 0.0 <= alpha < 1.0:
            raise ConfigError("discount factor must lie in [0, 1)")
        if delta < 0:
            raise ConfigError("delta must be >= 0")
        if refresh_period < 1 or int(refresh_period) != refresh_period:
            raise ConfigError("refresh period must be a positive integer")
        if lam < 0:
            raise ConfigError("lambda must be >= 0")
        if lambda_window < 1:
            raise ConfigError("lambda window must be >= 1")
        self.B = float(B)
        self.h_reps = np.ascontiguousarray(h_reps, dtype=np.float64)
        if self.h_reps.ndim != 1 or np.any(self.h_reps <= 0):
            raise ConfigError("channel gains must be positive")
        if not 0 <= h0 < self.h_reps.size:
            raise ConfigError("initial channel state out of range")
        self.alpha = float(alpha)
        self.lam = float(lam)
        self.delta = float(delta)
        self.refresh_period = int(refresh_period)
        self.beta = beta or StepSchedule("polynomial", 1.0, 0.6)
        self.gamma = gamma or StepSchedule("harmonic", 1.0)
        self.utility = utility or delay_utility()
        self.cost = cost or energy_cost
        self.max_evals = int(max_evals)
        self.cbar = cbar
        self.cbar_avg = None if cbar is None else (1.0 - self.alpha) * cbar
        self.lambda_window = int(lambda_window)
        n_cells = self.B / grid_step
        if abs(n_cells - round(n_cells)) > 1e-9:
            raise ConfigError("B must be a multiple of the grid step")
        self.grid = grid_step * np.arange(int(round(n_cells)) + 1)
        self.V: List[PwlConcave] = [
            PwlConcave([0.0, self.B], [0.0, 0.0])
            for _ in range(self.h_reps.size)
        ]
        self.t = 0
        self.h = int(h0)
        self.post_backlog = 0.0
        self.foresight_ops = 0
        self.n_delta_total = 0
        self.n_batches = 0
        self.last_n_delta = 0
        self._win_energy = 0.0
        self._win_count = 0
        self._n_windows = 0

    def _foresight(self, x, h, V_h):
        self.foresight_ops += 1
        return foresighted_optimize(x, float(self.h_reps[h]), self.lam, V_h,
                                    self.alpha, self.utility, self.cost)

    def policy(self, x, h):
        """Greedy transmit amount for backlog x in channel state h."""
        return self._foresight(x, h, self.V[h])[0]

    def learn_step(self, a_prev, h_new):
        """Advance one slot; returns the transmit amount y_t.

        a_prev is the arrival realized since the previous decision, h_new
        the fresh channel state.  The refresh (every refresh_period slots)
        re-fits V of the *previous* channel state from the observed
        transition before the new action is computed.
        """
        self.t += 1
        h_new = int(h_new)
        x = min(self.post_backlog + float(a_prev), self.B)
        if self.t % self.refresh_period == 0:
            self._batch_update(float(a_prev), self.h, h_new)
        y, _ = self._foresight(x, h_new, self.V[h_new])
        energy = float(self.cost(float(self.h_reps[h_new]), y))
        if self.cbar_avg is not None:
            self._win_energy += energy
            self._win_count += 1
            if self._win_count >= self.lambda_window:
                self._lambda_update()
        self.post_backlog = x - y
        self.h = h_new
        return y

    def _batch_update(self, a, h_old, h_new):
        # the inner values read a snapshot of V(h_new); when h_old == h_new
        # the refresh still bootstraps from the pre-update function
        V_tgt = self.V[h_new]
        h_gain = float(self.h_reps[h_new])
        B = self.B
        tail = [None, None]  # (value at B, continuation slope), lazily

        def ensure_tail():
            if tail[0] is None:
                self.foresight_ops += 1
                y_star, jb = foresighted_optimize(
                    B, h_gain, self.lam, V_tgt, self.alpha,
                    self.utility, self.cost)
                s = _value_left_slope(B, y_star, h_gain, self.lam, V_tgt,
                                      self.alpha, self.utility, self.cost)
                # never rise past the cap: a nondecreasing J has a flat tail
                tail[0], tail[1] = jb, min(s, 0.0)

        fast = (isinstance(self.utility, LinearUtility)
                and self.cost is energy_cost)
        if fast:
            # hot path: bypass the wrapper's per-call validation
            u_y, u_x = self.utility.y_coeff, self.utility.x_coeff
            fo, Vxs, Vvs = _kernels.foresight_opt, V_tgt.xs, V_tgt.vs
            lam, alpha = self.lam, self.alpha

            def g(x_post):
                q = x_post + a
                if q <= B:
                    self.foresight_ops += 1
                    return fo(Vxs, Vvs, q, lam, alpha, h_gain,
                              u_y, u_x, 0.0, 0.0)[1]
                ensure_tail()
                return tail[0] + tail[1] * (q - B)
        else:
            def g(x_post):
                q = x_post + a
                if q <= B:
                    self.foresight_ops += 1
                    return foresighted_optimize(
                        q, h_gain, self.lam, V_tgt, self.alpha,
                        self.utility, self.cost)[1]
                ensure_tail()
                return tail[0] + tail[1] * (q - B)

        g_batch = None
        if self.delta == 0.0 and fast:

            def g_batch(pts):
                qs = pts + a
                over = qs > B
                out = np.empty(qs.size)
                n_in = int(qs.size - np.count_nonzero(over))
                if n_in:
                    _, js = _kernels.foresight_batch(
                        V_tgt.xs, V_tgt.vs, qs[~over], self.lam, self.alpha,
                        h_gain, u_y, u_x, 0.0, 0.0)
                    out[~over] = js
                    self.foresight_ops += n_in
                if n_in < qs.size:
                    ensure_tail()
                    out[over] = tail[0] + tail[1] * (qs[over] - B)
                return out

        res = blend_reapproximate(
            self.V[h_old], g, self.beta(self.t), self.delta,
            max_evals=self.max_evals,
            grid=self.grid if self.delta == 0.0 else None,
            g_batch=g_batch)
        self.V[h_old] = res.pwl
        self.last_n_delta = res.n_evals
        self.n_delta_total += res.n_evals
        self.n_batches += 1

    def _lambda_update(self):
        self._n_windows += 1
        c_hat = self._win_energy / self._win_count
        step = self.gamma(self._n_windows)
        self.lam = max(self.lam + step * (c_hat - self.cbar_avg), 0.0)
        self._win_energy = 0.0
        self._win_count = 0

    @property
    def mean_n_delta(self):
        return self.n_delta_total / self.n_batches if self.n_batches else 0.0

    @property
    def foresight_ops_per_slot(self):
        return self.foresight_ops / self.t if self.t else 0.0
