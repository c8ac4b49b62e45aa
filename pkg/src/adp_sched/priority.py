"""Multi-queue scheduling with strictly ordered priorities.

A single transmitter serves N queues whose per-unit utilities are strictly
decreasing in the queue index, so higher-priority data is always worth
transmitting first.  That ordering collapses the N-dimensional value
function into N one-dimensional concave functions: each queue keeps its own
PWL model and the only cross-queue coupling is the convex transmission cost,
which sees the amounts already committed by higher-priority queues.  The
per-queue learning mirrors the single-queue learner; queue i's refresh
treats higher queues as holding just their fresh arrivals, drained by the
amounts z* computed queue by queue.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .env import energy_cost, throughput_utility
from .errors import ConfigError
from .learner import (StepSchedule, _value_left_slope, foresighted_optimize)
from .pwl import PwlConcave, blend_reapproximate


@dataclass(frozen=True)
class PriorityConfig:
    """Queue count, priority weights, and per-queue buffer sizes.

    weights must be strictly decreasing and positive: queue 1 outranks
    queue 2 and so on.  B may be a scalar (shared cap) or one cap per
    queue.
    """
    weights: Sequence[float]
    B: Union[float, Sequence[float]] = 8.0
    grid_step: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ConfigError("weights must be a non-empty vector")
        if np.any(w <= 0) or np.any(np.diff(w) >= 0):
            raise ConfigError(
                "queue weights must be positive and strictly decreasing")
        Bs = np.broadcast_to(
            np.asarray(self.B, dtype=np.float64), w.shape).copy()
        if np.any(Bs <= 0):
            raise ConfigError("buffer sizes must be positive")
        if self.grid_step <= 0:
            raise ConfigError("grid step must be positive")
        cells = Bs / self.grid_step
        if np.any(np.abs(cells - np.round(cells)) > 1e-9):
            raise ConfigError("every B must be a multiple of the grid step")
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_Bs", Bs)

    @property
    def n_queues(self):
        return self._w.size

    @property
    def weight_array(self):
        return self._w

    @property
    def caps(self):
        return self._Bs


class PriorityLearner:
    """Online scheduler for N prioritized queues sharing one transmitter.

    Interface parallels Learner: call learn_step once per slot with the
    realized arrival vector and the fresh channel state; it returns the
    per-queue transmit amounts.
    """

    def __init__(self, config: PriorityConfig, h_reps, alpha, lam=0.0,
                 delta=0.1, refresh_period=1, beta=None, gamma=None,
                 cbar=None, lambda_window=100, cost=None, h0=0,
                 max_evals=10_000):
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
        self.config = config
        self.N = config.n_queues
        self.caps = config.caps
        self.utilities = [throughput_utility(w) for w in config.weight_array]
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
        self.cost = cost or energy_cost
        self.cbar = cbar
        self.cbar_avg = None if cbar is None else (1.0 - self.alpha) * cbar
        self.lambda_window = int(lambda_window)
        self.max_evals = int(max_evals)
        self.grids = [
            config.grid_step * np.arange(
                int(round(b / config.grid_step)) + 1)
            for b in self.caps
        ]
        self.V: List[List[PwlConcave]] = [
            [PwlConcave([0.0, b], [0.0, 0.0]) for _ in range(self.h_reps.size)]
            for b in self.caps
        ]
        self.t = 0
        self.h = int(h0)
        self.post_backlog = np.zeros(self.N)
        self.foresight_ops = 0
        self.n_delta_total = 0
        self.n_batches = 0
        self.last_n_delta = [0] * self.N
        self._win_energy = 0.0
        self._win_count = 0
        self._n_windows = 0

    def priority_schedule(self, x, h):
        """Transmit amounts for backlog vector x, highest priority first.

        Queue i maximizes its own foresighted objective with the cost
        curried on the amounts already granted to queues above it.
        """
        x = np.asarray(x, dtype=np.float64)
        h_gain = float(self.h_reps[h])
        ys = np.empty(self.N)
        off = 0.0
        for i in range(self.N):
            self.foresight_ops += 1
            y, _ = foresighted_optimize(
                float(x[i]), h_gain, self.lam, self.V[i][h], self.alpha,
                self.utilities[i], self.cost, cost_offset=off)
            ys[i] = y
            off += y
        return ys

    def compute_z_star(self, a, h):
        """Drains of the fresh arrivals alone, queue by queue.

        Used when refreshing lower-priority value functions: queue i sees
        queues above it holding nothing but their new arrivals, already
        drained by these amounts.
        """
        a = np.asarray(a, dtype=np.float64)
        h_gain = float(self.h_reps[h])
        zs = np.empty(self.N)
        off = 0.0
        for i in range(self.N):
            xi = min(float(a[i]), float(self.caps[i]))
            self.foresight_ops += 1
            z, _ = foresighted_optimize(
                xi, h_gain, self.lam, self.V[i][h], self.alpha,
                self.utilities[i], self.cost, cost_offset=off)
            zs[i] = z
            off += z
        return zs

    def learn_step(self, a_prev, h_new):
        """Advance one slot; returns the per-queue transmit vector."""
        self.t += 1
        h_new = int(h_new)
        a_prev = np.asarray(a_prev, dtype=np.float64)
        x = np.minimum(self.post_backlog + a_prev, self.caps)
        if self.t % self.refresh_period == 0:
            zs = self.compute_z_star(a_prev, h_new)
            self._batch_update(a_prev, self.h, h_new, zs)
        ys = self.priority_schedule(x, h_new)
        energy = float(self.cost(float(self.h_reps[h_new]), float(ys.sum())))
        if self.cbar_avg is not None:
            self._win_energy += energy
            self._win_count += 1
            if self._win_count >= self.lambda_window:
                self._lambda_update()
        self.post_backlog = x - ys
        self.h = h_new
        return ys

    def _batch_update(self, a, h_old, h_new, zs):
        h_gain = float(self.h_reps[h_new])
        total = 0
        off = 0.0
        const = 0.0
        for i in range(self.N):
            B = float(self.caps[i])
            a_i = float(a[i])
            util = self.utilities[i]
            V_tgt = self.V[i][h_new]  # pre-update snapshot for this queue
            tail = [None, None]
            cost_off = off
            u_const = const

            def ensure_tail():
                if tail[0] is None:
                    self.foresight_ops += 1
                    y_star, jb = foresighted_optimize(
                        B, h_gain, self.lam, V_tgt, self.alpha, util,
                        self.cost, cost_offset=cost_off)
                    s = _value_left_slope(
                        B, y_star, h_gain, self.lam, V_tgt, self.alpha,
                        util, self.cost, cost_offset=cost_off)
                    tail[0], tail[1] = jb, min(s, 0.0)

            def g(x_post):
                q = x_post + a_i
                if q <= B:
                    self.foresight_ops += 1
                    return u_const + foresighted_optimize(
                        q, h_gain, self.lam, V_tgt, self.alpha, util,
                        self.cost, cost_offset=cost_off)[1]
                ensure_tail()
                return u_const + tail[0] + tail[1] * (q - B)

            res = blend_reapproximate(
                self.V[i][h_old], g, self.beta(self.t), self.delta,
                max_evals=self.max_evals,
                grid=self.grids[i] if self.delta == 0.0 else None)
            self.V[i][h_old] = res.pwl
            self.last_n_delta[i] = res.n_evals
            total += res.n_evals
            # queue i+1 sees i's fresh-arrival drain in both cost and the
            # additive utility term (which never moves the inner argmax)
            off += float(zs[i])
            const += float(self.utilities[i](a_i, zs[i]))
        self.n_delta_total += total
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
