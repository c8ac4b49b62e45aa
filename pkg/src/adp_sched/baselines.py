"""Comparison schedulers: drift-plus-penalty and tabular Q-learning.

Neither keeps a value approximation over the backlog.  The stability
scheduler trades a quadratic backlog drift against the energy bill slot
by slot, steering the long-run energy with a virtual queue; Q-learning
maintains a plain state-action table and touches exactly one entry per
transition.  Both expose the same learn_step(arrival, channel) surface
as the value learners so comparative runs can share a driver loop.
"""

import numpy as np

from .env import delay_utility, energy_cost
from .errors import ConfigError
from .learner import StepSchedule

__all__ = ["StabilityScheduler", "QLearningScheduler"]


def _check_channel(h_reps):
    h = np.ascontiguousarray(h_reps, dtype=np.float64)
    if h.ndim != 1 or h.size < 1 or np.any(h <= 0):
        raise ConfigError("channel gains must be positive")
    h.setflags(write=False)
    return h


class StabilityScheduler:
    """Drift-plus-penalty scheduling against a virtual energy queue.

    Each slot picks y on the action grid minimizing

        lam_t * c(h, y) + (x - y)**2 - x**2

    i.e. energy priced at lam_t plus the change in the quadratic
    Lyapunov value of the backlog.  lam_t is a fixed multiplier when
    `lam` is given; otherwise it is Q_t / v_param with the virtual queue
    Q_t absorbing the energy spent above the per-slot budget:

        Q_{t+1} = max(Q_t + c_t - (1 - alpha) * cbar, 0)

    Larger v_param weights the drift more, spending more energy for less
    backlog; sweeping it traces the trade-off curve.
    """

    def __init__(self, B, h_reps, alpha=0.95, cbar=None, lam=None,
                 v_param=1.0, grid_step=1.0, cost=None, h0=0):
        if grid_step <= 0:
            raise ConfigError("grid step must be positive")
        cells = B / grid_step
        if B <= 0 or abs(cells - round(cells)) > 1e-9:
            raise ConfigError("B must be a positive multiple of the grid step")
        if not 0.0 <= alpha < 1.0:
            raise ConfigError("discount factor must lie in [0, 1)")
        if (lam is None) == (cbar is None):
            raise ConfigError(
                "need exactly one of a fixed multiplier or an energy budget")
        if lam is not None and lam < 0:
            raise ConfigError("multiplier must be >= 0")
        if cbar is not None and cbar <= 0:
            raise ConfigError("energy budget must be positive")
        if v_param <= 0:
            raise ConfigError("trade-off parameter must be positive")
        self.B = float(B)
        self.h_reps = _check_channel(h_reps)
        if not 0 <= h0 < self.h_reps.size:
            raise ConfigError("initial channel index out of range")
        self.alpha = float(alpha)
        self.lam = None if lam is None else float(lam)
        self.cbar_avg = None if cbar is None else (1.0 - alpha) * float(cbar)
        self.v_param = float(v_param)
        self.grid_step = float(grid_step)
        self.cost = cost or energy_cost
        self.Q = 0.0
        self.post_backlog = 0.0
        self.h = int(h0)
        self.t = 0

    @property
    def lam_t(self):
        if self.lam is not None:
            return self.lam
        return self.Q / self.v_param

    def policy(self, x, h):
        """Grid argmin of the one-slot objective; ties go to the largest y."""
        x = float(x)
        if not 0.0 <= x <= self.B * (1 + 1e-12):
            raise ValueError("backlog outside [0, B]")
        g = self.grid_step
        ys = g * np.arange(int(np.floor(x / g + 1e-9)) + 1)
        objs = (self.lam_t * np.asarray(self.cost(float(self.h_reps[h]), ys),
                                        dtype=np.float64)
                + (x - ys) ** 2 - x * x)
        best = np.inf
        y = 0.0
        for i in range(ys.size):
            if objs[i] <= best:
                best = objs[i]
                y = float(ys[i])
        return y

    def learn_step(self, a_prev, h_new):
        """Advance one slot; returns the transmit amount y_t."""
        self.t += 1
        h_new = int(h_new)
        x = min(self.post_backlog + float(a_prev), self.B)
        y = self.policy(x, h_new)
        if self.cbar_avg is not None:
            energy = float(self.cost(float(self.h_reps[h_new]), y))
            self.Q = max(self.Q + energy - self.cbar_avg, 0.0)
        self.post_backlog = x - y
        self.h = h_new
        return y


class QLearningScheduler:
    """Tabular Q-learning on the integer backlog and action grids.

    One table entry Q(x, h, y) is refreshed per transition:

        Q <- (1 - b_n) Q + b_n (u - lam c + alpha max_y' Q(x', h', y'))

    with b_n a step-size schedule in the pair's visit count.  Utilities
    and costs are known, so the table only has to learn the dynamics.
    Exploration is epsilon-greedy with epsilon_t = min(1, eps0/sqrt(t));
    the greedy arm and all ties resolve to the largest feasible y.  The
    multiplier follows the same windowed budget rule as the value
    learner when cbar is given.
    """

    def __init__(self, B, h_reps, alpha=0.95, lam=0.0, cbar=None,
                 lambda_window=100, beta=None, gamma=None, epsilon0=1.0,
                 utility=None, cost=None, h0=0, rng=None):
        if B <= 0 or abs(B - round(B)) > 1e-9:
            raise ConfigError("B must be a positive integer")
        if not 0.0 <= alpha < 1.0:
            raise ConfigError("discount factor must lie in [0, 1)")
        if lam < 0:
            raise ConfigError("multiplier must be >= 0")
        if cbar is not None and cbar <= 0:
            raise ConfigError("energy budget must be positive")
        if lambda_window < 1:
            raise ConfigError("multiplier window must be >= 1 slots")
        if epsilon0 < 0:
            raise ConfigError("exploration scale must be >= 0")
        self.B = int(round(B))
        self.h_reps = _check_channel(h_reps)
        if not 0 <= h0 < self.h_reps.size:
            raise ConfigError("initial channel index out of range")
        self.alpha = float(alpha)
        self.lam = float(lam)
        self.cbar_avg = None if cbar is None else (1.0 - alpha) * float(cbar)
        self.lambda_window = int(lambda_window)
        self.beta = beta or StepSchedule(kind="polynomial", c=1.0, p=0.6)
        self.gamma = gamma or StepSchedule(kind="harmonic")
        self.epsilon0 = float(epsilon0)
        self.utility = utility or delay_utility()
        self.cost = cost or energy_cost
        self.rng = rng if rng is not None else np.random.default_rng()

        n_x = self.B + 1
        n_h = self.h_reps.size
        xs = np.arange(n_x, dtype=np.float64)
        self.u_tab = np.empty((n_x, n_x))
        for iy in range(n_x):
            self.u_tab[:, iy] = self.utility(xs, xs[iy])
        self.c_tab = np.empty((n_h, n_x))
        for ih in range(n_h):
            self.c_tab[ih] = self.cost(float(self.h_reps[ih]), xs)
        self.Q = np.zeros((n_x, n_h, n_x))
        self.visits = np.zeros((n_x, n_h, n_x), dtype=np.int64)

        self.post_backlog = 0
        self.h = int(h0)
        self.t = 0
        self._pending = None
        self._win_energy = 0.0
        self._win_count = 0
        self._n_windows = 0

    @property
    def epsilon(self):
        if self.t < 1:
            return 1.0
        return min(1.0, self.epsilon0 / np.sqrt(self.t))

    def policy(self, x, h):
        """Greedy transmit amount; ties resolve to the largest y."""
        x = int(x)
        row = self.Q[x, h, :x + 1]
        return x - int(np.argmax(row[::-1]))

    def greedy_table(self):
        """Greedy y index per (backlog, channel), for exact evaluation."""
        pol = np.empty((self.B + 1, self.h_reps.size), dtype=np.int64)
        for x in range(self.B + 1):
            for h in range(self.h_reps.size):
                pol[x, h] = self.policy(x, h)
        return pol

    def learn_step(self, a_prev, h_new):
        """Advance one slot; returns the transmit amount y_t."""
        self.t += 1
        h_new = int(h_new)
        a = float(a_prev)
        if abs(a - round(a)) > 1e-9:
            raise ValueError("arrivals must land on the integer grid")
        x = min(self.post_backlog + int(round(a)), self.B)

        if self._pending is not None:
            px, ph, py = self._pending
            self.visits[px, ph, py] += 1
            b = self.beta(int(self.visits[px, ph, py]))
            target = (self.u_tab[px, py] - self.lam * self.c_tab[ph, py]
                      + self.alpha * float(np.max(self.Q[x, h_new, :x + 1])))
            self.Q[px, ph, py] = (1.0 - b) * self.Q[px, ph, py] + b * target

        if self.rng.random() < self.epsilon:
            y = int(self.rng.integers(0, x + 1))
        else:
            y = self.policy(x, h_new)
        self._pending = (x, h_new, y)

        if self.cbar_avg is not None:
            self._win_energy += float(self.c_tab[h_new, y])
            self._win_count += 1
            if self._win_count >= self.lambda_window:
                self._n_windows += 1
                c_hat = self._win_energy / self._win_count
                self.lam = max(
                    self.lam + self.gamma(self._n_windows)
                    * (c_hat - self.cbar_avg), 0.0)
                self._win_energy = 0.0
                self._win_count = 0

        self.post_backlog = x - y
        self.h = h_new
        return float(y)
