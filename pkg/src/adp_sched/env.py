"""System model: buffer, channel, traffic, and per-slot cost/utility.

Time is slotted.  The transmitter holds a backlog x in [0, B], sends y
in [0, x] during the slot, and new arrivals a are added afterwards with
overflow dropped at the buffer cap:

    x' = min(x - y + a, B)

The channel gain is quantized to a finite set of representative values;
transmitting y units in gain state h costs energy (2**y - 1) / h, the
classic exponential rate-power curve scaled by the inverse gain.
"""

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import ConfigError, InvalidActionError

# Eight-region quantizer for the channel power gain (upper region edges and
# in-region representative values).  Mean gain 0.14 under the default fading
# profile.
GAIN_REGION_EDGES = (0.0280, 0.0580, 0.0960, 0.1400, 0.1980, 0.2780, 0.4160,
                     math.inf)
GAIN_REPRESENTATIVES = (0.0131, 0.0418, 0.0753, 0.1157, 0.1661, 0.2343,
                        0.3407, 0.6200)
DEFAULT_MEAN_GAIN = 0.14


@dataclass(frozen=True)
class ChannelStateTable:
    """Quantizer regions (lo, hi] with one representative gain per region."""
    boundaries: Tuple[float, ...] = GAIN_REGION_EDGES
    representatives: Tuple[float, ...] = GAIN_REPRESENTATIVES

    def __post_init__(self):
        b, r = self.boundaries, self.representatives
        if len(b) != len(r) or len(b) < 1:
            raise ConfigError("boundaries and representatives must match")
        if any(x <= 0 for x in r) or any(x <= 0 for x in b):
            raise ConfigError("gains must be positive")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ConfigError("region edges must be strictly increasing")
        if b[-1] != math.inf:
            raise ConfigError("last region must be unbounded")

    @property
    def n_states(self):
        return len(self.representatives)

    def rep_array(self):
        return np.asarray(self.representatives, dtype=np.float64)


def quantize_gain(raw, table: ChannelStateTable):
    """Map a raw nonnegative gain to its region index.

    Regions are half-open (lo, hi]; a value sitting exactly on an edge
    belongs to the region below it.
    """
    if raw < 0:
        raise ValueError("gain must be nonnegative")
    edges = np.asarray(table.boundaries[:-1])
    return int(np.searchsorted(edges, raw, side="left"))


@dataclass(frozen=True)
class SystemParams:
    B: float
    alpha: float

    def __post_init__(self):
        if self.B <= 0:
            raise ConfigError("buffer size must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("discount factor must lie in [0, 1)")


@dataclass(frozen=True)
class SystemState:
    backlog: float
    channel: int


@dataclass(frozen=True)
class PostDecisionState:
    backlog: float
    channel: int


def _check_stochastic_rows(P, what):
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ConfigError(f"{what} must be square")
    if np.any(P < 0):
        raise ConfigError(f"{what} has negative entries")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
        raise ConfigError(f"{what} rows must sum to 1")
    return P


def stationary_distribution(P):
    """Stationary row vector by power iteration (deterministic)."""
    P = np.asarray(P, dtype=np.float64)
    pi = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(2000):
        nxt = pi @ P
        if np.max(np.abs(nxt - pi)) < 1e-14:
            pi = nxt
            break
        pi = nxt
    return pi / pi.sum()


@dataclass(frozen=True)
class FsmcChannel:
    """Finite-state Markov channel over the quantizer's gain states."""
    P: np.ndarray
    table: ChannelStateTable = field(default_factory=ChannelStateTable)

    def __post_init__(self):
        P = _check_stochastic_rows(self.P, "channel matrix")
        if P.shape[0] != self.table.n_states:
            raise ConfigError("channel matrix size must match the gain table")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def n_states(self):
        return self.table.n_states

    def transition_matrix(self):
        return self.P

    def stationary(self):
        return stationary_distribution(self.P)

    def is_aperiodic(self):
        # gcd of observed return times of state 0 under reachability
        M = self.P > 0
        if np.all(np.diag(self.P) > 0):
            return True
        g = 0
        R = np.eye(self.n_states, dtype=bool)
        for k in range(1, 2 * self.n_states + 1):
            R = R @ M
            if R[0, 0]:
                g = math.gcd(g, k)
            if g == 1:
                return True
        return g == 1


@dataclass(frozen=True)
class IidChannel:
    """Memoryless channel: each slot's gain state is drawn independently."""
    probs: np.ndarray
    table: ChannelStateTable = field(default_factory=ChannelStateTable)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size != self.table.n_states:
            raise ConfigError("probability vector must match the gain table")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError("probabilities must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self):
        return self.table.n_states

    def transition_matrix(self):
        return np.tile(self.probs, (self.n_states, 1))

    def stationary(self):
        return np.array(self.probs)

    def is_aperiodic(self):
        return True


def _phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class MovingAverageChannel:
    """Correlated gain driven by a Gaussian moving-average process.

    The latent log-gain is an MA(q) over standard-normal innovations; the
    raw gain scale*exp(z) is calibrated once so that the mean of the
    quantized representative gains equals ``target_mean``, then quantized
    through the table.
    """
    coefficients: Tuple[float, ...] = (0.8, 0.5, 0.2)
    innovation_std: float = 0.5
    target_mean: float = DEFAULT_MEAN_GAIN
    table: ChannelStateTable = field(default_factory=ChannelStateTable)

    def __post_init__(self):
        if self.innovation_std <= 0:
            raise ConfigError("innovation std must be positive")
        if self.target_mean <= 0:
            raise ConfigError("target mean gain must be positive")

    @property
    def n_states(self):
        return self.table.n_states

    def latent_std(self):
        return self.innovation_std * math.sqrt(
            1.0 + sum(c * c for c in self.coefficients))

    def region_probs(self, scale):
        sd = self.latent_std()
        edges = self.table.boundaries
        probs = np.empty(len(edges))
        prev = 0.0
        for i, hi in enumerate(edges):
            if math.isinf(hi):
                cdf = 1.0
            else:
                cdf = _phi(math.log(hi / scale) / sd)
            probs[i] = cdf - prev
            prev = cdf
        return np.clip(probs, 0.0, 1.0)

    def calibrated_scale(self):
        reps = self.table.rep_array()

        def qmean(scale):
            return float(self.region_probs(scale) @ reps)

        lo, hi = 1e-8, 1e4
        if not qmean(lo) <= self.target_mean <= qmean(hi):
            raise ConfigError("target mean gain is not reachable by scaling")
        for _ in range(200):
            mid = math.sqrt(lo * hi)
            if qmean(mid) < self.target_mean:
                lo = mid
            else:
                hi = mid
        return math.sqrt(lo * hi)

    def stationary(self):
        return self.region_probs(self.calibrated_scale())

    def is_aperiodic(self):
        return True


def fsmc_from_doppler(table: ChannelStateTable = None,
                      mean_gain: float = DEFAULT_MEAN_GAIN,
                      doppler_hz: float = 10.0,
                      slot_s: float = 0.01) -> FsmcChannel:
    """Birth-death channel matrix from level-crossing rates.

    The power gain is exponential with the given mean; crossings of each
    region edge per slot give the adjacent-state transition probabilities,
    everything else stays put.
    """
    if table is None:
        table = ChannelStateTable()
    if doppler_hz <= 0 or slot_s <= 0 or mean_gain <= 0:
        raise ConfigError("doppler, slot length, and mean gain must be positive")
    edges = (0.0,) + table.boundaries
    n = table.n_states
    pi = np.empty(n)
    for i in range(n):
        lo, hi = edges[i], edges[i + 1]
        hi_cdf = 1.0 if math.isinf(hi) else 1.0 - math.exp(-hi / mean_gain)
        pi[i] = hi_cdf - (1.0 - math.exp(-lo / mean_gain))

    def crossing_rate(gamma):
        return math.sqrt(2.0 * math.pi * gamma / mean_gain) * doppler_hz * \
            math.exp(-gamma / mean_gain)

    P = np.zeros((n, n))
    for i in range(n):
        up = crossing_rate(edges[i + 1]) * slot_s / pi[i] if i < n - 1 else 0.0
        down = crossing_rate(edges[i]) * slot_s / pi[i] if i > 0 else 0.0
        total = up + down
        if total > 1.0:  # fast fading: keep the row a distribution
            up, down = up / total, down / total
            total = 1.0
        P[i, i] = 1.0 - total
        if i < n - 1:
            P[i, i + 1] = up
        if i > 0:
            P[i, i - 1] = down
    return FsmcChannel(P=P, table=table)


def channel_step(model, current, rng):
    """Draw the next gain state index.

    Works for the Markov and memoryless variants; the moving-average
    variant carries latent history, use ``generate_channel_path``.
    """
    if isinstance(model, FsmcChannel):
        if not 0 <= current < model.n_states:
            raise ValueError("channel state out of range")
        cum = np.cumsum(model.P[current])
        return int(np.searchsorted(cum, rng.random(), side="right"))
    if isinstance(model, IidChannel):
        cum = np.cumsum(model.probs)
        return int(np.searchsorted(cum, rng.random(), side="right"))
    raise TypeError("single-step sampling needs a Markov or memoryless channel")


def generate_channel_path(model, h0, n_steps, rng):
    """Gain-state indices h[0..n_steps], h[0] == h0 where meaningful."""
    out = np.empty(n_steps + 1, dtype=np.int64)
    if isinstance(model, FsmcChannel):
        if not 0 <= h0 < model.n_states:
            raise ValueError("initial channel state out of range")
        cum = np.cumsum(model.P, axis=1)
        u = rng.random(n_steps)
        h = int(h0)
        out[0] = h
        for t in range(n_steps):
            h = int(np.searchsorted(cum[h], u[t], side="right"))
            out[t + 1] = h
        return out
    if isinstance(model, IidChannel):
        cum = np.cumsum(model.probs)
        out[0] = h0
        out[1:] = np.searchsorted(cum, rng.random(n_steps), side="right")
        return out
    if isinstance(model, MovingAverageChannel):
        q = len(model.coefficients)
        e = rng.normal(0.0, model.innovation_std, size=n_steps + 1 + q)
        kernel = np.concatenate([[1.0], np.asarray(model.coefficients)])
        z = np.convolve(e, kernel, mode="valid")[: n_steps + 1]
        raw = model.calibrated_scale() * np.exp(z)
        edges = np.asarray(model.table.boundaries[:-1])
        return np.searchsorted(edges, raw, side="left").astype(np.int64)
    raise TypeError(f"unknown channel model {type(model).__name__}")


@dataclass(frozen=True)
class PoissonTraffic:
    """Poisson arrivals clipped at a cap (the cap must fit the buffer)."""
    rate: float
    cap: int

    def __post_init__(self):
        if self.rate < 0:
            raise ConfigError("arrival rate must be >= 0")
        if self.cap < 0:
            raise ConfigError("arrival cap must be >= 0")

    @property
    def mean(self):
        # clipping mass is negligible for cap >> rate but stay exact
        return float(np.arange(self.cap + 1) @ self.pmf())

    def pmf(self):
        """Finite pmf of min(Poisson(rate), cap) over 0..cap."""
        p = np.empty(self.cap + 1)
        p[0] = math.exp(-self.rate)
        for k in range(1, self.cap + 1):
            p[k] = p[k - 1] * self.rate / k
        p[self.cap] = max(1.0 - p[:-1].sum(), 0.0)
        return p


@dataclass(frozen=True)
class DeterministicTraffic:
    """The same number of units arrives every slot."""
    units: int

    def __post_init__(self):
        if self.units < 0:
            raise ConfigError("arrival units must be >= 0")

    @property
    def mean(self):
        return float(self.units)

    @property
    def cap(self):
        return self.units

    def pmf(self):
        p = np.zeros(self.units + 1)
        p[self.units] = 1.0
        return p


def arrival_sample(model, rng):
    if isinstance(model, PoissonTraffic):
        return int(min(rng.poisson(model.rate), model.cap))
    if isinstance(model, DeterministicTraffic):
        return model.units
    raise TypeError(f"unknown traffic model {type(model).__name__}")


def generate_arrival_path(model, n_steps, rng):
    if isinstance(model, PoissonTraffic):
        return np.minimum(rng.poisson(model.rate, size=n_steps),
                          model.cap).astype(np.int64)
    if isinstance(model, DeterministicTraffic):
        return np.full(n_steps, model.units, dtype=np.int64)
    raise TypeError(f"unknown traffic model {type(model).__name__}")


def buffer_update(x, y, a, B):
    """Next backlog min(x - y + a, B); rejects infeasible transmissions."""
    if y < -1e-9 or y > x + 1e-9:
        raise InvalidActionError(f"transmission {y} infeasible for backlog {x}")
    y = min(max(y, 0.0), x)
    return min(x - y + a, B)


def energy_cost(h_rep, y):
    """Energy to move y units through gain h_rep in one slot."""
    return (np.exp2(y) - 1.0) / h_rep


@dataclass(frozen=True)
class LinearUtility:
    """Per-slot utility  y_coeff * y + x_coeff * x  (concave, supermodular)."""
    y_coeff: float
    x_coeff: float

    def __call__(self, x, y):
        return self.y_coeff * y + self.x_coeff * x


def delay_utility():
    """Penalize the backlog left after transmitting: -(x - y)."""
    return LinearUtility(y_coeff=1.0, x_coeff=-1.0)


def throughput_utility(weight=1.0):
    """Reward units actually served this slot: weight * y for y <= x."""
    return LinearUtility(y_coeff=float(weight), x_coeff=0.0)


def priority_utility(weights, xs, ys):
    """Weighted served units across queues: sum_i w_i * min(x_i, y_i).

    Weights must be strictly decreasing: the ordering is what makes the
    per-queue decomposition well-defined.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(np.diff(w) >= 0) or np.any(w <= 0):
        raise ConfigError("queue weights must be positive and strictly decreasing")
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != w.shape or ys.shape != w.shape:
        raise ValueError("weights, backlogs, transmissions must align")
    return float(w @ np.minimum(xs, ys))
