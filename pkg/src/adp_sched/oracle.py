"""Exact and approximate dynamic-programming solvers on a discretized model.

Two interchangeable value-function forms are supported: dense tables over
the (backlog grid x channel state) lattice, and per-channel concave
piecewise-linear functions refined by the sandwich operator.  Tables carry
the exact capped-buffer dynamics with no shape assumptions; the PWL form
trades the cap's tail behavior for certified concavity (see the overflow
continuation note below) and is what the online learner mirrors.

Overflow continuation: the pre-arrival value J composed with the buffer cap,
J(min(x + a, B)), flattens at x = B - a.  When J is nondecreasing that
composition is still concave and the flat tail is kept verbatim; when J is
decreasing at B (backlog-penalizing utilities) the flat tail would introduce
a convex kink, so the PWL operators instead continue J past B linearly with
its left slope at B.  The continuation is exact whenever the composition was
concave to begin with, and otherwise is the unique linear completion that
preserves concavity.
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Tuple

import numpy as np

from . import _kernels
from .env import (FsmcChannel, IidChannel, delay_utility, energy_cost,
                  stationary_distribution)
from .errors import ConcavityError, ConfigError
from .pwl import PwlConcave, sandwich_approximate

_SLOPE_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteMdp:
    """Scheduling MDP on the backlog grid 0, g, 2g, ..., B.

    Arrival pmf entry k is the probability of k grid steps arriving in one
    slot.  Utility and cost are pluggable callables; both are tabulated on
    the grid once, so table sweeps stay cheap for any choice.
    """
    B: float
    h_reps: np.ndarray
    P: np.ndarray
    arrival_pmf: np.ndarray
    lam: float = 0.0
    alpha: float = 0.95
    g: float = 1.0
    utility: Callable = None
    cost: Callable = None

    def __post_init__(self):
        if self.g <= 0:
            raise ConfigError("grid step must be positive")
        n_cells = self.B / self.g
        if abs(n_cells - round(n_cells)) > 1e-9 or self.B <= 0:
            raise ConfigError("B must be a positive multiple of the grid step")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError("discount factor must lie in [0, 1)")
        object.__setattr__(self, "utility", self.utility or delay_utility())
        object.__setattr__(self, "cost", self.cost or energy_cost)

        h = np.ascontiguousarray(self.h_reps, dtype=np.float64)
        if h.ndim != 1 or h.size < 1 or np.any(h <= 0):
            raise ConfigError("channel gains must be positive")
        P = np.ascontiguousarray(self.P, dtype=np.float64)
        if P.shape != (h.size, h.size):
            raise ConfigError("channel matrix shape must match gains")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
            raise ConfigError("channel matrix rows must be distributions")
        pmf = np.ascontiguousarray(self.arrival_pmf, dtype=np.float64)
        n_x = int(round(n_cells)) + 1
        if pmf.ndim != 1 or pmf.size < 1 or pmf.size > n_x:
            raise ConfigError("arrival pmf must fit on the grid (cap <= B)")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
            raise ConfigError("arrival pmf must be a distribution")
        for arr in (h, P, pmf):
            arr.setflags(write=False)
        object.__setattr__(self, "h_reps", h)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "arrival_pmf", pmf)

        xs = self.g * np.arange(n_x)
        u_tab = np.empty((n_x, n_x))
        for iy in range(n_x):
            u_tab[:, iy] = self.utility(xs, xs[iy])
        c_tab = np.empty((h.size, n_x))
        for ih in range(h.size):
            c_tab[ih] = self.cost(h[ih], xs)
        for arr in (xs, u_tab, c_tab):
            arr.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "u_tab", u_tab)
        object.__setattr__(self, "c_tab", c_tab)

    @property
    def n_x(self):
        return self.xs.size

    @property
    def n_h(self):
        return self.h_reps.size

    def with_lambda(self, lam):
        return dataclasses.replace(self, lam=float(lam))

    @classmethod
    def from_models(cls, params, channel, traffic, lam=0.0, utility=None,
                    cost=None, grid_step=1.0):
        if not isinstance(channel, (FsmcChannel, IidChannel)):
            raise ConfigError("solver needs a Markov or memoryless channel")
        pmf = traffic.pmf()
        if grid_step != 1.0:
            # arrival pmfs are tabulated in integer units
            if (pmf > 0).sum() == 1:
                units = int(np.flatnonzero(pmf > 0)[0])
                if units % int(grid_step) == 0:
                    sparse = np.zeros(units // int(grid_step) + 1)
                    sparse[-1] = 1.0
                    pmf = sparse
                else:
                    raise ConfigError("arrival units must align with the grid")
            else:
                raise ConfigError("random arrivals require grid step 1")
        return cls(B=params.B, h_reps=channel.table.rep_array(),
                   P=channel.transition_matrix(), arrival_pmf=pmf,
                   lam=lam, alpha=params.alpha, g=grid_step,
                   utility=utility, cost=cost)


def default_initial_state(mdp) -> Tuple[int, int]:
    """(backlog index 0, most likely channel state) used by the λ search."""
    pi = stationary_distribution(mdp.P)
    return 0, int(np.argmax(pi))


class ExactSolution(NamedTuple):
    V: np.ndarray          # post-decision values, (n_x, n_h)
    J: np.ndarray          # pre-decision values, (n_x, n_h)
    policy: np.ndarray     # grid index of y* per (x index, h)
    converged: bool
    n_iters: int


class ApproxSolution(NamedTuple):
    V: List[PwlConcave]    # one per channel state
    converged: bool
    n_iters: int
    n_evals: int


class LagrangeResult(NamedTuple):
    lam: float
    policy: np.ndarray
    cost: float
    value: float
    converged: bool
    slack: bool
    bracket: Tuple[float, float]
    n_iters: int


def _check_table_concave(mdp, V):
    V = np.asarray(V, dtype=np.float64)
    if V.shape != (mdp.n_x, mdp.n_h):
        raise ValueError("value table shape mismatch")
    if mdp.n_x >= 3:
        slopes = np.diff(V, axis=0) / mdp.g
        worst = float(np.max(np.diff(slopes, axis=0)))
        if worst > _SLOPE_TOL:
            raise ConcavityError(
                f"table slope increases by {worst:.3e} along the backlog axis")
    return np.ascontiguousarray(V)


def bellman_normal_iterate(mdp, J):
    """One synchronous sweep of the pre-decision Bellman operator."""
    J = np.ascontiguousarray(J, dtype=np.float64)
    V = _kernels.vt_pd_expect(J, mdp.P, mdp.arrival_pmf)
    J_new, _ = _kernels.vt_greedy(V, mdp.u_tab, mdp.c_tab, mdp.lam, mdp.alpha)
    return J_new


def _sweep(mdp, V, lam):
    J, pol = _kernels.vt_greedy(V, mdp.u_tab, mdp.c_tab, lam, mdp.alpha)
    return _kernels.vt_pd_expect(J, mdp.P, mdp.arrival_pmf), J, pol


def pd_operator_T(mdp, V, delta=0.0, max_evals=20000):
    """One application of the post-decision operator.

    Tables map to tables (exact capped dynamics); per-channel PwlConcave
    lists map to re-approximated PwlConcave lists (grid actions, overflow
    continuation, sandwich tolerance ``delta``).
    """
    if isinstance(V, np.ndarray):
        Vc = _check_table_concave(mdp, V)
        out, _, _ = _sweep(mdp, Vc, mdp.lam)
        return out
    Vs = list(V)
    if len(Vs) != mdp.n_h or not all(isinstance(f, PwlConcave) for f in Vs):
        raise ConcavityError("expected one PwlConcave per channel state")
    targets = _grid_backup(mdp, Vs)
    return [
        _approximate_pd_slice(mdp, targets, h, delta, max_evals)[0]
        for h in range(mdp.n_h)
    ]


def _grid_backup(mdp, Vs):
    """Pre-arrival values on the grid from per-channel PwlConcave inputs.

    Reads V only at grid points, so grid actions make the backup identical
    to one table sweep.  Each output column is a concave sequence (max-plus
    convolution of the concave reward-in-y with the concave V preserves
    discrete concavity), returned as its concave interpolant together with
    the continuation slope past B: the last chord clipped at zero, which is
    the steepest linear tail that keeps the junction concave and reduces to
    the exact flat cap tail whenever values are nondecreasing.
    """
    Vtab = np.empty((mdp.n_x, mdp.n_h))
    for h in range(mdp.n_h):
        Vtab[:, h] = Vs[h].eval(mdp.xs)
    Jtab, _ = _kernels.vt_greedy(Vtab, mdp.u_tab, mdp.c_tab, mdp.lam,
                                 mdp.alpha)
    out = []
    for h in range(mdp.n_h):
        f = PwlConcave(mdp.xs, Jtab[:, h])
        out.append((f, float(Jtab[-1, h]), min(f.left_slope(mdp.B), 0.0)))
    return out


def _approximate_pd_slice(mdp, targets, h, delta, max_evals):
    """A_delta of the post-decision expectation for channel state h."""
    B = float(mdp.B)
    row = mdp.P[h]
    hs = [int(h2) for h2 in np.flatnonzero(row > 0)]
    arrivals = [(ia * mdp.g, p) for ia, p in enumerate(mdp.arrival_pmf)
                if p > 0]

    def j_mix(q):
        tot = 0.0
        for h2 in hs:
            f, jb, s = targets[h2]
            tot += row[h2] * (f.eval(q) if q <= B else jb + s * (q - B))
        return tot

    def oracle(x_post):
        return sum(p * j_mix(x_post + a) for a, p in arrivals)

    res = sandwich_approximate(oracle, (0.0, B), delta,
                               max_evals=max_evals,
                               grid=mdp.xs if delta == 0.0 else None)
    return res.pwl, res.n_evals


def solve_exact(mdp, tol=1e-8, max_iters=100000) -> ExactSolution:
    """Value iteration on tables to a sup-norm fixed point."""
    return _value_iterate(mdp, mdp.lam, tol, max_iters)


def _value_iterate(mdp, lam, tol=1e-8, max_iters=100000):
    V = np.zeros((mdp.n_x, mdp.n_h))
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        V_new, _, _ = _sweep(mdp, V, lam)
        diff = float(np.max(np.abs(V_new - V)))
        V = V_new
        if diff < tol:
            converged = True
            break
    _, J, pol = _sweep(mdp, V, lam)
    return ExactSolution(V=V, J=J, policy=pol, converged=converged, n_iters=it)


def solve_approx(mdp, delta, tol=1e-8, max_iters=500, v0=None,
                 max_evals=20000) -> ApproxSolution:
    """Iterates A_delta composed with the post-decision operator from V0.

    With delta = 0 every grid point is evaluated, reproducing table value
    iteration exactly on the grid.  For delta > 0 successive iterates need
    not contract below delta-scale wiggle, so convergence is declared on
    sup-change < tol over a probe grid, with a stall cutoff.
    """
    if delta < 0:
        raise ConfigError("delta must be >= 0")
    B = float(mdp.B)
    if v0 is None:
        Vs = [PwlConcave([0.0, B], [0.0, 0.0]) for _ in range(mdp.n_h)]
    else:
        Vs = list(v0)
        if len(Vs) != mdp.n_h:
            raise ConfigError("v0 must provide one function per channel state")
    probe = np.linspace(0.0, B, 4 * mdp.n_x + 1)
    total_evals = 0
    converged = False
    best_diff = math.inf
    stall = 0
    it = 0
    for it in range(1, max_iters + 1):
        targets = _grid_backup(mdp, Vs)
        new = []
        for h in range(mdp.n_h):
            pwl, n_ev = _approximate_pd_slice(mdp, targets, h, delta,
                                              max_evals)
            new.append(pwl)
            total_evals += n_ev
        diff = max(float(np.max(np.abs(new[h].eval(probe) - Vs[h].eval(probe))))
                   for h in range(mdp.n_h))
        Vs = new
        if diff < tol:
            converged = True
            break
        if diff < best_diff - tol:
            best_diff = diff
            stall = 0
        else:
            stall += 1
            if stall >= 30:  # bouncing inside the delta ball
                break
    return ApproxSolution(V=Vs, converged=converged, n_iters=it,
                          n_evals=total_evals)


def _policy_reward(mdp, policy, kind):
    pol = np.asarray(policy, dtype=np.int64)
    if pol.shape != (mdp.n_x, mdp.n_h):
        raise ValueError("policy table shape mismatch")
    cols = np.arange(mdp.n_h)[None, :]
    rows = np.arange(mdp.n_x)[:, None]
    if np.any(pol < 0) or np.any(pol > rows):
        raise ValueError("policy transmits more than the backlog")
    u = mdp.u_tab[rows, pol]
    c = mdp.c_tab[cols, pol]
    if kind == "cost":
        return pol, c
    if kind == "utility":
        return pol, u
    if kind == "lagrangian":
        return pol, u - mdp.lam * c
    raise ValueError(f"unknown evaluation kind {kind!r}")


def policy_value(mdp, policy, s0, kind="lagrangian", tol=1e-10,
                 max_iters=200000):
    """Exact discounted evaluation of a grid policy from state s0."""
    pol, r = _policy_reward(mdp, policy, kind)
    cols = np.arange(mdp.n_h)[None, :]
    post = np.arange(mdp.n_x)[:, None] - pol
    W = np.zeros((mdp.n_x, mdp.n_h))
    for _ in range(max_iters):
        Vpd = _kernels.vt_pd_expect(W, mdp.P, mdp.arrival_pmf)
        W_new = r + mdp.alpha * Vpd[post, cols]
        diff = float(np.max(np.abs(W_new - W)))
        W = W_new
        if diff < tol:
            break
    ix, ih = s0
    return float(W[ix, ih])


def policy_cost(mdp, policy, s0, tol=1e-10):
    """Discounted energy of a grid policy from s0 (the constraint side)."""
    return policy_value(mdp, policy, s0, kind="cost", tol=tol)


def lagrange_step(lam, gamma, cost, cbar):
    """One projected subgradient step on the multiplier."""
    return max(lam + gamma * (cost - cbar), 0.0)


def lagrange_search(mdp, cbar, s0=None, gamma=None, tol=1e-3,
                    max_iters=300) -> LagrangeResult:
    """Subgradient iteration on λ with exact policy evaluation.

    ``gamma`` maps the iteration number n >= 1 to the step size (default
    1/n).  Stops when the discounted cost meets the budget within tol, or
    when the constraint is slack at λ = 0.  If the budget sits across a
    policy jump the search reports the tightest bracketing multipliers.
    """
    if cbar <= 0:
        raise ConfigError("cost budget must be positive")
    if s0 is None:
        s0 = default_initial_state(mdp)
    if gamma is None:
        gamma = lambda n: 1.0 / n
    lam = float(mdp.lam)
    lo, hi = 0.0, math.inf   # cost > cbar at lo side, < cbar at hi side
    best = None
    for n in range(1, max_iters + 1):
        sol = _value_iterate(mdp, lam)
        cost = policy_value(mdp, sol.policy, s0, kind="cost")
        value = policy_value(mdp, sol.policy, s0, kind="utility")
        if best is None or abs(cost - cbar) < abs(best[2] - cbar):
            best = (lam, sol.policy, cost, value)
        if abs(cost - cbar) <= tol:
            return LagrangeResult(lam=lam, policy=sol.policy, cost=cost,
                                  value=value, converged=True, slack=False,
                                  bracket=(lam, lam), n_iters=n)
        if lam == 0.0 and cost < cbar:
            return LagrangeResult(lam=0.0, policy=sol.policy, cost=cost,
                                  value=value, converged=True, slack=True,
                                  bracket=(0.0, 0.0), n_iters=n)
        if cost > cbar:
            lo = max(lo, lam)
        else:
            hi = min(hi, lam)
        lam = lagrange_step(lam, gamma(n), cost, cbar)
    lam_b, pol_b, cost_b, value_b = best
    return LagrangeResult(lam=lam_b, policy=pol_b, cost=cost_b, value=value_b,
                          converged=False, slack=False, bracket=(lo, hi),
                          n_iters=max_iters)
