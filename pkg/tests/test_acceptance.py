"""Acceptance suite for the shipped guarantees, one check per test.

Each test prints a single numbered PASS line with the measured margin;
a failed assertion marks the corresponding guarantee red.  Tolerances
are pinned next to the checks they guard.
"""

import numpy as np
import pytest

import reference
from adp_sched.baselines import QLearningScheduler
from adp_sched.env import LinearUtility, PoissonTraffic
from adp_sched.harness import load_config, render_csv, run, sweep
from adp_sched.learner import Learner
from adp_sched.oracle import (DiscreteMdp, default_initial_state,
                              lagrange_search, policy_value, solve_approx,
                              solve_exact)
from adp_sched.priority import PriorityConfig, PriorityLearner
from adp_sched.pwl import PwlConcave, sandwich_approximate, segment_gaps

DESK_P = np.array([[0.7, 0.3], [0.4, 0.6]])
DESK_H = np.array([0.0753, 0.2343])
DESK_PMF = np.array([0.5, 0.0, 0.5])


def desk_mdp(lam=0.05, alpha=0.9, utility=None):
    return DiscreteMdp(B=8, h_reps=DESK_H, P=DESK_P, arrival_pmf=DESK_PMF,
                       lam=lam, alpha=alpha, utility=utility)


def desk_streams(seed, n):
    r = np.random.default_rng([seed, 0])
    arr = r.choice([0.0, 2.0], size=n)
    pc = DESK_P.cumsum(axis=1)
    hs = np.empty(n, dtype=int)
    h = 0
    for t in range(n):
        h = int((pc[h] > r.random()).argmax())
        hs[t] = h
    return arr, hs


def greedy_grid_policy(L, mdp):
    """Largest greedy action per grid state under the learned values."""
    pol = np.zeros((mdp.n_x, mdp.n_h), dtype=np.int64)
    for ih in range(mdp.n_h):
        vals = L.V[ih].eval(mdp.xs)
        for ix in range(mdp.n_x):
            q = (mdp.u_tab[ix, :ix + 1] - mdp.lam * mdp.c_tab[ih, :ix + 1]
                 + mdp.alpha * vals[ix::-1])
            pol[ix, ih] = ix - int(np.argmax(q[::-1]))
    return pol


# --------------------------------------------- 1: sandwich approximation

def test_01_sandwich_bound():
    # 0 <= f - A_delta(f) <= delta on a dense grid, 1e-9 slack
    rng = np.random.default_rng(20240801)
    worst = 0.0
    for _ in range(100):
        f, dom = reference.random_concave_fn(rng)
        xs = np.linspace(dom[0], dom[1], 10_000)
        fx = f(xs)
        for delta in (0.01, 0.1, 1.0):
            res = sandwich_approximate(f, dom, delta)
            assert res.converged
            gap = fx - res.pwl.eval(xs)
            assert gap.min() >= -1e-9
            assert gap.max() <= delta + 1e-9
            worst = max(worst, gap.max() / delta)
    print(f"01 sandwich bound: PASS (worst gap {worst:.3f} of delta)")


# ------------------------------------------------------- 2: gap formula

def test_02_segment_gaps_match_envelope_oracle():
    rng = np.random.default_rng(20240802)
    worst = 0.0
    for _ in range(100):
        xs, vs = reference.random_concave_breakpoints(rng)
        rep = segment_gaps(PwlConcave(xs, vs))
        oracle = reference.dense_envelope_gaps(xs, vs)
        worst = max(worst, float(np.max(np.abs(rep.gaps - oracle))))
        np.testing.assert_allclose(rep.gaps, oracle, atol=1e-6)
    print(f"02 gap formula: PASS (worst dev {worst:.2e})")


# -------------------------------------------------- 3: exact solver

def test_03_solver_matches_finite_horizon_brute_force():
    mdp = desk_mdp()
    sol = solve_exact(mdp)
    assert sol.converged
    Jbf, _ = reference.brute_force_finite_horizon(
        8, 1, list(DESK_H), DESK_P.tolist(), list(DESK_PMF), 0.05, 0.9,
        lambda x, y: y - x, lambda h, y: (2.0 ** y - 1.0) / h, 400)
    rng_ = float(sol.J.max() - sol.J.min())
    dev = float(np.max(np.abs(sol.J - np.array(Jbf))))
    assert dev <= 0.9 ** 400 * rng_ + 1e-6
    print(f"03 exact solver vs brute force: PASS (max dev {dev:.2e})")


# ------------------------------------- 4: concavity and monotone policy

def _random_instance(rng):
    B = int(rng.integers(6, 13))
    n_h = int(rng.integers(2, 4))
    P = rng.uniform(0.0, 1.0, (n_h, n_h)) + 0.2 * np.eye(n_h)
    P /= P.sum(axis=1, keepdims=True)
    h = np.sort(rng.uniform(0.05, 0.6, n_h))
    pmf = rng.uniform(0.0, 1.0, int(rng.integers(2, B // 2 + 2)))
    pmf /= pmf.sum()
    u_y = float(rng.uniform(0.5, 2.0))
    u_x = float(rng.uniform(0.0, 0.8 * u_y))  # nondecreasing in backlog
    return DiscreteMdp(B=B, h_reps=h, P=P, arrival_pmf=pmf,
                       lam=float(rng.uniform(0.0, 0.4)),
                       alpha=float(rng.choice([0.8, 0.9])),
                       utility=LinearUtility(u_y, u_x))


def _has_monotone_selection(mdp, V, h, tol=1e-6):
    prev = 0
    for ix in range(mdp.n_x):
        vals = (mdp.u_tab[ix, :ix + 1] - mdp.lam * mdp.c_tab[h, :ix + 1]
                + mdp.alpha * V[ix::-1, h])
        ties = np.flatnonzero(vals >= vals.max() - tol)
        ties = ties[ties >= prev]
        if ties.size == 0:
            return False
        prev = int(ties[0])
    return True


def test_04_value_concave_and_policy_monotone():
    rng = np.random.default_rng(20240804)
    worst_d2 = -np.inf
    for _ in range(20):
        mdp = _random_instance(rng)
        sol = solve_exact(mdp)
        assert sol.converged
        for h in range(mdp.n_h):
            d2 = np.diff(sol.V[:, h], 2)
            worst_d2 = max(worst_d2, float(d2.max()) if d2.size else 0.0)
            assert d2.size == 0 or d2.max() <= 1e-8
            assert np.all(np.diff(sol.policy[:, h]) >= 0) or \
                _has_monotone_selection(mdp, sol.V, h)
    print(f"04 concave values, monotone policies: PASS "
          f"(worst 2nd diff {worst_d2:.2e})")


# -------------------------------------------- 5: approximation guarantee

def test_05_approximation_bound_and_two_start_stability():
    worst = 0.0
    for alpha in (0.5, 0.9):
        mdp = desk_mdp(alpha=alpha, utility=LinearUtility(1.0, 0.0))
        Vs = solve_exact(mdp).V
        for delta in (0.1, 0.5, 1.0):
            bound = delta / (1.0 - alpha)
            ap = solve_approx(mdp, delta)
            dev = np.array([ap.V[h].eval(mdp.xs) - Vs[:, h]
                            for h in range(2)])
            assert np.abs(dev).max() <= bound + 1e-9
            worst = max(worst, float(np.abs(dev).max()) / bound)
            start = [PwlConcave([0.0, 8.0], [3.0, 3.0])] * 2
            ap2 = solve_approx(mdp, delta, v0=start)
            gap = max(np.max(np.abs(ap.V[h].eval(mdp.xs)
                                    - ap2.V[h].eval(mdp.xs)))
                      for h in range(2))
            assert gap <= bound + 1e-6
    print(f"05 approximation bound + two-start: PASS "
          f"(worst dev {worst:.3f} of bound)")


# ----------------------------------------- 6, 7: single-trajectory learning

LEARN_LAM = 0.3
LEARN_SEEDS = (0, 1, 2, 3, 4)
_LEARNED = {}


def _learned_values(T):
    """Exactly-evaluated greedy values after 5e4 online slots, per seed."""
    if T not in _LEARNED:
        mdp = desk_mdp(lam=LEARN_LAM)
        s0 = default_initial_state(mdp)
        vals = []
        for seed in LEARN_SEEDS:
            L = Learner(B=8.0, h_reps=DESK_H, alpha=0.9, lam=LEARN_LAM,
                        delta=0.1, refresh_period=T)
            arr, hs = desk_streams(seed, 50_000)
            for t in range(50_000):
                L.learn_step(arr[t], hs[t])
            vals.append(policy_value(mdp, greedy_grid_policy(L, mdp), s0))
        _LEARNED[T] = tuple(vals)
    return _LEARNED[T]


def test_06_online_learning_reaches_near_optimal_policy():
    mdp = desk_mdp(lam=LEARN_LAM)
    jstar = solve_exact(mdp).J[default_initial_state(mdp)]
    rels = [abs(v - jstar) / abs(jstar) for v in _learned_values(1)]
    assert max(rels) <= 0.05  # within 5% on every seed
    print(f"06 online learning near-optimal: PASS "
          f"(worst rel err {max(rels):.4%})")


def test_07_periodic_refresh_degrades_gracefully():
    v1 = _learned_values(1)
    v10 = _learned_values(10)
    degr = [(a - b) / abs(a) for a, b in zip(v1, v10)]
    assert max(degr) <= 0.10  # at most 10% worse than per-slot refreshes
    print(f"07 T=10 refresh degradation: PASS (worst {max(degr):.4%})")


# ------------------------------------------------- 8, 9: work accounting

def _write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.mark.slow
def test_08_breakpoint_count_shrinks_with_tolerance(tmp_path):
    # the multiplier keeps the drain rate near the arrival rate, the
    # regime where the learned values carry wide curvature
    path = _write(tmp_path, """
[environment]
preset = paper
seed = 0

[scheduler]
method = learner
lam = 1e-5

[sweep]
parameter = delta
values = 0, 5, 10, 20, 30
""")
    records = sweep(load_config(path))
    counts = [r.mean_n_delta for r in records]
    cfg = load_config(path)
    grid_size = int(round(cfg.B / cfg.grid_step)) + 1
    assert counts[0] == grid_size  # delta = 0 keeps every grid point
    assert all(a > b for a, b in zip(counts, counts[1:]))
    for r in records:
        assert r.ops_per_slot <= 1.0 + r.mean_n_delta / 1.0 + 1e-12
    print(f"08 breakpoint economy: PASS (counts {counts})")


def test_09_foresight_work_bound_on_sweeps(tmp_path):
    base = """
[environment]
preset = desk
seed = 3

[scheduler]
method = learner
lam = 0.2

[run]
slots = 2000

[sweep]
parameter = {param}
values = {values}
"""
    rows = []
    for param, values in (("T", "1, 4, 16"), ("delta", "0.05, 0.5")):
        path = _write(tmp_path, base.format(param=param, values=values),
                      f"{param}.ini")
        cfg = load_config(path)
        for r in sweep(cfg):
            T = int(r.value) if param == "T" else cfg.refresh_period
            assert r.ops_per_slot <= 1.0 + r.mean_n_delta / T + 1e-12
            rows.append(round(r.ops_per_slot, 2))
    print(f"09 work bound on sweep rows: PASS (ops/slot {rows})")


# ------------------------------------------ 10, 11: prioritized queues

def two_queue_streams(seed, n):
    r = np.random.default_rng([seed, 0])
    arr = np.stack([r.choice([0.0, 2.0], size=n),
                    r.choice([0.0, 1.0, 2.0], size=n)], axis=1)
    pc = DESK_P.cumsum(axis=1)
    hs = np.empty(n, dtype=int)
    h = 0
    for t in range(n):
        h = int((pc[h] > r.random()).argmax())
        hs[t] = h
    return arr, hs


def test_10_high_priority_served_before_lower():
    # the lower queue transmits only when the higher one is fully drained
    cfg = PriorityConfig(weights=[1.0, 0.8], B=8.0)
    P = PriorityLearner(cfg, DESK_H, 0.9, lam=0.3, delta=0.1)
    arr, hs = two_queue_streams(7, 10_000)
    worst = 0.0
    for t in range(10_000):
        x = np.minimum(P.post_backlog + arr[t], P.caps)
        ys = P.learn_step(arr[t], hs[t])
        worst = max(worst, (x[0] - ys[0]) * ys[1])
    assert worst <= 1e-6 * 8.0
    print(f"10 priority slackness: PASS (worst product {worst:.2e})")


def _zoom2d(x1, x2, h_gain, lam, w1, w2, levels=3, npts=201):
    lo1, hi1, lo2, hi2 = 0.0, x1, 0.0, x2
    best = -np.inf
    for _ in range(levels):
        g1 = np.linspace(lo1, hi1, npts)
        g2 = np.linspace(lo2, hi2, npts)
        Y1, Y2 = np.meshgrid(g1, g2, indexing="ij")
        obj = w1 * Y1 + w2 * Y2 - lam * (np.exp2(Y1 + Y2) - 1.0) / h_gain
        k = int(np.argmax(obj))
        i1, i2 = divmod(k, npts)
        best = max(best, float(obj.flat[k]))
        r1 = (hi1 - lo1) / (npts - 1)
        r2 = (hi2 - lo2) / (npts - 1)
        lo1, hi1 = max(0.0, g1[i1] - r1), min(x1, g1[i1] + r1)
        lo2, hi2 = max(0.0, g2[i2] - r2), min(x2, g2[i2] + r2)
    return best


def test_11_sequential_schedule_solves_joint_problem():
    rng = np.random.default_rng(20240811)
    cfg = PriorityConfig(weights=[1.0, 0.8], B=8.0)
    worst = 0.0
    for _ in range(1000):
        lam = float(rng.uniform(0.02, 1.5))
        P = PriorityLearner(cfg, DESK_H, 0.9, lam=lam)  # flat values
        x1, x2 = rng.uniform(0, 8, 2)
        h = int(rng.integers(0, 2))
        ys = P.priority_schedule([x1, x2], h)
        obj_seq = (1.0 * ys[0] + 0.8 * ys[1]
                   - lam * (np.exp2(ys.sum()) - 1.0) / DESK_H[h])
        obj_grid = _zoom2d(x1, x2, DESK_H[h], lam, 1.0, 0.8)
        worst = max(worst, abs(obj_seq - obj_grid))
        assert abs(obj_seq - obj_grid) < 1e-6
    print(f"11 sequential vs joint grid: PASS (worst gap {worst:.2e})")


# ----------------------------------------------- 12, 13: comparisons

SWEEP_INI = """
[environment]
preset = desk
seed = {seed}

[scheduler]
method = {method}
lam = 0.1

[run]
slots = 3000

[sweep]
parameter = lambda
values = {values}
"""


def test_12_learner_beats_stability_at_matched_delay(tmp_path):
    grids = {"learner": "0.005, 0.02, 0.05, 0.1, 0.2, 0.4",
             "stability": "0.02, 0.05, 0.15, 0.4, 1.0, 2.5"}
    wins = total = 0
    for seed in range(5):
        curves = {}
        for method, values in grids.items():
            path = _write(tmp_path, SWEEP_INI.format(
                seed=seed, method=method, values=values),
                f"{method}{seed}.ini")
            recs = sweep(load_config(path))
            curves[method] = np.array([[r.avg_delay, r.avg_power]
                                       for r in recs])
        stab = curves["stability"][np.argsort(curves["stability"][:, 0])]
        lo, hi = stab[0, 0], stab[-1, 0]
        for delay, power in curves["learner"]:
            if delay <= 5.0 and lo <= delay <= hi:
                matched = float(np.interp(delay, stab[:, 0], stab[:, 1]))
                total += 1
                wins += power <= matched * (1.0 + 1e-9)
    assert total >= 10  # the grids must actually overlap
    assert wins / total >= 0.9
    print(f"12 learner vs stability at matched delay: PASS "
          f"({wins}/{total} pairs)")


def test_13_learner_outpaces_tabular_qlearning():
    mdp = desk_mdp(lam=LEARN_LAM)
    s0 = default_initial_state(mdp)
    wins = 0
    for seed in LEARN_SEEDS:
        L = Learner(B=8.0, h_reps=DESK_H, alpha=0.9, lam=LEARN_LAM,
                    delta=0.1)
        arr, hs = desk_streams(seed, 5_000)
        for t in range(5_000):
            L.learn_step(arr[t], hs[t])
        vl = policy_value(mdp, greedy_grid_policy(L, mdp), s0)
        q = QLearningScheduler(B=8, h_reps=DESK_H, alpha=0.9, lam=LEARN_LAM,
                               rng=np.random.default_rng([seed, 1]))
        arr2, hs2 = desk_streams(seed, 50_000)
        for t in range(50_000):
            q.learn_step(arr2[t], hs2[t])
        vq = policy_value(mdp, q.greedy_table(), s0)
        wins += vl >= vq
    assert wins >= 4  # ten times fewer slots, still ahead
    print(f"13 learner@5e3 vs q-learning@5e4: PASS ({wins}/5 seeds)")


# ------------------------------------------------ 14: budget search

def test_14_multiplier_search_meets_budget():
    mdp = desk_mdp(lam=LEARN_LAM)
    s0 = default_initial_state(mdp)
    cbar = policy_value(mdp, solve_exact(mdp).policy, s0, kind="cost")
    res = lagrange_search(mdp.with_lambda(0.05), cbar)
    assert res.converged and not res.slack
    assert abs(res.cost - cbar) <= 1e-3
    free = mdp.with_lambda(0.0)
    c0 = policy_value(free, solve_exact(free).policy, s0, kind="cost")
    res2 = lagrange_search(free, 1.5 * c0)
    assert res2.slack and res2.lam == 0.0 and res2.cost < 1.5 * c0
    print(f"14 budget search: PASS (active |C-cbar| {abs(res.cost - cbar):.2e},"
          f" slack lam {res2.lam})")


# ------------------------------------------------- 15: determinism

def test_15_repeated_runs_are_byte_identical(tmp_path):
    for method, extra in (("learner", "lam = 0.2"),
                          ("qlearning", "lam = 0.2")):
        path = _write(tmp_path, f"""
[environment]
preset = desk
seed = 11

[scheduler]
method = {method}
{extra}

[run]
slots = 300
""", f"{method}.ini")
        a = render_csv([run(load_config(path))])
        b = render_csv([run(load_config(path))])
        assert a == b
    print("15 determinism: PASS (byte-identical CSV on repeat)")
