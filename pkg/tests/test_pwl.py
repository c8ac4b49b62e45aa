import math

import numpy as np
import pytest

from adp_sched.errors import ConcavityError, DomainError
from adp_sched.pwl import (
    GapReport, PwlConcave, blend_reapproximate, sandwich_approximate,
    segment_gaps,
)

import reference


# ---------------------------------------------------------------- PwlConcave

def test_eval_midpoint():
    f = PwlConcave([0.0, 1.0], [0.0, 1.0])
    assert f.eval(0.5) == 0.5


def test_eval_exact_breakpoint_and_interior():
    f = PwlConcave([0.0, 2.0, 4.0], [0.0, 3.0, 4.0])
    assert f.eval(2.0) == 3.0
    assert f.eval(3.0) == 3.5


def test_eval_domain_error():
    f = PwlConcave([0.0, 4.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        f.eval(-0.1)
    with pytest.raises(DomainError):
        f.eval(4.1)


def test_eval_vectorized_matches_scalar():
    rng = np.random.default_rng(7)
    xs, vs = reference.random_concave_breakpoints(rng)
    f = PwlConcave(xs, vs)
    pts = rng.uniform(xs[0], xs[-1], size=200)
    vec = f.eval(pts)
    scalars = np.array([f.eval(p) for p in pts])
    np.testing.assert_allclose(vec, scalars, rtol=0, atol=1e-12)


def test_constructor_rejects_bad_data():
    with pytest.raises(ValueError):
        PwlConcave([0.0, 0.0, 1.0], [0.0, 1.0, 2.0])  # non-increasing xs
    with pytest.raises(ConcavityError):
        PwlConcave([0.0, 1.0, 2.0], [0.0, 0.0, 1.0])  # convex kink
    # slope increase below tolerance is accepted
    PwlConcave([0.0, 1.0, 2.0], [0.0, 1.0, 2.0 + 5e-10])


def test_immutable():
    f = PwlConcave([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(AttributeError):
        f.xs = np.array([0.0, 2.0])
    with pytest.raises(ValueError):
        f.vs[0] = 5.0


# -------------------------------------------------------------- segment_gaps

def test_gaps_collinear_zero():
    f = PwlConcave([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    rep = segment_gaps(f)
    assert rep.max_gap == 0.0
    np.testing.assert_allclose(rep.gaps, 0.0, atol=1e-15)


def test_gaps_two_points():
    rep = segment_gaps(PwlConcave([0.0, 1.0], [0.0, 1.0]))
    assert rep.max_gap == 1.0
    assert rep.interval_index == 0


def test_gaps_sqrt_three_points_vs_dense_oracle():
    xs = np.array([0.0, 0.5, 1.0])
    vs = np.sqrt(xs)
    rep = segment_gaps(PwlConcave(xs, vs))
    oracle = reference.dense_envelope_gaps(xs, vs)
    np.testing.assert_allclose(rep.gaps, oracle, atol=1e-6)
    # both boundary intervals see the single flanking chord
    assert rep.gaps[0] == pytest.approx(math.sqrt(0.5) - 0.5857864376269049 * 0.5,
                                        abs=1e-12)
    assert rep.interval_index == 0  # tie resolves to the lowest index


def test_gaps_match_dense_oracle_randomized():
    rng = np.random.default_rng(123)
    for _ in range(30):
        xs, vs = reference.random_concave_breakpoints(rng)
        rep = segment_gaps(PwlConcave(xs, vs))
        oracle = reference.dense_envelope_gaps(xs, vs)
        np.testing.assert_allclose(rep.gaps, oracle, atol=1e-6)


# ------------------------------------------------------ sandwich_approximate

def test_sandwich_affine_collapses_to_endpoints():
    res = sandwich_approximate(lambda x: x, (0.0, 10.0), 0.1)
    assert res.converged
    np.testing.assert_array_equal(res.pwl.xs, [0.0, 10.0])
    np.testing.assert_array_equal(res.pwl.vs, [0.0, 10.0])
    assert res.max_gap == 0.0


def test_sandwich_loose_delta_stops_after_seed_probe():
    # endpoints alone certify nothing for a concave oracle, so even a
    # loose delta pays for one midpoint evaluation before stopping
    res = sandwich_approximate(lambda x: x, (0.0, 10.0), 20.0)
    assert res.converged and res.n_evals == 3
    np.testing.assert_array_equal(res.pwl.xs, [0.0, 10.0])


def test_sandwich_sqrt_first_bisections():
    # The seed evaluates 0.5; the two flanking gap bounds then tie and
    # ties break toward the left: 0.25 next, then 0.125.
    res = sandwich_approximate(math.sqrt, (0.0, 1.0), 0.05, max_evals=5)
    assert not res.converged
    np.testing.assert_array_equal(res.pwl.xs, [0.0, 0.125, 0.25, 0.5, 1.0])
    np.testing.assert_allclose(res.pwl.vs, np.sqrt(res.pwl.xs), atol=1e-15)
    assert res.pwl.vs[3] == pytest.approx(0.70711, abs=5e-6)


def test_sandwich_sqrt_converges_within_delta():
    delta = 0.05
    res = sandwich_approximate(math.sqrt, (0.0, 1.0), delta)
    assert res.converged
    assert segment_gaps(res.pwl).max_gap <= delta + 1e-12
    t = np.linspace(0.0, 1.0, 10_001)
    err = np.sqrt(t) - res.pwl.eval(t)
    assert err.min() >= -1e-9
    assert err.max() <= delta + 1e-9


def test_sandwich_bound_randomized():
    rng = np.random.default_rng(42)
    for _ in range(20):
        f, dom = reference.random_concave_fn(rng)
        for delta in (0.01, 0.1, 1.0):
            res = sandwich_approximate(f, dom, delta)
            assert res.converged
            t = np.linspace(dom[0], dom[1], 2001)
            err = f(t) - res.pwl.eval(t)
            assert err.min() >= -1e-9
            assert err.max() <= delta + 1e-9


def test_sandwich_breakpoint_count_monotone_in_delta():
    counts = []
    for delta in (0.01, 0.05, 0.2, 1.0):
        res = sandwich_approximate(math.sqrt, (0.0, 1.0), delta)
        counts.append(res.pwl.n_breakpoints)
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_sandwich_eval_budget_flag():
    res = sandwich_approximate(math.sqrt, (0.0, 1.0), 1e-9, max_evals=6)
    assert not res.converged
    assert res.n_evals == 6
    assert res.max_gap > 1e-9


def test_sandwich_rejects_nonconcave_oracle():
    with pytest.raises(ConcavityError):
        sandwich_approximate(lambda x: x * x, (0.0, 2.0), 0.01)


def test_sandwich_deterministic():
    a = sandwich_approximate(math.sqrt, (0.0, 1.0), 0.01)
    b = sandwich_approximate(math.sqrt, (0.0, 1.0), 0.01)
    np.testing.assert_array_equal(a.pwl.xs, b.pwl.xs)
    np.testing.assert_array_equal(a.pwl.vs, b.pwl.vs)
    assert a.n_evals == b.n_evals


def test_sandwich_delta_zero_full_grid():
    grid = np.arange(0.0, 11.0)
    res = sandwich_approximate(math.sqrt, (0.0, 10.0), 0.0, grid=grid)
    assert res.converged
    assert res.n_evals == grid.size
    np.testing.assert_array_equal(res.pwl.xs, grid)
    np.testing.assert_allclose(res.pwl.vs, np.sqrt(grid), atol=1e-15)


def test_sandwich_delta_zero_requires_grid():
    with pytest.raises(ValueError):
        sandwich_approximate(math.sqrt, (0.0, 1.0), 0.0)


# ------------------------------------------------------- blend_reapproximate

def test_blend_beta_zero_is_reapproximation_of_f():
    base = sandwich_approximate(math.sqrt, (0.0, 1.0), 0.02).pwl
    res = blend_reapproximate(base, lambda x: 1e9, 0.0, 0.05)
    direct = sandwich_approximate(base.eval, (0.0, 1.0), 0.05)
    np.testing.assert_array_equal(res.pwl.xs, direct.pwl.xs)
    np.testing.assert_array_equal(res.pwl.vs, direct.pwl.vs)


def test_blend_beta_one_is_reapproximation_of_g():
    base = PwlConcave([0.0, 1.0], [0.0, 0.0])
    res = blend_reapproximate(base, math.sqrt, 1.0, 0.05)
    direct = sandwich_approximate(math.sqrt, (0.0, 1.0), 0.05)
    np.testing.assert_array_equal(res.pwl.xs, direct.pwl.xs)
    np.testing.assert_array_equal(res.pwl.vs, direct.pwl.vs)


def test_blend_affine_result_two_breakpoints():
    f = PwlConcave([0.0, 4.0], [0.0, 0.0])
    res = blend_reapproximate(f, lambda x: -x, 0.5, 0.1)
    assert res.converged
    np.testing.assert_array_equal(res.pwl.xs, [0.0, 4.0])
    np.testing.assert_array_equal(res.pwl.vs, [0.0, -2.0])


def test_blend_counts_evaluations():
    f = PwlConcave([0.0, 1.0], [0.0, 0.0])
    res = blend_reapproximate(f, math.sqrt, 0.5, 0.02)
    assert res.n_evals >= 3
    t = np.linspace(0.0, 1.0, 2001)
    target = 0.5 * np.sqrt(t)
    err = target - res.pwl.eval(t)
    assert err.min() >= -1e-9 and err.max() <= 0.02 + 1e-9


# -------------------------------------------------------------- serialization

def test_row_roundtrip():
    res = sandwich_approximate(math.sqrt, (0.0, 1.0), 0.05)
    row = res.pwl.to_row()
    back = PwlConcave.from_row(row)
    np.testing.assert_allclose(back.xs, res.pwl.xs, rtol=1e-11)
    np.testing.assert_allclose(back.vs, res.pwl.vs, rtol=1e-11)
    # 12 significant digits, semicolon-separated pairs
    assert row == ";".join(f"{x:.12g},{v:.12g}"
                           for x, v in zip(res.pwl.xs, res.pwl.vs))


# -------------------------------------------------------------- slope queries

def test_slope_queries():
    f = PwlConcave([0.0, 1.0, 3.0], [0.0, 2.0, 3.0])
    assert f.left_slope(1.0) == pytest.approx(2.0)
    assert f.right_slope(1.0) == pytest.approx(0.5)
    # interior points see the segment they sit in from both sides
    assert f.left_slope(0.4) == f.right_slope(0.4) == pytest.approx(2.0)
    # domain ends fall back to the only adjacent segment
    assert f.left_slope(0.0) == pytest.approx(2.0)
    assert f.right_slope(3.0) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        f.left_slope(-0.5)
    with pytest.raises(DomainError):
        f.right_slope(3.5)
