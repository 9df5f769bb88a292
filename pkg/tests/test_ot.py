import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from othr.ot import (OTError, SinkhornOptions, cost_matrix, dump_plan_csv, entropic_term,
                     ot_objective, plan_entropy, row_distribution, row_distributions, row_entropies,
                     row_entropy, sinkhorn, transport_cost)


def golden_min(f, lo, hi, tol=1e-12):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > tol:
        if f(c) < f(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    return f((a + b) / 2)


def two_by_two_oracle(C, p, eps):
    """Minimize the entropic objective over the 1-parameter family of 2x2 couplings."""
    def T(t):
        return np.array([[t, 0.5 - t], [p[0] - t, p[1] - 0.5 + t]])

    lo, hi = max(0.0, 0.5 - p[1]), min(0.5, p[0])

    def obj(t):
        M = T(t)
        return ot_objective(np.clip(M, 0, None), C, eps)
    best = golden_min(obj, lo, hi)
    grid = min(obj(t) for t in np.linspace(lo, hi, 20001))
    return min(best, grid)


def test_cost_matrix_examples():
    E = np.array([[3.0, 4.0], [1.0, 1.0]])
    C = cost_matrix(np.array([[0.0, 0.0], [1.0, 1.0]]), E)
    assert C[0, 0] == 25.0
    assert C[1, 1] == 0.0


def test_cost_matrix_matches_double_loop():
    rng = np.random.default_rng(1)
    Z, E = rng.normal(size=(3, 4)), rng.normal(size=(2, 4))
    C = cost_matrix(Z, E)
    for i in range(3):
        for w in range(2):
            assert abs(C[i, w] - sum((Z[i, k] - E[w, k]) ** 2 for k in range(4))) < 1e-12


def test_cost_matrix_errors():
    with pytest.raises(OTError):
        cost_matrix(np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(OTError):
        cost_matrix(np.zeros((0, 2)), np.zeros((2, 2)))


def test_single_cell():
    plan = sinkhorn(np.array([[7.5]]), None, [1.0])
    assert plan.t.tolist() == [[1.0]]
    assert plan.converged


@pytest.mark.parametrize("eps", [0.01, 0.1, 1.0, 10.0])
def test_zero_cost_gives_product_coupling(eps):
    p = np.array([0.5, 0.3, 0.2])
    plan = sinkhorn(np.zeros((4, 3)), None, p, SinkhornOptions(epsilon=eps))
    np.testing.assert_allclose(plan.t, np.outer(np.full(4, 0.25), p), rtol=0, atol=1e-15)
    np.testing.assert_allclose(row_distribution(plan, 2), p, rtol=0, atol=1e-15)


def test_two_by_two_matches_brute_force():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    plan = sinkhorn(C, None, [0.5, 0.5], SinkhornOptions(epsilon=0.1))
    ref = two_by_two_oracle(C, [0.5, 0.5], 0.1)
    assert abs(ot_objective(plan, C, 0.1) - ref) < 1e-4
    # the optimum also has a closed form for this symmetric instance
    t = 0.5 / (1 + math.exp(-1 / 0.1))
    assert plan.t[0, 0] == pytest.approx(t, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=4, max_size=4), st.floats(0.05, 0.95),
       st.sampled_from([0.05, 0.1, 0.5, 1.0]))
def test_random_two_by_two_matches_brute_force(c, p0, eps):
    C = np.array(c).reshape(2, 2)
    p = np.array([p0, 1 - p0])
    plan = sinkhorn(C, None, p, SinkhornOptions(epsilon=eps, max_iters=20000, tol=1e-10))
    assert plan.converged
    assert abs(ot_objective(plan, C, eps) - two_by_two_oracle(C, p, eps)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 8))
def test_converged_plans_satisfy_marginals(seed, n, m):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 4, size=(n, m))
    p = rng.dirichlet(np.ones(m))
    plan = sinkhorn(C, None, p, SinkhornOptions(epsilon=0.1, max_iters=20000))
    assert plan.converged
    assert np.all(plan.t >= 0)
    assert np.max(np.abs(plan.t.sum(1) - 1 / n)) < 1e-6
    assert np.max(np.abs(plan.t.sum(0) - p)) < 1e-6
    assert plan.marginal_violation < 1e-6
    assert abs(plan.t.sum() - 1) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.01, 0.1, 1.0]))
def test_marginal_violation_is_non_increasing(seed, eps):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 3, size=(9, 5))
    plan = sinkhorn(C, None, rng.dirichlet(np.ones(5)), SinkhornOptions(epsilon=eps, max_iters=500))
    h = np.array(plan.violation_history)
    assert np.all(np.diff(h) <= 1e-12)


def test_larger_epsilon_gives_more_diffuse_plan():
    rng = np.random.default_rng(3)
    for _ in range(10):
        C = rng.uniform(0, 2, size=(6, 4))
        p = rng.dirichlet(np.ones(4))
        hi = sinkhorn(C, None, p, SinkhornOptions(epsilon=1.0))
        lo = sinkhorn(C, None, p, SinkhornOptions(epsilon=0.01, max_iters=20000))
        assert plan_entropy(hi) >= plan_entropy(lo)


def test_permutation_equivariance():
    rng = np.random.default_rng(4)
    C = rng.uniform(0, 2, size=(7, 5))
    p = rng.dirichlet(np.ones(5))
    perm = rng.permutation(5)
    a = sinkhorn(C, None, p)
    b = sinkhorn(C[:, perm], None, p[perm])
    np.testing.assert_allclose(b.t, a.t[:, perm], rtol=0, atol=1e-12)


def test_log_domain_stability_at_small_epsilon():
    rng = np.random.default_rng(5)
    C = rng.uniform(0, 1e4, size=(20, 10))
    plan = sinkhorn(C, None, rng.dirichlet(np.ones(10)), SinkhornOptions(epsilon=1e-3, max_iters=300))
    assert np.all(np.isfinite(plan.t))
    assert np.all(np.isfinite(plan.f)) and np.all(np.isfinite(plan.g))
    assert np.isfinite(plan.marginal_violation)


def test_zero_mass_column_gets_exactly_zero():
    C = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 0.5]])
    plan = sinkhorn(C, None, [0.6, 0.0, 0.4])
    assert plan.converged
    assert np.all(plan.t[:, 1] == 0.0)
    np.testing.assert_allclose(plan.t.sum(0), [0.6, 0.0, 0.4], atol=1e-6)


def test_warm_start_reaches_the_same_plan_faster():
    rng = np.random.default_rng(6)
    C = rng.uniform(0, 3, size=(30, 8))
    p = rng.dirichlet(np.ones(8))
    cold = sinkhorn(C, None, p)
    warm = sinkhorn(C + 1e-3, None, p, init=(cold.f, cold.g))
    assert warm.n_iters < cold.n_iters
    np.testing.assert_allclose(warm.t, sinkhorn(C + 1e-3, None, p).t, atol=1e-6)


def test_non_convergence_is_reported():
    rng = np.random.default_rng(7)
    plan = sinkhorn(rng.uniform(0, 50, (40, 10)), None, rng.dirichlet(np.ones(10)),
                    SinkhornOptions(epsilon=0.01, max_iters=3))
    assert not plan.converged and plan.n_iters == 3


@pytest.mark.parametrize("C,b", [
    (np.array([[np.nan, 0.0]]), [0.5, 0.5]),
    (np.array([[np.inf, 0.0]]), [0.5, 0.5]),
    (np.zeros((1, 2)), [0.7, 0.7]),
    (np.zeros((1, 2)), [1.5, -0.5]),
    (np.zeros((1, 2)), [1.0]),
])
def test_sinkhorn_errors(C, b):
    with pytest.raises(OTError):
        sinkhorn(C, None, b)


def test_options_validation():
    with pytest.raises(OTError):
        SinkhornOptions(epsilon=0)
    with pytest.raises(OTError):
        SinkhornOptions(tol=-1)


def test_objective_examples():
    assert ot_objective(np.array([[1.0]]), np.array([[0.0]]), 0.1) == pytest.approx(-0.1, abs=1e-15)
    T = np.array([[0.5, 0.0], [0.0, 0.5]])
    C = np.array([[1.0, 9.0], [9.0, 1.0]])
    expected = 1.0 + 0.1 * 2 * 0.5 * (math.log(0.5) - 1)
    assert ot_objective(T, C, 0.1) == pytest.approx(expected, abs=1e-15)
    with pytest.raises(OTError):
        ot_objective(T, np.zeros((2, 3)), 0.1)


def test_objective_matches_summation_oracle():
    rng = np.random.default_rng(8)
    T = rng.dirichlet(np.ones(4)).reshape(2, 2)
    C = rng.uniform(0, 3, (2, 2))
    eps = 0.37
    ref = 0.0
    for i in range(2):
        for j in range(2):
            ref += T[i, j] * C[i, j] + eps * T[i, j] * (math.log(T[i, j]) - 1)
    assert abs(ot_objective(T, C, eps) - ref) < 1e-12
    assert abs(transport_cost(T, C) + entropic_term(T, eps) - ref) < 1e-12


def test_row_distribution_examples():
    T = np.array([[0.2, 0.2], [0.5, 0.0], [0.0, 0.0]])
    np.testing.assert_array_equal(row_distribution(T, 0), [0.5, 0.5])
    np.testing.assert_array_equal(row_distribution(T, 1), [1.0, 0.0])
    with pytest.raises(OTError):
        row_distribution(T, 2)
    with pytest.raises(OTError):
        row_distributions(T)


def test_row_entropy_examples():
    assert row_entropy([1.0, 0.0, 0.0]) == 0.0
    assert row_entropy([0.25] * 4) == pytest.approx(math.log(4), abs=1e-15)
    assert row_entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-15)
    np.testing.assert_allclose(row_entropies(np.array([[1.0, 0.0], [0.5, 0.5]])), [0.0, math.log(2)])
    with pytest.raises(OTError):
        row_entropy([1.2, -0.2])
    with pytest.raises(OTError):
        row_entropy([0.5, 0.6])


def test_dump_plan_csv(tmp_path):
    plan = sinkhorn(np.array([[0.0, 5.0], [5.0, 0.0]]), None, [0.5, 0.5])
    dump_plan_csv(plan, tmp_path / "plan.csv", min_mass=1e-6)
    lines = (tmp_path / "plan.csv").read_text().splitlines()
    assert lines[0] == "row,word,mass"
    assert [tuple(x.split(",")[:2]) for x in lines[1:]] == [("0", "0"), ("1", "1")]
