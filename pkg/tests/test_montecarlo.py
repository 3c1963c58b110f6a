from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from ustatbounds.exceptions import BudgetExceededError
from ustatbounds.kernels import DiscreteSpace, KernelEnsemble, random_ensemble
from ustatbounds.montecarlo import (
    ascend_ratio,
    binomial_ci,
    draw_ustatistic,
    exact_distribution,
    fit_constant,
    gaussian_matrix_norm_check,
    sample_gaussian_chaos,
    sample_ustatistic,
    tail_constant_required,
    verify_moment_bound,
    verify_tail_bound,
)

from oracles import brute_law

RAD = DiscreteSpace.rademacher()


def xy(n=1):
    return KernelEnsemble.from_function(lambda x, y: x * y, RAD, n=n)


def rademacher_sum(n=2):
    return KernelEnsemble.from_function(lambda x: x, RAD, n=n)


def law_dict(law):
    return {round(v, 9): p for v, p in law.support}


# -- exact laws ---------------------------------------------------------------------

def test_exact_law_examples():
    law = exact_distribution(rademacher_sum(2))
    assert law_dict(law) == pytest.approx({-2.0: 0.25, 0.0: 0.5, 2.0: 0.25})
    assert law.moment(4) == 8.0
    assert law_dict(exact_distribution(xy())) == pytest.approx({-1.0: 0.5, 1.0: 0.5})
    assert law_dict(exact_distribution(xy().scaled(0))) == {0.0: 1.0}


@given(st.integers(1, 2), st.integers(1, 2), st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_exact_law_matches_brute_force(d, n, m, seed):
    K = random_ensemble(np.random.default_rng(seed), d, n, m)
    law = exact_distribution(K)
    assert math.fsum(law.probs) == pytest.approx(1.0, abs=1e-12)
    ref = brute_law(K)
    got = {}
    for v, p in law.support:
        got[round(v, 9)] = got.get(round(v, 9), 0.0) + p
    assert set(got) == set(ref)
    for k in ref:
        assert got[k] == pytest.approx(ref[k], abs=1e-12)


def test_exact_law_budget():
    with pytest.raises(BudgetExceededError):
        exact_distribution(xy(4), budget=100)


def test_law_tail_and_quantile():
    law = exact_distribution(rademacher_sum(2))
    assert law.tail(2.0) == 0.5 and law.tail(2.0, strict=True) == 0.0
    assert law.quantile_abs(0.5) == 0.0
    assert law.quantile_abs(0.49) == 2.0


# -- sampling -------------------------------------------------------------------------

def test_rademacher_fourth_moment():
    run = sample_ustatistic(rademacher_sum(2), seed=3, N=200_000, p_list=(4,))
    m, se = run.moment(4)
    assert abs(m - 8.0) <= 4 * se


def test_zero_kernel_samples_zero():
    run = sample_ustatistic(xy(3).scaled(0), seed=1, N=1000, keep_samples=True)
    assert not np.any(run.samples) and run.max_abs == 0


def test_canonical_mean_zero(rng):
    K = random_ensemble(rng, 2, 2, 3)
    run = sample_ustatistic(K, seed=9, N=200_000)
    assert abs(run.mean) <= 4 * run.mean_se


def test_degeneracy_orthogonal_to_first_order(rng):
    K = random_ensemble(rng, 2, 2, 3)
    Z, atoms = draw_ustatistic(K, np.random.default_rng(4), 200_000, return_atoms=True)
    for a in range(3):
        f = (atoms[0][:, 0] == a).astype(float)
        prod = Z * f
        assert abs(prod.mean()) <= 4 * prod.std(ddof=1) / math.sqrt(prod.size)


def test_moments_match_exact_law(rng):
    K = random_ensemble(rng, 2, 2, 2)
    law = exact_distribution(K)
    run = sample_ustatistic(K, seed=11, N=200_000, p_list=(2, 3, 4))
    for p in (2, 3, 4):
        m, se = run.moment(p)
        assert abs(m - law.moment(p)) <= 4 * se


def test_tail_counts_monotone():
    run = sample_ustatistic(xy(3), seed=2, N=50_000, t_grid=[0, 1, 2, 3, 5, 9, 10])
    assert run.tail_ge == sorted(run.tail_ge, reverse=True)
    assert all(g >= s for g, s in zip(run.tail_ge, run.tail_gt))
    assert run.tail_ge[0] == run.N


def test_sampling_deterministic_across_threads(rng):
    K = random_ensemble(rng, 2, 2, 2)
    kw = dict(seed=17, N=200_000, p_list=(2, 4, 8), t_grid=[0.5, 1, 2])
    a = sample_ustatistic(K, threads=1, **kw)
    b = sample_ustatistic(K, threads=4, **kw)
    c = sample_ustatistic(K, threads=1, **kw)
    assert a.to_json() == b.to_json() == c.to_json()
    assert sample_ustatistic(K, threads=1, **{**kw, "seed": 18}).to_json() != a.to_json()


# -- Gaussian chaos ------------------------------------------------------------------------

@pytest.mark.parametrize("n", [3, 6])
def test_chaos_identity_second_moment(n):
    run = sample_gaussian_chaos(np.eye(n), seed=n, N=200_000, p_list=(2,))
    m, se = run.moment(2)
    assert abs(m - n) <= 4 * se


def test_chaos_rank_one_and_kurtosis():
    e = np.zeros((3, 3))
    e[0, 0] = 1
    m, se = sample_gaussian_chaos(e, seed=1, N=200_000, p_list=(2,)).moment(2)
    assert abs(m - 1) <= 4 * se
    run = sample_gaussian_chaos(np.array([0.6, 0.8]), seed=2, N=400_000, p_list=(2, 4))
    m2, m4 = run.moment(2)[0], run.moment(4)[0]
    assert m4 / m2 ** 2 == pytest.approx(3.0, abs=0.05)


def test_norm_check_zero_and_identity():
    c = gaussian_matrix_norm_check(np.zeros((3, 3)), 2, seed=0, N=100)
    assert (c.empirical, c.rhs) == (0.0, 0.0)
    n = 5
    c = gaussian_matrix_norm_check(np.eye(n), 2, seed=1, N=100_000)
    chi_mean = math.sqrt(2) * math.exp(special.gammaln((n + 1) / 2) - special.gammaln(n / 2))
    assert abs(c.empirical - chi_mean) <= 4 * c.stderr
    assert c.rhs == pytest.approx(math.sqrt(n) + math.sqrt(2))
    assert c.empirical <= c.rhs


# -- constants -------------------------------------------------------------------------------

def test_fit_constant_examples():
    assert fit_constant([(0.5, 1.0)]).constant == 0.5
    fit = fit_constant([(0.2, 1), (0.7, 1), (0.4, 1)])
    assert fit.constant == 0.7
    fit.validate([(0.9, 1.0), (0.1, 1.0)])
    assert fit.held_out_ratios == [0.9, 0.1]
    assert fit.violations == [0] and not fit.passed
    assert fit_constant([(1.0, 0.0)]).infeasible
    assert fit_constant([(0.0, 0.0)]).constant == 0.0


@given(st.floats(1e-6, 0.99), st.floats(0.01, 30))
def test_tail_constant_required_solves_equation(prob, exponent):
    K = tail_constant_required(prob, exponent)
    assert K * math.exp(-exponent / K) == pytest.approx(prob, rel=1e-9)
    # any smaller constant gives a smaller bound
    assert 0.99 * K * math.exp(-exponent / (0.99 * K)) < prob


def test_binomial_ci():
    lo, hi = binomial_ci(0, 1000)
    assert lo == 0 and hi == pytest.approx(1 - 0.005 ** (1 / 1000), rel=1e-9)
    lo, hi = binomial_ci(500, 1000)
    assert lo < 0.5 < hi


def test_ascend_ratio_never_decreases_and_is_seeded():
    f = lambda x: -float(np.sum((x - 1.0) ** 2))
    x0 = np.zeros(3)
    x, fx = ascend_ratio(f, x0, seed=1, steps=200)
    assert fx >= f(x0) and fx > -1e-3
    assert np.array_equal(ascend_ratio(f, x0, seed=1, steps=200)[0], x)


# -- verification ---------------------------------------------------------------------------

def test_verify_moment_examples():
    res = verify_moment_bound(rademacher_sum(2), [4])
    row = res["rows"][0]
    assert row["lhs"] == 8 and row["rhs"] == pytest.approx(320)
    assert row["ratio"] == pytest.approx(0.025) and res["pass"]
    assert verify_moment_bound(xy().scaled(0), [2, 4])["pass"]


def test_verify_tail_trivial_levels():
    K = xy(2)
    top = max(abs(v) for v, _ in exact_distribution(K).support)
    res = verify_tail_bound(K, [0.0, top + 0.5], seed=1, N=20_000)
    first, last = res["rows"]
    assert first["empirical"] == 1.0 and first["bound"] == 1.0
    assert last["count"] == 0
    assert res["pass"]


def test_verify_tail_unresolvable_policy():
    res = verify_tail_bound(xy(), [50.0], constant=1.0, seed=0, N=100)
    assert res["rows"][0]["status"] == "unresolvable"
