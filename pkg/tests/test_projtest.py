"""Unit tests for splitting plans and the single-splitting projection test."""

import numpy as np
import pytest
from scipy import stats

from hdmt.datagen import CovarianceSpec, covariance_cholesky, sample_gaussian
from hdmt.penalty import PenaltySpec
from hdmt.projtest import (
    SplitPlan,
    make_split,
    project_and_t,
    resolve_penalty,
    spt,
    spt_power_oracle,
)


# ---------------------------------------------------------------------------
# Split plans


def test_make_split_sizes():
    plan = make_split(40, 0.5, np.arange(40))
    assert (plan.n1, plan.n2) == (20, 20)
    plan = make_split(41, 0.5, np.arange(41))
    assert (plan.n1, plan.n2) == (21, 20)  # n2 = floor(kappa n)
    plan = make_split(40, 0.25, np.arange(40))
    assert (plan.n1, plan.n2) == (30, 10)


def test_make_split_halves_partition_rows():
    rng = np.random.default_rng(0)
    perm = rng.permutation(20)
    plan = make_split(20, 0.5, perm)
    np.testing.assert_array_equal(plan.d1_indices, perm[:10])
    np.testing.assert_array_equal(plan.d2_indices, perm[10:])
    assert set(plan.d1_indices) | set(plan.d2_indices) == set(range(20))


def test_make_split_validation():
    with pytest.raises(ValueError, match="kappa"):
        make_split(40, 1.0, np.arange(40))
    with pytest.raises(ValueError, match="infeasible"):
        make_split(5, 0.2, np.arange(5))  # n2 = 1
    with pytest.raises(ValueError, match="bijection"):
        SplitPlan(permutation=np.zeros(6, dtype=int), n1=3, n2=3)


# ---------------------------------------------------------------------------
# Projected t-test


def test_project_and_t_matches_scipy_ttest():
    rng = np.random.default_rng(4)
    d2 = rng.standard_normal((15, 6)) + 0.3
    w = rng.standard_normal(6)
    stat, p, degenerate = project_and_t(d2, w, reference="t")
    ref = stats.ttest_1samp(d2 @ w, 0.0)
    assert not degenerate
    assert stat == pytest.approx(ref.statistic, rel=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-12)


def test_project_and_t_normal_reference():
    rng = np.random.default_rng(4)
    d2 = rng.standard_normal((15, 3))
    w = np.array([1.0, 0.0, 0.0])
    stat, p, _ = project_and_t(d2, w, reference="normal")
    assert p == pytest.approx(2.0 * stats.norm.sf(abs(stat)), rel=1e-12)


def test_project_and_t_degenerate_direction():
    d2 = np.random.default_rng(1).standard_normal((10, 4))
    stat, p, degenerate = project_and_t(d2, np.zeros(4), "t")
    assert (stat, p, degenerate) == (0.0, 1.0, True)


def test_project_and_t_constant_nonzero_rejected():
    d2 = np.ones((8, 2))
    with pytest.raises(ValueError, match="constant and nonzero"):
        project_and_t(d2, np.array([1.0, 0.0]), "t")


def test_project_and_t_unknown_reference():
    with pytest.raises(ValueError, match="unknown reference"):
        project_and_t(np.zeros((5, 2)), np.ones(2), "laplace")


# ---------------------------------------------------------------------------
# Penalty resolution


def test_resolve_penalty_default_is_rate_lasso():
    pen = resolve_penalty(None, 20, 50)
    assert pen.kind == "lasso"
    assert pen.lam == pytest.approx(np.sqrt(np.log(50) / 20))


def test_resolve_penalty_passthrough():
    given = PenaltySpec(kind="scad", lam=0.7)
    assert resolve_penalty(given, 20, 50) is given


# ---------------------------------------------------------------------------
# SPT end to end


def _gaussian_sample(n, p, rng, shift=0.0):
    spec = CovarianceSpec(family="ar", r=0.5)
    L = covariance_cholesky(spec, p)
    mu = np.full(p, shift)
    return sample_gaussian(n, mu, L, rng)


def test_spt_detects_strong_signal():
    rng = np.random.default_rng(2)
    X = _gaussian_sample(100, 10, rng, shift=1.0)
    plan = make_split(100, 0.5, rng.permutation(100))
    res = spt(X, plan)
    assert res.reject
    assert res.p_value < 1e-4
    assert res.method == "spt"
    assert res.diagnostics["converged"]


def test_spt_accepts_null_typically():
    rng = np.random.default_rng(3)
    rejections = 0
    for _ in range(20):
        X = _gaussian_sample(60, 8, rng)
        plan = make_split(60, 0.5, rng.permutation(60))
        rejections += int(spt(X, plan).reject)
    assert rejections <= 4


def test_spt_plan_size_mismatch():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 5))
    plan = make_split(40, 0.5, np.arange(40))
    with pytest.raises(ValueError, match="do not match"):
        spt(X, plan)


def test_spt_diagnostics_record_configuration():
    rng = np.random.default_rng(6)
    X = _gaussian_sample(40, 6, rng)
    plan = make_split(40, 0.5, rng.permutation(40))
    res = spt(X, plan, reference="t")
    for key in ("reference", "lambda", "penalty", "n1", "n2", "degenerate"):
        assert key in res.diagnostics
    assert res.diagnostics["reference"] == "t"
    assert res.diagnostics["n1"] == 20


def test_spt_degenerate_direction_accepts():
    # A huge lambda forces w = 0; the test must accept with p = 1.
    rng = np.random.default_rng(7)
    X = _gaussian_sample(40, 6, rng)
    plan = make_split(40, 0.5, rng.permutation(40))
    res = spt(X, plan, penalty=PenaltySpec(kind="lasso", lam=50.0))
    assert res.diagnostics["degenerate"]
    assert res.p_value == 1.0
    assert not res.reject


# ---------------------------------------------------------------------------
# Power oracle


def test_spt_power_oracle_values():
    # At zeta = 0 the formula collapses to Phi(-z_{alpha/2}) = alpha / 2
    # (the one-tail mass; the approximation ignores the far tail).
    assert spt_power_oracle(200, 0.5, 0.0) == pytest.approx(0.025)
    assert spt_power_oracle(200, 0.5, 0.25) == pytest.approx(0.9988, abs=5e-5)
    with pytest.raises(ValueError, match="nonnegative"):
        spt_power_oracle(200, 0.5, -0.1)
