"""Competitor tests: CQ quadratic-form, CLX extreme-type, random projection,
and ridge projection.

CQ and CLX use the standard one-sample constructions; the random projection
test reduces the sample to k dimensions with a Gaussian matrix and applies
Hotelling's T^2; the ridge projection test is a data-splitting test whose
direction is the ridge-regularized solve (Sigma1_hat + lambda I)^{-1} xbar1.
"""

import math
from typing import Optional

import numpy as np
from scipy import stats

from .datagen import validate_data_matrix
from .projtest import TestResult, make_split, project_and_t

__all__ = [
    "cq_test",
    "clx_test",
    "random_projection_test",
    "ridge_projection_test",
]


def cq_test(data: np.ndarray, alpha: float = 0.05) -> TestResult:
    """Quadratic-form test with the U-statistic mean-norm estimator.

    The statistic T = sum_{i != j} x_i'x_j / (n(n-1)) estimates ||mu||^2
    unbiasedly; its null standard error uses the pairwise estimator
    tr_hat(Sigma^2) = sum_{i != j} (x_i'x_j)^2 / (n(n-1)), unbiased under
    H0 (conservatively biased upward under the alternative).  The p-value
    is the one-sided standard normal upper tail.

    Args:
        data: Sample matrix (n x p), n >= 4.
        alpha: Test level.

    Returns:
        TestResult with the standardized statistic.
    """
    X = validate_data_matrix(data)
    n = X.shape[0]
    gram = X @ X.T
    off_mask = ~np.eye(n, dtype=bool)
    pair_count = n * (n - 1)
    t_num = float(gram[off_mask].sum() / pair_count)
    tr_sq = float((gram[off_mask] ** 2).sum() / pair_count)
    se = math.sqrt(2.0 * tr_sq / pair_count)
    if se == 0.0:
        raise ValueError("degenerate sample: null variance estimate is zero")
    z = t_num / se
    p = float(stats.norm.sf(z))
    return TestResult(
        statistic=float(z),
        p_value=p,
        reject=bool(p < alpha),
        method="cq",
        diagnostics={"mean_norm_estimate": t_num, "trace_sigma2_estimate": tr_sq},
    )


def clx_test(data: np.ndarray, alpha: float = 0.05) -> TestResult:
    """Extreme-type test on the maximum standardized marginal statistic.

    M = max_j n xbar_j^2 / sigma_hat_jj; under H0 the centered value
    x = M - 2 log p + log log p converges to a Gumbel-type limit with cdf
    exp(-exp(-x/2)/sqrt(pi)), giving p-value 1 - exp(-exp(-x/2)/sqrt(pi)).
    The finite-sample size is known to inflate, especially for small n.

    Args:
        data: Sample matrix (n x p), n >= 4, p >= 2.
        alpha: Test level.

    Returns:
        TestResult with the maximum statistic M in diagnostics.
    """
    X = validate_data_matrix(data)
    n, p = X.shape
    if p < 2:
        raise ValueError("extreme-type test needs p >= 2")
    xbar = X.mean(axis=0)
    sigma_jj = X.var(axis=0)  # 1/n convention
    m_stat = float(np.max(n * xbar**2 / sigma_jj))
    x = m_stat - 2.0 * math.log(p) + math.log(math.log(p))
    p_value = float(-np.expm1(-math.exp(-x / 2.0) / math.sqrt(math.pi)))
    return TestResult(
        statistic=x,
        p_value=p_value,
        reject=bool(p_value < alpha),
        method="clx",
        diagnostics={"max_marginal_statistic": m_stat},
    )


def random_projection_test(
    data: np.ndarray,
    k: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    alpha: float = 0.05,
) -> TestResult:
    """Random projection test: Gaussian projection then Hotelling's T^2.

    Draws a p x k standard normal matrix P, projects the sample to
    y_i = P'x_i, and applies the exact Hotelling test:
    (n-k)/(k(n-1)) T^2 ~ F_{k, n-k} under Gaussian H0.  A singular
    projected covariance triggers up to 3 retries with a fresh P.

    Args:
        data: Sample matrix (n x p).
        k: Projection dimension, 1 <= k < n; defaults to floor(n/2).
        rng: Random generator for P.
        alpha: Test level.

    Returns:
        TestResult with the F statistic.
    """
    X = validate_data_matrix(data)
    n, p = X.shape
    if k is None:
        k = n // 2
    if not (1 <= k < n):
        raise ValueError(f"projection dimension k must satisfy 1 <= k < n, got {k}")
    if rng is None:
        rng = np.random.default_rng()
    last_err: Optional[Exception] = None
    for _ in range(3):
        proj = rng.standard_normal((p, k))
        Y = X @ proj
        ybar = Y.mean(axis=0)
        S = np.cov(Y, rowvar=False, ddof=1).reshape(k, k)
        try:
            sol = np.linalg.solve(S, ybar)
        except np.linalg.LinAlgError as exc:
            last_err = exc
            continue
        t2 = float(n * ybar @ sol)
        f_stat = (n - k) / (k * (n - 1)) * t2
        p_value = float(stats.f.sf(f_stat, k, n - k))
        return TestResult(
            statistic=float(f_stat),
            p_value=p_value,
            reject=bool(p_value < alpha),
            method="rpt",
            diagnostics={"k": k, "hotelling_t2": t2},
        )
    raise ValueError(
        "projected covariance singular after 3 random projections"
    ) from last_err


def ridge_projection_test(
    data: np.ndarray,
    kappa: float = 0.5,
    ridge_lambda: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    alpha: float = 0.05,
    reference: str = "t",
) -> TestResult:
    """Ridge projection test: data splitting with a ridge direction.

    Splits as in the SPT, estimates w = (Sigma1_hat + lambda I)^{-1} xbar1
    on the first half, and t-tests the projected second half.  The default
    lambda is sqrt(log p / n1), the same rate family as the penalized
    estimator.  The Student reference makes the test exact for Gaussian
    data.

    Args:
        data: Sample matrix (n x p).
        kappa: Testing fraction.
        ridge_lambda: Ridge level; defaults to sqrt(log p / n1).
        rng: Random generator for the split permutation.
        alpha: Test level.
        reference: "t" (default, exact under Gaussian H0) or "normal".

    Returns:
        TestResult with the projected t statistic.
    """
    X = validate_data_matrix(data)
    n, p = X.shape
    if rng is None:
        rng = np.random.default_rng()
    plan = make_split(n, kappa, rng.permutation(n))
    d1 = X[plan.d1_indices]
    d2 = X[plan.d2_indices]
    xbar1 = d1.mean(axis=0)
    centered = d1 - xbar1
    if ridge_lambda is None:
        ridge_lambda = float(np.sqrt(np.log(p) / plan.n1)) if p >= 2 else 1.0
    if ridge_lambda <= 0:
        raise ValueError(f"ridge_lambda must be positive, got {ridge_lambda}")
    if p > plan.n1:
        # (lam I + C'C/n1)^{-1} xbar via Woodbury on the n1 x n1 Gram
        # matrix: exact, and avoids factoring a p x p system when p >> n1.
        cx = centered @ xbar1
        small = ridge_lambda * plan.n1 * np.eye(plan.n1) + centered @ centered.T
        w = (xbar1 - centered.T @ np.linalg.solve(small, cx)) / ridge_lambda
    else:
        sigma1 = centered.T @ centered / plan.n1
        w = np.linalg.solve(sigma1 + ridge_lambda * np.eye(p), xbar1)
    stat, p_value, degenerate = project_and_t(d2, w, reference)
    return TestResult(
        statistic=stat,
        p_value=p_value,
        reject=bool(p_value < alpha),
        method="ridge",
        diagnostics={
            "ridge_lambda": float(ridge_lambda),
            "degenerate": degenerate,
            "n1": plan.n1,
            "n2": plan.n2,
            "reference": reference,
        },
    )
