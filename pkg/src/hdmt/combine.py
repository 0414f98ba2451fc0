"""Exchangeable-Z p-value combination and baseline dependent combiners.

Houses the Z transform, the two estimators of the common pairwise
correlation rho, the M statistic, the embedded critical-value tables for
the variance and quantile methods at level alpha = 0.05, and six baseline
combiners (Mean2x, Median2x, ZAverage, Cauchy, plus the independence-only
Fisher and Stouffer classics).
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .projtest import TestResult

__all__ = [
    "RhoEstimate",
    "TABLE_M",
    "TABLE1_C",
    "TABLE2_BETA",
    "Z_ALPHA_HALF",
    "P_CLAMP",
    "z_transform",
    "rho_hat1",
    "rho_hat2",
    "m_statistic",
    "critical_value",
    "combine",
    "COMBINER_NAMES",
]

# p-values are clamped into [P_CLAMP, 1 - P_CLAMP] before the normal
# quantile transform to avoid infinite Z from numerically degenerate p.
P_CLAMP = 1e-15

# Critical-value tables at level alpha = 0.05.  TABLE1_C holds c(m, alpha/2)
# for the variance method; TABLE2_BETA holds the quantile-method beta used
# with the fixed critical value z_{alpha/2}.  Untabulated m map to the
# nearest larger tabulated m, which is conservative in both methods.
TABLE_M = (2, 3, 4, 5, 10, 20, 40, 100, 1000, 10000)
TABLE1_C = (1.988, 2.058, 2.133, 2.204, 2.489, 2.865, 3.126, 4.115, 7.17, 12.66)
TABLE2_BETA = (0.25, 0.25, 0.25, 0.25, 0.20, 0.20, 0.15, 0.15, 0.10, 0.05)

Z_ALPHA_HALF = 1.959964

COMBINER_NAMES = ("mean2x", "median2x", "zaverage", "cauchy", "fisher", "stouffer")

# Combiners whose validity requires independent p-values; the split
# p-values here are dependent, so results carry a caveat flag.
_INDEPENDENCE_ONLY = ("fisher", "stouffer")

_RHO_METHODS = ("variance", "quantile")


@dataclass(frozen=True)
class RhoEstimate:
    """Estimate of the common pairwise correlation of the Z vector.

    Attributes:
        value: Estimated rho in [0, 1].
        method: "variance" (rho_hat1) or "quantile" (rho_hat2).
        beta: The beta used by the quantile method, None otherwise.
    """

    value: float
    method: str
    beta: Optional[float] = None

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"rho estimate must lie in [0, 1], got {self.value}")
        if self.method not in _RHO_METHODS:
            raise ValueError(f"unknown rho method {self.method!r}")


def z_transform(pvals: Sequence[float]) -> np.ndarray:
    """Elementwise Z_k = Phi^{-1}(p_k) after clamping p into (0, 1).

    Args:
        pvals: m >= 2 p-values.

    Returns:
        Length-m array of normal quantiles.
    """
    p = np.asarray(pvals, dtype=float)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValueError("z_transform needs a vector of at least 2 p-values")
    p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return stats.norm.ppf(p)


def rho_hat1(z: np.ndarray) -> RhoEstimate:
    """Variance-based estimator rho_hat1 = max(0, 1 - s_Z^2).

    s_Z^2 is the unbiased (m-1 denominator) sample variance.

    Args:
        z: Z vector of length m >= 2.

    Returns:
        RhoEstimate with method "variance".
    """
    z = np.asarray(z, dtype=float)
    if z.shape[0] < 2:
        raise ValueError("rho_hat1 needs at least 2 entries")
    s2 = float(np.var(z, ddof=1))
    return RhoEstimate(value=max(0.0, 1.0 - s2), method="variance")


def rho_hat2(z: np.ndarray, beta: float) -> RhoEstimate:
    """Quantile-based estimator rho_hat2 = max(0, 1 - (m-1) s_Z^2 / q).

    The denominator q is the chi-square quantile chi2.ppf(1 - beta, m - 1),
    i.e. the value exceeded with probability beta.  Since
    (m-1) s_Z^2 / (1 - rho) is chi-square(m-1) for exchangeable normal Z,
    this overestimates rho with probability 1 - beta, and smaller beta
    inflates the estimate — the conservative direction for the M test.
    (The alternative reading q = chi2.ppf(beta, m-1) fails to control the
    test level on the exchangeable-rho grid and is therefore not used.)

    Args:
        z: Z vector of length m >= 2.
        beta: Table-2 beta in (0, 1).

    Returns:
        RhoEstimate with method "quantile".
    """
    z = np.asarray(z, dtype=float)
    m = z.shape[0]
    if m < 2:
        raise ValueError("rho_hat2 needs at least 2 entries")
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    s2 = float(np.var(z, ddof=1))
    q = float(stats.chi2.ppf(1.0 - beta, m - 1))
    return RhoEstimate(
        value=max(0.0, 1.0 - (m - 1) * s2 / q), method="quantile", beta=float(beta)
    )


def m_statistic(z: np.ndarray, rho: RhoEstimate) -> float:
    """Exchangeable-mean statistic M = Zbar / sqrt((1 + (m-1) rho) / m).

    The denominator is at least sqrt(1/m), so M is always finite.

    Args:
        z: Z vector of length m >= 2.
        rho: Rho estimate in [0, 1].

    Returns:
        The M statistic.
    """
    z = np.asarray(z, dtype=float)
    m = z.shape[0]
    if m < 2:
        raise ValueError("m_statistic needs at least 2 entries")
    zbar = float(z.mean())
    return zbar / np.sqrt((1.0 + (m - 1) * rho.value) / m)


def critical_value(
    method: str,
    m: int,
    alpha: float = 0.05,
    override: Optional[float] = None,
) -> Tuple[float, Optional[float]]:
    """Critical value (and beta, for the quantile method) for the M test.

    Variance method: c(m, alpha/2) from the embedded table, nondecreasing in
    m, with untabulated m mapped to the nearest larger tabulated m
    (conservative).  Quantile method: the fixed critical value z_{alpha/2}
    with beta from the companion table under the same lookup rule (a
    smaller beta inflates rho_hat2, shrinking |M| — also conservative).

    Only alpha = 0.05 is tabulated; other levels require an explicit
    override critical value and are not exact.

    Args:
        method: "variance" or "quantile".
        m: Number of splits (>= 2).
        alpha: Significance level; must be 0.05 unless override is given.
        override: Explicit critical value replacing the table lookup.

    Returns:
        Pair (critical value, beta) with beta None for the variance method.
    """
    if method not in _RHO_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {_RHO_METHODS}")
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    if override is not None:
        beta = _lookup_beta(m) if method == "quantile" else None
        return float(override), beta
    if abs(alpha - 0.05) > 1e-12:
        raise ValueError(
            f"critical values are tabulated only for alpha=0.05 (got {alpha}); "
            "supply an explicit override critical value for other levels"
        )
    if method == "variance":
        return _lookup_table(TABLE1_C, m), None
    return Z_ALPHA_HALF, _lookup_beta(m)


def _lookup_table(values: Sequence[float], m: int) -> float:
    """Nearest-larger-m lookup in the embedded tables."""
    if m > TABLE_M[-1]:
        raise ValueError(
            f"m={m} exceeds the largest tabulated number of splits {TABLE_M[-1]}"
        )
    idx = int(np.searchsorted(TABLE_M, m, side="left"))
    return float(values[idx])


def _lookup_beta(m: int) -> float:
    return _lookup_table(TABLE2_BETA, m)


def combine(method: str, pvals: Sequence[float], alpha: float = 0.05) -> TestResult:
    """Combine p-values by one of the baseline rules.

    Decision rules (all valid under arbitrary dependence except as noted):
      - mean2x: reject iff mean(p) <= alpha/2 (twice the average p-value is
        itself a valid p-value).
      - median2x: reject iff median(p) <= alpha/2.
      - zaverage: reject iff |sum Z_k| >= m z_{alpha/2}.
      - cauchy: reject iff sum tan((0.5 - p_k) pi) >= m c_alpha with
        c_alpha the upper-alpha standard Cauchy quantile (one-sided rule).
      - fisher, stouffer: classic combiners whose validity needs
        independent p-values; flagged in diagnostics.

    Args:
        method: One of COMBINER_NAMES.
        pvals: Nonempty p-values in (0, 1).
        alpha: Significance level.

    Returns:
        TestResult; the combined statistic is kept in diagnostics.
    """
    if method not in COMBINER_NAMES:
        raise ValueError(
            f"unknown combiner {method!r}; expected one of {COMBINER_NAMES}"
        )
    p = np.asarray(pvals, dtype=float)
    if p.ndim != 1 or p.shape[0] == 0:
        raise ValueError("combine needs a nonempty vector of p-values")
    if np.any((p <= 0.0) | (p >= 1.0)):
        p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    m = p.shape[0]

    diagnostics: Dict = {"m": m}
    if method == "mean2x":
        stat = float(p.mean())
        p_comb = min(1.0, 2.0 * stat)
        reject = stat <= alpha / 2.0
    elif method == "median2x":
        stat = float(np.median(p))
        p_comb = min(1.0, 2.0 * stat)
        reject = stat <= alpha / 2.0
    elif method == "zaverage":
        z = stats.norm.ppf(p)
        stat = float(np.sum(z))
        z_half = stats.norm.ppf(1.0 - alpha / 2.0)
        p_comb = float(2.0 * stats.norm.sf(abs(stat) / m))
        reject = abs(stat) >= m * z_half
    elif method == "cauchy":
        stat = float(np.sum(np.tan((0.5 - p) * np.pi)))
        c_alpha = float(stats.cauchy.ppf(1.0 - alpha))
        p_comb = float(stats.cauchy.sf(stat / m))
        reject = stat >= m * c_alpha
    elif method == "fisher":
        stat = float(-2.0 * np.sum(np.log(p)))
        p_comb = float(stats.chi2.sf(stat, df=2 * m))
        reject = p_comb < alpha
    else:  # stouffer
        z = stats.norm.ppf(p)
        stat = float(np.sum(z) / np.sqrt(m))
        p_comb = float(stats.norm.cdf(stat))
        reject = p_comb < alpha
    diagnostics["combined_statistic"] = stat
    if method in _INDEPENDENCE_ONLY:
        diagnostics["independence_only"] = True
    return TestResult(
        statistic=stat,
        p_value=float(np.clip(p_comb, 0.0, 1.0)),
        reject=bool(reject),
        method=method,
        diagnostics=diagnostics,
    )
