"""Single-splitting projection test (SPT).

Splits the sample, estimates the projection direction on the first half by
the regularized quadratic program, and applies a one-sample t-test to the
projected second half.  Also provides the asymptotic power oracle
Phi(-z_{alpha/2} + sqrt(n kappa zeta)) with zeta = mu' Sigma^{-1} mu.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import stats

from .datagen import validate_data_matrix
from .optimizer import (
    DirectionEstimate,
    SolverOptions,
    default_lambda,
    estimate_direction,
)
from .penalty import PenaltySpec

__all__ = [
    "SplitPlan",
    "TestResult",
    "make_split",
    "project_and_t",
    "spt",
    "spt_power_oracle",
    "resolve_penalty",
]

_REFERENCES = ("normal", "t")


@dataclass(frozen=True)
class SplitPlan:
    """A permutation of row indices with the two half sizes.

    The first n1 permuted indices form the estimation half D1; the
    remaining n2 indices form the testing half D2.

    Attributes:
        permutation: Integer array, a bijection on {0, ..., n-1}.
        n1: Estimation-half size (>= 2).
        n2: Testing-half size (>= 2).
    """

    permutation: np.ndarray
    n1: int
    n2: int

    def __post_init__(self):
        perm = np.asarray(self.permutation)
        n = self.n1 + self.n2
        if perm.shape != (n,):
            raise ValueError(
                f"permutation length {perm.shape} does not match n1+n2={n}"
            )
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("both halves need at least 2 observations")
        if not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("permutation must be a bijection on 0..n-1")

    @property
    def d1_indices(self) -> np.ndarray:
        return np.asarray(self.permutation)[: self.n1]

    @property
    def d2_indices(self) -> np.ndarray:
        return np.asarray(self.permutation)[self.n1 :]


@dataclass
class TestResult:
    """Outcome of a single hypothesis test.

    Attributes:
        statistic: Test statistic value.
        p_value: p-value in [0, 1].
        reject: Decision at the supplied level.
        method: Label of the test that produced the result.
        diagnostics: Free-form metadata (solver convergence, sparsity, ...).
    """

    statistic: float
    p_value: float
    reject: bool
    method: str
    diagnostics: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "statistic": float(self.statistic),
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "method": self.method,
            "diagnostics": dict(self.diagnostics),
        }


def make_split(n: int, kappa: float, permutation: np.ndarray) -> SplitPlan:
    """Build a SplitPlan with testing-half size n2 = floor(kappa * n).

    Args:
        n: Total sample size.
        kappa: Testing fraction in (0, 1); values in [0.4, 0.6] are the
            recommended range.
        permutation: Bijection on {0, ..., n-1}.

    Returns:
        SplitPlan with n2 = floor(kappa n) and n1 = n - n2.
    """
    if not (0.0 < kappa < 1.0):
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    n2 = int(np.floor(kappa * n))
    n1 = n - n2
    if n1 < 2 or n2 < 2:
        raise ValueError(
            f"split infeasible: n={n}, kappa={kappa} gives halves ({n1}, {n2});"
            " both need >= 2 observations"
        )
    return SplitPlan(permutation=np.asarray(permutation), n1=n1, n2=n2)


def project_and_t(
    data2: np.ndarray, w: np.ndarray, reference: str = "normal"
) -> Tuple[float, float, bool]:
    """Project the testing half onto w and run the one-sample t-test.

    The statistic is T = sqrt(n2) * ybar / s_y with s_y the unbiased
    standard deviation of the projections y_i = w'x_i.  The p-value is
    2(1 - Phi(|T|)) under the "normal" reference or 2(1 - G_{n2-1}(|T|))
    under the "t" (Student) reference.

    Args:
        data2: Testing-half rows (n2 x p).
        w: Projection direction.
        reference: "normal" or "t".

    Returns:
        Triple (statistic, p_value, degenerate).  A degenerate all-zero
        projection (w = 0 or identically zero y) yields (0.0, 1.0, True).

    Raises:
        ValueError: If the projection is constant but nonzero (s_y = 0 with
            ybar != 0), which only arises from pathological inputs.
    """
    if reference not in _REFERENCES:
        raise ValueError(f"unknown reference {reference!r}; expected one of {_REFERENCES}")
    data2 = np.asarray(data2, dtype=float)
    n2 = data2.shape[0]
    if n2 < 2:
        raise ValueError(f"testing half needs at least 2 observations, got {n2}")
    y = data2 @ np.asarray(w, dtype=float)
    ybar = float(y.mean())
    s_y = float(y.std(ddof=1))
    if s_y == 0.0:
        if ybar == 0.0:
            return 0.0, 1.0, True
        raise ValueError(
            "projected sample is constant and nonzero; the t statistic is undefined"
        )
    t_stat = float(np.sqrt(n2) * ybar / s_y)
    if reference == "normal":
        p = 2.0 * stats.norm.sf(abs(t_stat))
    else:
        p = 2.0 * stats.t.sf(abs(t_stat), df=n2 - 1)
    return t_stat, float(p), False


def resolve_penalty(
    penalty: Optional[PenaltySpec], n1: int, p: int, c0: float = 1.0
) -> PenaltySpec:
    """Fill in the rate-formula lambda when the caller left it unset.

    Args:
        penalty: Penalty with a concrete lambda, or None for the default
            Lasso at the rate-formula level.
        n1: Estimation-half size.
        p: Dimension.
        c0: Rate constant for the default lambda.

    Returns:
        PenaltySpec with a concrete lambda.
    """
    if penalty is None:
        return PenaltySpec(kind="lasso", lam=default_lambda(n1, p, c0))
    return penalty


def spt(
    data: np.ndarray,
    plan: SplitPlan,
    penalty: Optional[PenaltySpec] = None,
    solver_opts: Optional[SolverOptions] = None,
    reference: str = "normal",
    alpha: float = 0.05,
) -> TestResult:
    """Single-splitting projection test.

    Estimates the direction from D1 by minimizing
    1/2 w'Sigma1_hat w - xbar1'w + P_lambda(w) (Sigma1_hat the centered
    1/n1-normalized sample covariance) and t-tests the projected D2.

    Args:
        data: Full sample (n x p).
        plan: Split plan consistent with the data.
        penalty: Penalty specification; None selects Lasso with the
            rate-formula lambda sqrt(log p / n1).
        solver_opts: Solver options.
        reference: "normal" (default) or "t" for the Student reference,
            which is exact for Gaussian data.
        alpha: Test level.

    Returns:
        TestResult with solver diagnostics (sparsity, convergence) attached.
    """
    X = validate_data_matrix(data)
    n, p = X.shape
    if plan.n1 + plan.n2 != n:
        raise ValueError(
            f"plan sizes ({plan.n1}+{plan.n2}) do not match data rows ({n})"
        )
    d1 = X[plan.d1_indices]
    d2 = X[plan.d2_indices]
    xbar1 = d1.mean(axis=0)
    centered = d1 - xbar1
    sigma1 = centered.T @ centered / plan.n1
    pen = resolve_penalty(penalty, plan.n1, p)
    est: DirectionEstimate = estimate_direction(sigma1, xbar1, pen, solver_opts)
    stat, p_value, degenerate = project_and_t(d2, est.w_hat, reference)
    diagnostics = est.to_dict()
    diagnostics.update({
        "degenerate": degenerate,
        "reference": reference,
        "lambda": pen.lam,
        "penalty": pen.kind,
        "n1": plan.n1,
        "n2": plan.n2,
    })
    return TestResult(
        statistic=stat,
        p_value=p_value,
        reject=bool(p_value < alpha),
        method="spt",
        diagnostics=diagnostics,
    )


def spt_power_oracle(n: int, kappa: float, zeta: float, alpha: float = 0.05) -> float:
    """Asymptotic SPT power Phi(-z_{alpha/2} + sqrt(n kappa zeta)).

    Args:
        n: Total sample size.
        kappa: Testing fraction.
        zeta: Noncentrality mu' Sigma^{-1} mu (>= 0).
        alpha: Test level.

    Returns:
        Asymptotic power in [0, 1].
    """
    if zeta < 0:
        raise ValueError(f"zeta must be nonnegative, got {zeta}")
    z_half = stats.norm.ppf(1.0 - alpha / 2.0)
    return float(stats.norm.cdf(-z_half + np.sqrt(n * kappa * zeta)))
