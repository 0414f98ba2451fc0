"""Covariance construction, multivariate sampling, and reproducible seeding.

Builds the compound-symmetry and autocorrelation covariance families,
samples Gaussian and multivariate-t data via Cholesky factors, and derives
independent per-(replication, split) random streams from a single master
seed so that serial and parallel runs are bit-identical.
"""

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla

__all__ = [
    "CovarianceSpec",
    "MeanSpec",
    "SeedPolicy",
    "build_covariance",
    "cholesky_factor",
    "ar1_cholesky",
    "covariance_cholesky",
    "realize_mean",
    "sample_gaussian",
    "sample_student_t",
    "derive_seed",
    "make_rng",
    "validate_data_matrix",
]

_FAMILIES = ("cs", "ar", "identity", "custom")


@dataclass(frozen=True)
class CovarianceSpec:
    """Covariance family specification.

    Attributes:
        family: One of "cs" (compound symmetry), "ar" (autocorrelation),
            "identity", or "custom".
        r: Correlation parameter in [0, 1) for the CS/AR families.
        matrix: Explicit symmetric matrix for the "custom" family.
    """

    family: str
    r: float = 0.0
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(
                f"unknown covariance family {self.family!r}; expected one of {_FAMILIES}"
            )
        if self.family in ("cs", "ar") and not (0.0 <= self.r < 1.0):
            raise ValueError(f"correlation r must lie in [0, 1), got {self.r}")
        if self.family == "custom":
            if self.matrix is None:
                raise ValueError("custom covariance requires an explicit matrix")
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError("custom covariance matrix must be square")
            if not np.allclose(m, m.T, atol=1e-12, rtol=0.0):
                raise ValueError("custom covariance matrix must be symmetric")


@dataclass(frozen=True)
class MeanSpec:
    """Mean-vector specification.

    Attributes:
        pattern: "sparse_ones" (first k entries equal to c, rest zero) or
            "custom" (explicit vector).
        c: Signal scale for the sparse_ones pattern.
        k: Number of nonzero entries for the sparse_ones pattern.
        vector: Explicit mean vector for the custom pattern.
    """

    pattern: str = "sparse_ones"
    c: float = 0.0
    k: int = 10
    vector: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.pattern not in ("sparse_ones", "custom"):
            raise ValueError(f"unknown mean pattern {self.pattern!r}")
        if self.pattern == "sparse_ones" and self.k < 0:
            raise ValueError("sparse_ones requires k >= 0")
        if self.pattern == "custom" and self.vector is None:
            raise ValueError("custom mean requires an explicit vector")


@dataclass(frozen=True)
class SeedPolicy:
    """Derivation rule for per-(replication, split) random streams.

    Streams are spawned from numpy's SeedSequence with
    spawn_key=(replication, split), which is a pure function of the inputs
    and collision-free across distinct index pairs.

    Attributes:
        master_seed: 64-bit master seed.
    """

    master_seed: int


def realize_mean(spec: MeanSpec, p: int) -> np.ndarray:
    """Materialize the mean vector of dimension p.

    Args:
        spec: Mean specification.
        p: Dimension.

    Returns:
        Length-p mean vector.
    """
    if p < 1:
        raise ValueError(f"dimension p must be positive, got {p}")
    if spec.pattern == "custom":
        mu = np.asarray(spec.vector, dtype=float)
        if mu.shape != (p,):
            raise ValueError(f"custom mean has shape {mu.shape}, expected ({p},)")
        return mu.copy()
    if spec.k > p:
        raise ValueError(f"sparse_ones k={spec.k} exceeds dimension p={p}")
    mu = np.zeros(p)
    mu[: spec.k] = spec.c
    return mu


def build_covariance(spec: CovarianceSpec, p: int) -> np.ndarray:
    """Construct the p x p covariance matrix for the given family.

    CS: sigma_ij = r for i != j with unit diagonal.  AR: sigma_ij = r^|i-j|.

    Args:
        spec: Covariance specification.
        p: Dimension (positive).

    Returns:
        Symmetric p x p covariance matrix.
    """
    if p < 1:
        raise ValueError(f"dimension p must be positive, got {p}")
    if spec.family == "identity":
        return np.eye(p)
    if spec.family == "custom":
        m = np.asarray(spec.matrix, dtype=float)
        if m.shape != (p, p):
            raise ValueError(f"custom covariance has shape {m.shape}, expected ({p},{p})")
        return m.copy()
    if spec.family == "cs":
        sigma = np.full((p, p), spec.r)
        np.fill_diagonal(sigma, 1.0)
        return sigma
    # ar
    idx = np.arange(p)
    return spec.r ** np.abs(np.subtract.outer(idx, idx))


def cholesky_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = sigma.

    Args:
        sigma: Symmetric positive-definite matrix.

    Returns:
        Lower-triangular Cholesky factor.

    Raises:
        ValueError: If sigma is asymmetric, or not positive definite (the
            failing pivot index is reported).
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T, atol=1e-12, rtol=0.0):
        raise ValueError("covariance must be symmetric")
    try:
        return sla.cholesky(sigma, lower=True)
    except sla.LinAlgError as exc:
        match = re.search(r"(\d+)-th leading minor", str(exc))
        pivot = int(match.group(1)) if match else -1
        raise ValueError(
            f"covariance is not positive definite (failing pivot index {pivot})"
        ) from exc


def ar1_cholesky(r: float, p: int) -> np.ndarray:
    """Closed-form Cholesky factor of the AR(1) covariance r^|i-j|.

    Column 0 is r^i; column j >= 1 is r^(i-j) * sqrt(1 - r^2) for i >= j.
    Runs in O(p^2) instead of the dense O(p^3) factorization.

    Args:
        r: AR parameter in [0, 1).
        p: Dimension.

    Returns:
        Lower-triangular factor L with L L^T equal to the AR(1) matrix.
    """
    if not (0.0 <= r < 1.0):
        raise ValueError(f"AR parameter r must lie in [0, 1), got {r}")
    if p < 1:
        raise ValueError(f"dimension p must be positive, got {p}")
    L = np.zeros((p, p))
    L[:, 0] = r ** np.arange(p)
    scale = np.sqrt(1.0 - r * r)
    for j in range(1, p):
        L[j:, j] = scale * r ** np.arange(p - j)
    return L


def covariance_cholesky(spec: CovarianceSpec, p: int) -> np.ndarray:
    """Cholesky factor of the family covariance, using the AR fast path.

    Args:
        spec: Covariance specification.
        p: Dimension.

    Returns:
        Lower-triangular factor of build_covariance(spec, p).
    """
    if spec.family == "ar":
        return ar1_cholesky(spec.r, p)
    if spec.family == "identity":
        return np.eye(p)
    return cholesky_factor(build_covariance(spec, p))


def sample_gaussian(
    n: int, mu: np.ndarray, L: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample n i.i.d. rows from N_p(mu, L L^T).

    Args:
        n: Number of observations.
        mu: Length-p mean vector.
        L: p x p Cholesky-type factor of the covariance.
        rng: Random generator; output is deterministic given its state.

    Returns:
        n x p data matrix with rows mu + L z, z standard normal.
    """
    mu = np.asarray(mu, dtype=float)
    L = np.asarray(L, dtype=float)
    p = mu.shape[0]
    if L.shape != (p, p):
        raise ValueError(f"factor has shape {L.shape}, expected ({p},{p})")
    z = rng.standard_normal((n, p))
    return mu + z @ L.T


def sample_student_t(
    n: int,
    mu: np.ndarray,
    L: np.ndarray,
    df: float,
    rng: np.random.Generator,
    rescale_to_covariance: bool = False,
) -> np.ndarray:
    """Sample n i.i.d. rows from a multivariate t distribution.

    Rows are mu + (L z) * sqrt(df / W) with W ~ chi-square(df), so by
    default Sigma = L L^T is the *scale* matrix and the covariance equals
    Sigma * df/(df-2).  Pass rescale_to_covariance=True to shrink the scale
    so the covariance is exactly Sigma.

    Args:
        n: Number of observations.
        mu: Length-p mean vector.
        L: p x p factor of the scale matrix.
        df: Degrees of freedom; must exceed 2 for a finite covariance.
        rng: Random generator.
        rescale_to_covariance: If True, rescale so cov equals L L^T.

    Returns:
        n x p data matrix.
    """
    if df <= 2:
        raise ValueError(f"multivariate t requires df > 2, got {df}")
    mu = np.asarray(mu, dtype=float)
    L = np.asarray(L, dtype=float)
    p = mu.shape[0]
    if L.shape != (p, p):
        raise ValueError(f"factor has shape {L.shape}, expected ({p},{p})")
    z = rng.standard_normal((n, p))
    w = rng.chisquare(df, size=n)
    scale = np.sqrt(df / w)[:, None]
    centered = (z @ L.T) * scale
    if rescale_to_covariance:
        centered *= np.sqrt((df - 2.0) / df)
    return mu + centered


def derive_seed(policy: SeedPolicy, replication: int, split: int) -> int:
    """Pure derivation of a 64-bit seed for a (replication, split) pair.

    Args:
        policy: Seed policy with the master seed.
        replication: Replication index >= 0.
        split: Split index >= 0.

    Returns:
        64-bit integer seed, distinct across distinct index pairs.
    """
    if replication < 0 or split < 0:
        raise ValueError("replication and split indices must be nonnegative")
    seq = np.random.SeedSequence(policy.master_seed, spawn_key=(replication, split))
    return int(seq.generate_state(1, np.uint64)[0])


def make_rng(policy: SeedPolicy, replication: int, split: int) -> np.random.Generator:
    """Independent random generator for a (replication, split) pair.

    Args:
        policy: Seed policy with the master seed.
        replication: Replication index >= 0.
        split: Split index >= 0.

    Returns:
        numpy Generator seeded by the derived stream.
    """
    if replication < 0 or split < 0:
        raise ValueError("replication and split indices must be nonnegative")
    seq = np.random.SeedSequence(policy.master_seed, spawn_key=(replication, split))
    return np.random.Generator(np.random.PCG64(seq))


def validate_data_matrix(X: np.ndarray, min_rows: int = 4) -> np.ndarray:
    """Validate an observations-by-variables data matrix for testing.

    Rejects non-2-d input, too few rows, non-finite entries, and
    zero-variance (constant) columns, for which the projected t statistic
    is undefined.

    Args:
        X: Candidate data matrix.
        min_rows: Minimum number of observations required.

    Returns:
        The validated matrix as a float array.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"data must be a 2-d matrix, got ndim={X.ndim}")
    n, p = X.shape
    if n < min_rows:
        raise ValueError(f"need at least {min_rows} observations, got {n}")
    if p < 1:
        raise ValueError("data must have at least one column")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite entries")
    variances = X.var(axis=0)
    dead = np.flatnonzero(variances == 0.0)
    if dead.size:
        raise ValueError(
            f"zero-variance (constant) column(s) at index {dead.tolist()}: "
            "the projected t statistic is undefined for constant data"
        )
    return X
