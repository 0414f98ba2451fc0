"""Multiple-splitting projection test (MPT).

Generates m random data splits, computes one projected t-test p-value per
split (normal reference), transforms to Z scores, estimates the common
pairwise correlation, and rejects when the exchangeable-mean statistic
|M_rho| exceeds the tabulated critical value.  Also provides an
exchangeability probe used by property tests.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from .combine import (
    RhoEstimate,
    critical_value,
    m_statistic,
    rho_hat1,
    rho_hat2,
    z_transform,
)
from .datagen import validate_data_matrix
from .optimizer import SolverOptions, solve_factored_batch
from .penalty import PenaltySpec
from .projtest import make_split, resolve_penalty

__all__ = [
    "MptResult",
    "ProbeReport",
    "generate_permutations",
    "split_pvalues",
    "mpt_from_pvalues",
    "mpt",
    "exchangeability_probe",
]


@dataclass
class MptResult:
    """Outcome of the multiple-splitting projection test.

    Attributes:
        p_values: Per-split p-values (length m).
        z: Z vector Phi^{-1}(p_k).
        rho_hat: Estimated common pairwise correlation.
        m_stat: The M statistic.
        critical: Critical value used for the decision.
        reject: True iff |m_stat| > critical.
        method: Label "mpt".
        diagnostics: Run-level metadata (m, kappa, penalty, counters).
        per_split_diagnostics: One compact dict per split.
    """

    p_values: np.ndarray
    z: np.ndarray
    rho_hat: RhoEstimate
    m_stat: float
    critical: float
    reject: bool
    method: str = "mpt"
    diagnostics: Dict = field(default_factory=dict)
    per_split_diagnostics: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "method": self.method,
            "p_values": [float(v) for v in self.p_values],
            "z": [float(v) for v in self.z],
            "rho_hat": {
                "value": float(self.rho_hat.value),
                "method": self.rho_hat.method,
                "beta": self.rho_hat.beta,
            },
            "m_stat": float(self.m_stat),
            "critical": float(self.critical),
            "reject": bool(self.reject),
            "diagnostics": dict(self.diagnostics),
            "per_split_diagnostics": [dict(d) for d in self.per_split_diagnostics],
        }


@dataclass
class ProbeReport:
    """Exchangeability probe summary.

    Attributes:
        corr_matrix: m x m pairwise correlation matrix of the statistics.
        corr_spread: max - min over off-diagonal pairwise correlations.
        corr_stderr: Conservative Monte Carlo stderr for a correlation
            difference, sqrt(2) * max_pair (1 - corr^2) / sqrt(reps).
        ks_matrix: m x m pairwise two-sample KS statistics.
        ks_max: Largest off-diagonal KS statistic.
        ks_critical: Two-sample KS critical value at level 0.01.
        reps: Number of replications.
        m: Number of statistics per replication.
    """

    corr_matrix: np.ndarray
    corr_spread: float
    corr_stderr: float
    ks_matrix: np.ndarray
    ks_max: float
    ks_critical: float
    reps: int
    m: int


def generate_permutations(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Draw m independent uniform permutations of {0, ..., n-1}.

    Each permutation comes from its own child stream spawned off rng, so
    split k's randomness is independent of the others and the whole batch
    is deterministic given the parent generator state.

    Args:
        n: Number of items (>= 4).
        m: Number of permutations (>= 2).
        rng: Parent random generator.

    Returns:
        Integer array (m, n); each row is a permutation.
    """
    if n < 4:
        raise ValueError(f"n must be >= 4, got {n}")
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    children = rng.spawn(m)
    perms = np.empty((m, n), dtype=np.int64)
    for k, child in enumerate(children):
        perms[k] = child.permutation(n)
    return perms


def _split_problems(
    X: np.ndarray,
    permutations: np.ndarray,
    kappa: float,
    penalty: Optional[PenaltySpec],
) -> Tuple[PenaltySpec, np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Build the per-split direction problems for one dataset.

    Returns (penalty, centered, xbar1, d2, n1, n2) where centered is the
    (m, n1, p) tensor of centered estimation halves, xbar1 the (m, p)
    estimation-half means, and d2 the (m, n2, p) testing halves.  Callers
    may stack problems from several datasets into one batched solve; the
    solver treats members independently.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    plan = make_split(n, kappa, permutations[0])
    n1, n2 = plan.n1, plan.n2
    pen = resolve_penalty(penalty, n1, p)
    d1 = X[permutations[:, :n1]]  # (m, n1, p)
    d2 = X[permutations[:, n1:]]  # (m, n2, p)
    xbar1 = d1.mean(axis=1)  # (m, p)
    centered = d1 - xbar1[:, None, :]
    return pen, centered, xbar1, d2, n1, n2


def _pvalues_from_directions(
    d2: np.ndarray, W: np.ndarray, n2: int, reference: str = "t"
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project testing halves on the fitted directions and t-test each split.

    Returns (p_values, degenerate, t_stats) where degenerate marks splits
    whose projected sample is constant at zero (direction identically
    zero); a constant nonzero projection raises ValueError.  The reference
    is "t" (Student t on n2 - 1 degrees of freedom, exact under Gaussian
    projections) or "normal".
    """
    if reference not in ("t", "normal"):
        raise ValueError(f"reference must be 't' or 'normal', got {reference!r}")
    y = np.matmul(d2, W[:, :, None])[:, :, 0]  # (m, n2)
    ybar = y.mean(axis=1)
    s_y = y.std(axis=1, ddof=1)
    degenerate = s_y == 0.0
    bad = degenerate & (ybar != 0.0)
    if np.any(bad):
        raise ValueError(
            "projected sample is constant and nonzero on split(s) "
            f"{np.flatnonzero(bad).tolist()}; the t statistic is undefined"
        )
    t_stats = np.zeros(d2.shape[0])
    np.divide(np.sqrt(n2) * ybar, s_y, out=t_stats, where=~degenerate)
    if reference == "t":
        tails = stats.t.sf(np.abs(t_stats), n2 - 1)
    else:
        tails = stats.norm.sf(np.abs(t_stats))
    pvals = np.where(degenerate, 1.0, 2.0 * tails)
    return pvals, degenerate, t_stats


def split_pvalues(
    X: np.ndarray,
    permutations: np.ndarray,
    kappa: float = 0.5,
    penalty: Optional[PenaltySpec] = None,
    solver_opts: Optional[SolverOptions] = None,
    reference: str = "t",
) -> Tuple[np.ndarray, List[Dict], Dict]:
    """Per-split projected-t p-values for the given splits.

    For each permutation: the first n1 rows estimate the direction by the
    penalized quadratic program (solved for all splits in one batched
    factored pass), the remaining n2 rows are projected and t-tested.
    Under the default Student reference p_k = 2(1 - G_{n2-1}(|T_k|)),
    which is exact for Gaussian data at any n2; the asymptotic normal
    reference p_k = 2(1 - Phi(|T_k|)) is available but anti-conservative
    at small n2, which the downstream combination amplifies.

    Args:
        X: Validated data matrix (n x p).
        permutations: Integer array (m, n) of row permutations.
        kappa: Testing fraction; n2 = floor(kappa n).
        penalty: Penalty specification; None selects Lasso at the
            rate-formula lambda.
        solver_opts: Solver options.
        reference: Per-split reference, "t" (default) or "normal".

    Returns:
        Triple (p_values, per_split_diagnostics, run_diagnostics).
    """
    pen, centered, xbar1, d2, n1, n2 = _split_problems(
        X, permutations, kappa, penalty
    )
    m = permutations.shape[0]
    W, info = solve_factored_batch(centered, xbar1, pen, solver_opts)
    pvals, degenerate, t_stats = _pvalues_from_directions(d2, W, n2, reference)
    nnz = np.count_nonzero(W, axis=1)
    per_split = [
        {
            "converged": bool(info["converged"][k]),
            "stationarity_residual": float(info["stationarity_residual"][k]),
            "nonzeros": int(nnz[k]),
            "t_stat": float(t_stats[k]),
            "degenerate": bool(degenerate[k]),
        }
        for k in range(m)
    ]
    run = {
        "m": m,
        "n1": n1,
        "n2": n2,
        "kappa": kappa,
        "penalty": pen.kind,
        "lambda": pen.lam,
        "reference": reference,
        "iterations_used": int(info["iterations_used"]),
        "nonconverged_splits": int(np.count_nonzero(~info["converged"])),
        "degenerate_splits": int(np.count_nonzero(degenerate)),
        "degenerate_mask": degenerate.tolist(),
    }
    return pvals, per_split, run


def mpt_from_pvalues(
    p_values: np.ndarray,
    alpha: float = 0.05,
    rho_method: str = "quantile",
    critical_override: Optional[float] = None,
    degenerate: Optional[np.ndarray] = None,
    diagnostics: Optional[Dict] = None,
    per_split_diagnostics: Optional[List[Dict]] = None,
) -> MptResult:
    """Combination stage of the multiple-splitting test, given split p-values.

    Transforms the per-split p-values to Z scores, estimates the common
    pairwise correlation by the chosen method, forms the exchangeable-mean
    statistic, and compares it against the tabulated critical value.  Used
    by mpt() and by the simulation harness, which computes split p-values
    once and feeds prefixes to several consumers.

    Degenerate splits — those whose estimated direction was identically
    zero, leaving no t statistic — are excluded from the combination: the
    correlation estimate, the M statistic, and the table lookup all use
    the effective number of informative splits.  Keeping them as p = 1
    would place Z values at the clamp boundary (about +7.94), which wrecks
    both the mean and the correlation estimate and destroys the level.
    Fewer than two informative splits means no evidence: accept.

    Args:
        p_values: Per-split p-values, length m >= 2.
        alpha: Level; only 0.05 is tabulated without critical_override.
        rho_method: "quantile" (default) or "variance".
        critical_override: Explicit critical value replacing the table.
        degenerate: Optional boolean mask (length m) marking degenerate
            splits; None treats every split as informative.
        diagnostics: Optional run metadata to carry into the result.
        per_split_diagnostics: Optional per-split metadata to carry along.

    Returns:
        MptResult; reject is True iff |M| > critical.  The z field is the
        transform of all reported p-values; the decision fields use only
        the informative splits (see diagnostics["m_effective"]).
    """
    pvals = np.asarray(p_values, dtype=float)
    m = pvals.size
    if degenerate is None:
        mask = np.zeros(m, dtype=bool)
    else:
        mask = np.asarray(degenerate, dtype=bool)
        if mask.shape != (m,):
            raise ValueError(
                f"degenerate mask has shape {mask.shape}, expected ({m},)"
            )
    m_eff = int(m - np.count_nonzero(mask))
    z = z_transform(pvals)
    run = dict(diagnostics) if diagnostics else {}
    run.update(
        {"alpha": alpha, "rho_method": rho_method, "m": m, "m_effective": m_eff}
    )
    if m_eff < 2:
        crit, _ = critical_value(rho_method, 2, alpha, override=critical_override)
        return MptResult(
            p_values=pvals,
            z=z,
            rho_hat=RhoEstimate(value=1.0, method=rho_method, beta=None),
            m_stat=0.0,
            critical=float(crit),
            reject=False,
            diagnostics=run,
            per_split_diagnostics=per_split_diagnostics or [],
        )
    z_eff = z_transform(pvals[~mask])
    crit, beta = critical_value(rho_method, m_eff, alpha, override=critical_override)
    if rho_method == "variance":
        rho = rho_hat1(z_eff)
    else:
        rho = rho_hat2(z_eff, beta)
    m_stat = m_statistic(z_eff, rho)
    return MptResult(
        p_values=pvals,
        z=z,
        rho_hat=rho,
        m_stat=float(m_stat),
        critical=float(crit),
        reject=bool(abs(m_stat) > crit),
        diagnostics=run,
        per_split_diagnostics=per_split_diagnostics or [],
    )


def mpt(
    data: np.ndarray,
    m: int = 40,
    kappa: float = 0.5,
    alpha: float = 0.05,
    penalty: Optional[PenaltySpec] = None,
    solver_opts: Optional[SolverOptions] = None,
    rho_method: str = "quantile",
    reference: str = "t",
    rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
    critical_override: Optional[float] = None,
) -> MptResult:
    """Multiple-splitting projection test.

    Runs m random splits, combines the split p-values through the Z
    transform and the exchangeable-mean statistic M_rho, and rejects at
    level alpha when |M_rho| exceeds the tabulated critical value.

    Args:
        data: Sample matrix (n x p), n >= 4, no constant columns.
        m: Number of splits; the recommended practical range is [30, 60].
        kappa: Testing fraction (default 0.5).
        alpha: Level; only 0.05 is tabulated — other levels need
            critical_override.
        penalty: Penalty specification; None selects Lasso at the
            rate-formula lambda.
        solver_opts: Solver options.
        rho_method: "quantile" (default, preferred for larger m) or
            "variance".
        reference: Per-split reference, "t" (default, exact for Gaussian
            data at any n2) or "normal" (asymptotic).
        rng: Random generator for the permutations; a fresh generator from
            seed is used when omitted.
        seed: Seed for the default generator when rng is omitted.
        critical_override: Explicit critical value replacing the table.

    Returns:
        MptResult; reject is True iff |M| > critical.
    """
    X = validate_data_matrix(data)
    n, _ = X.shape
    if rng is None:
        rng = np.random.default_rng(seed)
    perms = generate_permutations(n, m, rng)
    pvals, per_split, run = split_pvalues(
        X, perms, kappa, penalty, solver_opts, reference
    )
    return mpt_from_pvalues(
        pvals,
        alpha=alpha,
        rho_method=rho_method,
        critical_override=critical_override,
        degenerate=np.asarray(run["degenerate_mask"], dtype=bool),
        diagnostics=run,
        per_split_diagnostics=per_split,
    )


def exchangeability_probe(
    data_generator: Callable[[int], np.ndarray],
    statistic_map: Callable[[np.ndarray, int], np.ndarray],
    m: int,
    reps: int,
) -> ProbeReport:
    """Estimate departures from exchangeability of per-split statistics.

    Over reps generated datasets, collects the m-vector of statistics and
    summarizes (a) marginal equality across split indices via pairwise
    two-sample KS statistics and (b) equality of all pairwise correlations
    via the max - min spread.  Both are exactly zero in expectation for an
    exchangeable splitting procedure; the report is consumed by property
    tests, not by any test decision.

    Args:
        data_generator: Maps a replication index to a dataset.
        statistic_map: Maps (dataset, replication index) to an m-vector.
        m: Number of statistics per replication (>= 3).
        reps: Number of replications (>= 2).

    Returns:
        ProbeReport with spreads and reference thresholds.
    """
    if m < 3:
        raise ValueError(f"probe needs m >= 3, got {m}")
    if reps < 2:
        raise ValueError(f"probe needs reps >= 2, got {reps}")
    T = np.empty((reps, m))
    for r in range(reps):
        t_vec = np.asarray(statistic_map(data_generator(r), r), dtype=float)
        if t_vec.shape != (m,):
            raise ValueError(
                f"statistic_map returned shape {t_vec.shape}, expected ({m},)"
            )
        T[r] = t_vec

    stds = T.std(axis=0)
    corr = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            if stds[i] == 0.0 or stds[j] == 0.0:
                # Constant statistics are trivially exchangeable.
                c = 0.0
            else:
                c = float(np.corrcoef(T[:, i], T[:, j])[0, 1])
            corr[i, j] = corr[j, i] = c
    off = corr[~np.eye(m, dtype=bool)]
    corr_spread = float(off.max() - off.min())
    corr_stderr = float(np.sqrt(2.0) * np.max(1.0 - off**2) / np.sqrt(reps))

    ks = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            stat = float(stats.ks_2samp(T[:, i], T[:, j], method="asymp").statistic)
            ks[i, j] = ks[j, i] = stat
    ks_max = float(ks.max())
    # Asymptotic two-sample KS critical value at level 0.01 for equal sizes.
    ks_critical = float(1.6276 * np.sqrt(2.0 / reps))
    return ProbeReport(
        corr_matrix=corr,
        corr_spread=corr_spread,
        corr_stderr=corr_stderr,
        ks_matrix=ks,
        ks_max=ks_max,
        ks_critical=ks_critical,
        reps=reps,
        m=m,
    )
