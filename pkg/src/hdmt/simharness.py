"""Monte Carlo size/power harness over scenario grids.

Each replication samples one dataset and runs every configured test on it
(common random numbers: all tests see the same data, sharpening
comparisons).  Multi-split tests additionally share one batched set of
split p-values per replication, so the single-split test, the multi-split
test at several m, and the p-value combiners are evaluated on identical
splits — the variance-reduction device behind the power-vs-m study.

Replications may run on a thread pool.  All randomness is derived from
(master_seed, replication, stream) seed sequences and results land in
replication-indexed slots, so parallel and serial execution produce
identical rows.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .baselines import clx_test, cq_test, random_projection_test, ridge_projection_test
from .combine import combine
from .datagen import (
    CovarianceSpec,
    MeanSpec,
    SeedPolicy,
    covariance_cholesky,
    make_rng,
    realize_mean,
    sample_gaussian,
    sample_student_t,
)
from .mpt import (
    _pvalues_from_directions,
    _split_problems,
    generate_permutations,
    mpt_from_pvalues,
)
from .optimizer import solve_factored_batch
from .penalty import PenaltySpec
from .projtest import resolve_penalty

__all__ = [
    "TestSpec",
    "ScenarioConfig",
    "SizePowerRow",
    "scenario_key",
    "run_scenario",
    "run_grid",
    "power_vs_m_study",
    "MULTISPLIT_METHODS",
    "BASELINE_METHODS",
]

# Fixed stream indices within a replication; adding a stream must not
# renumber existing ones or previously published results change.
_CHUNK_REPS = 32
_STREAM_DATA = 0
_STREAM_SPLITS = 1
_STREAM_RPT = 2
_STREAM_RIDGE = 3

# Per-replication outcome codes.
_ACCEPT = 0
_REJECT = 1
_FAIL = -1

_COMBINER_METHODS = frozenset(
    {"mean2x", "median2x", "zaverage", "cauchy", "fisher", "stouffer"}
)
MULTISPLIT_METHODS = frozenset({"spt", "mpt"} | _COMBINER_METHODS)
BASELINE_METHODS = frozenset({"cq", "clx", "rpt", "ridge"})
_KNOWN_METHODS = MULTISPLIT_METHODS | BASELINE_METHODS

_MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class TestSpec:
    """One test to run in every replication of a scenario.

    Attributes:
        method: Test identifier: "spt", "mpt", a combiner ("mean2x",
            "median2x", "zaverage", "cauchy", "fisher", "stouffer"), or a
            baseline ("cq", "clx", "rpt", "ridge").
        name: Row label; defaults to the method name.  Must be unique
            within a scenario.
        m: Number of splits for "mpt" and the combiners (>= 2).
        kappa: Testing fraction for splitting methods.
        penalty: Penalty for the direction estimate; None selects Lasso at
            the rate-formula lambda with factor lambda_c0.
        lambda_c0: Rate-formula constant used when penalty is None.
        reference: "normal" or "t" per-split null reference for the
            splitting methods; None picks the method default ("normal" for
            spt, "t" for mpt, the combiners, and ridge).
        rho_method: "variance" or "quantile" correlation estimator (mpt).
        k: Projection dimension for "rpt"; None means floor(n/2).
        ridge_lambda: Ridge level for "ridge"; None means sqrt(log p / n1).
    """

    method: str
    name: Optional[str] = None
    m: int = 40
    kappa: float = 0.5
    penalty: Optional[PenaltySpec] = None
    lambda_c0: float = 1.0
    reference: Optional[str] = None
    rho_method: str = "quantile"
    k: Optional[int] = None
    ridge_lambda: Optional[float] = None

    def __post_init__(self):
        if self.method not in _KNOWN_METHODS:
            raise ValueError(
                f"unknown test method {self.method!r}; expected one of "
                f"{sorted(_KNOWN_METHODS)}"
            )
        if self.method in _COMBINER_METHODS or self.method == "mpt":
            if self.m < 2:
                raise ValueError(f"{self.method} needs m >= 2 splits, got {self.m}")
        if not (0.0 < self.kappa < 1.0):
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.lambda_c0 <= 0:
            raise ValueError(f"lambda_c0 must be positive, got {self.lambda_c0}")
        if self.reference not in (None, "normal", "t"):
            raise ValueError(f"reference must be 'normal' or 't', got {self.reference!r}")
        if self.rho_method not in ("variance", "quantile"):
            raise ValueError(
                f"rho_method must be 'variance' or 'quantile', got {self.rho_method!r}"
            )
        if self.k is not None and self.k < 1:
            raise ValueError(f"projection dimension k must be >= 1, got {self.k}")
        if self.ridge_lambda is not None and self.ridge_lambda <= 0:
            raise ValueError(f"ridge_lambda must be positive, got {self.ridge_lambda}")

    @property
    def label(self) -> str:
        return self.name if self.name is not None else self.method


@dataclass(frozen=True)
class ScenarioConfig:
    """A fully specified Monte Carlo scenario.

    Attributes:
        n: Sample size per replication (>= 4).
        p: Dimension.
        covariance: Covariance family specification.
        mean: Mean-vector specification (c = 0 gives the null).
        distribution: "gaussian" or "t" (multivariate Student).
        df: Degrees of freedom for the t distribution (> 2); samples are
            rescaled so the covariance equals the specified matrix.
        alpha: Test level.
        reps: Number of replications (>= 1).
        tests: Tests run on every replication; labels must be unique.
        master_seed: Master seed; every stream derives from it.
    """

    n: int
    p: int
    covariance: CovarianceSpec
    mean: MeanSpec
    distribution: str = "gaussian"
    df: float = 6.0
    alpha: float = 0.05
    reps: int = 1000
    tests: Tuple[TestSpec, ...] = (TestSpec("mpt"),)
    master_seed: int = 0

    def __post_init__(self):
        if self.n < 4:
            raise ValueError(f"need n >= 4, got {self.n}")
        if self.p < 1:
            raise ValueError(f"need p >= 1, got {self.p}")
        if self.distribution not in ("gaussian", "t"):
            raise ValueError(
                f"distribution must be 'gaussian' or 't', got {self.distribution!r}"
            )
        if self.distribution == "t" and self.df <= 2:
            raise ValueError(f"t distribution needs df > 2, got {self.df}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.reps < 1:
            raise ValueError(f"need reps >= 1, got {self.reps}")
        object.__setattr__(self, "tests", tuple(self.tests))
        if not self.tests:
            raise ValueError("scenario needs at least one test")
        labels = [t.label for t in self.tests]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate test labels in scenario: {labels}")


@dataclass(frozen=True)
class SizePowerRow:
    """Aggregated rejection rate for one (scenario, test) pair.

    Attributes:
        scenario: Scenario key (see scenario_key).
        test: Test label.
        rejection_rate: Fraction of completed replications that rejected.
        mc_stderr: sqrt(rate (1 - rate) / reps_completed).
        reps_completed: Replications that produced a decision.
        failures: Replications where this test raised and was skipped.
    """

    scenario: str
    test: str
    rejection_rate: float
    mc_stderr: float
    reps_completed: int
    failures: int

    def to_dict(self) -> Dict:
        return {
            "scenario": self.scenario,
            "test": self.test,
            "rejection_rate": self.rejection_rate,
            "mc_stderr": self.mc_stderr,
            "reps_completed": self.reps_completed,
            "failures": self.failures,
        }


def scenario_key(config: ScenarioConfig) -> str:
    """Compact, deterministic identifier of a scenario's data-generating law.

    Args:
        config: Scenario configuration.

    Returns:
        Key string such as "n40_p100_cs0.5_c0.5_k10_gaussian".
    """
    cov = config.covariance
    if cov.family in ("cs", "ar"):
        cov_part = f"{cov.family}{cov.r:g}"
    else:
        cov_part = cov.family
    mean = config.mean
    if mean.pattern == "sparse_ones":
        mean_part = f"c{mean.c:g}_k{mean.k}"
    else:
        mean_part = "custom_mean"
    if config.distribution == "gaussian":
        dist_part = "gaussian"
    else:
        dist_part = f"t{config.df:g}"
    return f"n{config.n}_p{config.p}_{cov_part}_{mean_part}_{dist_part}"


@dataclass
class _SplitGroup:
    """Multi-split tests sharing (kappa, penalty): one batched solve per rep."""

    kappa: float
    penalty: PenaltySpec
    m_max: int = 1
    members: List[Tuple[int, TestSpec]] = field(default_factory=list)


def _plan(
    specs: Sequence[TestSpec], n: int, p: int
) -> Tuple[List[_SplitGroup], List[Tuple[int, TestSpec]]]:
    """Group multi-split tests by shared split configuration."""
    groups: Dict[Tuple, _SplitGroup] = {}
    baselines: List[Tuple[int, TestSpec]] = []
    for slot, spec in enumerate(specs):
        if spec.method in BASELINE_METHODS:
            baselines.append((slot, spec))
            continue
        n2 = int(np.floor(spec.kappa * n))
        n1 = n - n2
        resolved = resolve_penalty(spec.penalty, n1, p, spec.lambda_c0)
        key = (spec.kappa, resolved)
        group = groups.setdefault(key, _SplitGroup(spec.kappa, resolved))
        group.members.append((slot, spec))
        needed = 1 if spec.method == "spt" else spec.m
        group.m_max = max(group.m_max, needed)
    return list(groups.values()), baselines


def _decide_multisplit(
    spec: TestSpec,
    t_stats: np.ndarray,
    degenerate: np.ndarray,
    n2: int,
    alpha: float,
) -> bool:
    """Decision for one multi-split test from the shared split statistics.

    Every consumer evaluates the same per-split |t| under its own null
    reference; degenerate splits carry t = 0, hence p = 1 under either
    reference.
    """
    if spec.method == "spt":
        reference = spec.reference or "normal"
        t_abs = abs(float(t_stats[0]))
        if reference == "t":
            p = float(2.0 * stats.t.sf(t_abs, n2 - 1))
        else:
            p = float(2.0 * stats.norm.sf(t_abs))
        return p < alpha
    reference = spec.reference or "t"
    t_prefix = np.abs(t_stats[: spec.m])
    if reference == "t":
        prefix = 2.0 * stats.t.sf(t_prefix, n2 - 1)
    else:
        prefix = 2.0 * stats.norm.sf(t_prefix)
    if spec.method == "mpt":
        return mpt_from_pvalues(
            prefix,
            alpha=alpha,
            rho_method=spec.rho_method,
            degenerate=degenerate[: spec.m],
        ).reject
    return combine(spec.method, prefix, alpha).reject


def _decide_baseline(
    spec: TestSpec,
    X: np.ndarray,
    policy: SeedPolicy,
    rep: int,
    alpha: float,
) -> bool:
    """Decision for one baseline test on the replication's dataset."""
    if spec.method == "cq":
        return cq_test(X, alpha).reject
    if spec.method == "clx":
        return clx_test(X, alpha).reject
    if spec.method == "rpt":
        rng = make_rng(policy, rep, _STREAM_RPT)
        return random_projection_test(X, k=spec.k, rng=rng, alpha=alpha).reject
    rng = make_rng(policy, rep, _STREAM_RIDGE)
    return ridge_projection_test(
        X,
        kappa=spec.kappa,
        ridge_lambda=spec.ridge_lambda,
        rng=rng,
        alpha=alpha,
        reference=spec.reference or "t",
    ).reject


def run_scenario(config: ScenarioConfig, threads: int = 1) -> List[SizePowerRow]:
    """Run all replications of one scenario and aggregate per test.

    Args:
        config: Scenario configuration.
        threads: Worker threads; any value >= 1 yields identical rows.

    Returns:
        One SizePowerRow per configured test, in configuration order.

    Raises:
        RuntimeError: If any test fails on more than 5% of replications.
    """
    n, p = config.n, config.p
    mu = realize_mean(config.mean, p)
    L = covariance_cholesky(config.covariance, p)
    specs = list(config.tests)
    groups, baselines = _plan(specs, n, p)
    codes = np.full((config.reps, len(specs)), _ACCEPT, dtype=np.int8)
    policy = SeedPolicy(config.master_seed)

    def chunk_worker(chunk: range) -> None:
        datasets = []
        for rep in chunk:
            rng_data = make_rng(policy, rep, _STREAM_DATA)
            if config.distribution == "gaussian":
                datasets.append(sample_gaussian(n, mu, L, rng_data))
            else:
                datasets.append(
                    sample_student_t(
                        n, mu, L, config.df, rng_data, rescale_to_covariance=True
                    )
                )
        for group in groups:
            slots = [slot for slot, _ in group.members]
            m_req = group.m_max
            problems = []
            for X, rep in zip(datasets, chunk):
                try:
                    rng_split = make_rng(policy, rep, _STREAM_SPLITS)
                    perms = generate_permutations(n, max(2, m_req), rng_split)
                    _, centered, xbar1, d2, _, n2 = _split_problems(
                        X, perms[:m_req], group.kappa, group.penalty
                    )
                except (ValueError, np.linalg.LinAlgError):
                    codes[rep, slots] = _FAIL
                    continue
                problems.append((rep, centered, xbar1, d2, n2))
            if not problems:
                continue
            # One stacked solve covers the whole chunk: batch members are
            # independent, so grouping replications changes no trajectory
            # but amortizes the per-iteration overhead across stragglers.
            W_all, _ = solve_factored_batch(
                np.concatenate([c for _, c, _, _, _ in problems]),
                np.concatenate([x for _, _, x, _, _ in problems]),
                group.penalty,
            )
            for i, (rep, _, _, d2, n2) in enumerate(problems):
                W = W_all[i * m_req : (i + 1) * m_req]
                try:
                    _, degenerate, t_stats = _pvalues_from_directions(d2, W, n2)
                except ValueError:
                    codes[rep, slots] = _FAIL
                    continue
                for slot, spec in group.members:
                    try:
                        rejected = _decide_multisplit(
                            spec, t_stats, degenerate, n2, config.alpha
                        )
                        codes[rep, slot] = _REJECT if rejected else _ACCEPT
                    except (ValueError, np.linalg.LinAlgError):
                        codes[rep, slot] = _FAIL
        for X, rep in zip(datasets, chunk):
            for slot, spec in baselines:
                try:
                    rejected = _decide_baseline(spec, X, policy, rep, config.alpha)
                    codes[rep, slot] = _REJECT if rejected else _ACCEPT
                except (ValueError, np.linalg.LinAlgError):
                    codes[rep, slot] = _FAIL

    # The chunk partition is a fixed function of the replication count, so
    # identical batches are solved no matter how many threads execute them.
    chunks = [
        range(start, min(start + _CHUNK_REPS, config.reps))
        for start in range(0, config.reps, _CHUNK_REPS)
    ]
    if threads <= 1:
        for chunk in chunks:
            chunk_worker(chunk)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(chunk_worker, chunks))

    key = scenario_key(config)
    rows: List[SizePowerRow] = []
    too_many_failures: List[str] = []
    for j, spec in enumerate(specs):
        col = codes[:, j]
        failures = int(np.count_nonzero(col == _FAIL))
        completed = config.reps - failures
        rejections = int(np.count_nonzero(col == _REJECT))
        if failures > _MAX_FAILURE_FRACTION * config.reps:
            too_many_failures.append(f"{spec.label} ({failures}/{config.reps})")
        rate = rejections / completed if completed else 0.0
        stderr = math.sqrt(rate * (1.0 - rate) / completed) if completed else 0.0
        rows.append(SizePowerRow(key, spec.label, rate, stderr, completed, failures))
    if too_many_failures:
        raise RuntimeError(
            "failure rate above "
            f"{_MAX_FAILURE_FRACTION:.0%} for: {', '.join(too_many_failures)}"
        )
    return rows


def run_grid(
    base: ScenarioConfig,
    r_values: Sequence[float],
    c_values: Sequence[float],
    families: Sequence[str] = ("cs", "ar"),
    distributions: Sequence[str] = ("gaussian",),
    threads: int = 1,
) -> List[SizePowerRow]:
    """Cartesian product of scenarios over (family, r, distribution, c).

    Row ordering is stable: families outermost, then r, then distribution,
    then c, with per-scenario rows in test-configuration order.

    Args:
        base: Template scenario; its mean must use the sparse_ones pattern
            since the grid varies the signal scale c.
        r_values: Correlation parameters for the covariance families.
        c_values: Signal scales (0 gives the null).
        families: Covariance families ("cs", "ar", "identity").
        distributions: Sampling distributions ("gaussian", "t").
        threads: Worker threads per scenario.

    Returns:
        Concatenated SizePowerRows for every grid cell.
    """
    if not (len(r_values) and len(c_values) and len(families) and len(distributions)):
        raise ValueError("grid axes must be nonempty")
    if base.mean.pattern != "sparse_ones":
        raise ValueError("run_grid varies c; the base mean must be sparse_ones")
    rows: List[SizePowerRow] = []
    for family in families:
        for r in r_values:
            if family in ("cs", "ar"):
                cov = CovarianceSpec(family, float(r))
            else:
                cov = CovarianceSpec(family)
            for dist in distributions:
                for c in c_values:
                    cfg = replace(
                        base,
                        covariance=cov,
                        mean=replace(base.mean, c=float(c)),
                        distribution=dist,
                    )
                    rows.extend(run_scenario(cfg, threads=threads))
    return rows


def power_vs_m_study(
    config: ScenarioConfig, m_values: Sequence[int], threads: int = 1
) -> List[SizePowerRow]:
    """Rejection rate of the multi-split test as a function of m.

    All m values share data AND splits within each replication (the m
    splits for smaller m are a prefix of those for larger m), so the
    power curve is measured with common random numbers.

    Args:
        config: Scenario; its first "mpt" test (or the default) is the
            template whose m is varied.
        m_values: Numbers of splits, each >= 2 and at most the largest
            tabulated value.
        threads: Worker threads.

    Returns:
        One row per m, labeled "mpt_m{m}", in the given order.
    """
    if not len(m_values):
        raise ValueError("m_values must be nonempty")
    template = next((t for t in config.tests if t.method == "mpt"), TestSpec("mpt"))
    tests = tuple(
        replace(template, m=int(m), name=f"mpt_m{int(m)}") for m in m_values
    )
    return run_scenario(replace(config, tests=tests), threads=threads)
