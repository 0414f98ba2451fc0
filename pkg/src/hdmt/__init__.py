"""hdmt: high-dimensional mean testing by penalized projections.

Library and CLI for one-sample tests of H0: mu = 0 with p >> n.  The core
procedure estimates a projection direction on one half of the data by a
penalized quadratic program (Lasso/SCAD/MCP), t-tests the projected other
half, and stabilizes the split randomness by combining many random splits
through an exchangeable-normal mean statistic with tabulated critical
values.  Baseline tests and a reproducible Monte Carlo harness round out
the package.
"""

from .baselines import (
    clx_test,
    cq_test,
    random_projection_test,
    ridge_projection_test,
)
from .combine import (
    COMBINER_NAMES,
    P_CLAMP,
    TABLE1_C,
    TABLE2_BETA,
    TABLE_M,
    Z_ALPHA_HALF,
    RhoEstimate,
    combine,
    critical_value,
    m_statistic,
    rho_hat1,
    rho_hat2,
    z_transform,
)
from .datagen import (
    CovarianceSpec,
    MeanSpec,
    SeedPolicy,
    ar1_cholesky,
    build_covariance,
    cholesky_factor,
    covariance_cholesky,
    derive_seed,
    make_rng,
    realize_mean,
    sample_gaussian,
    sample_student_t,
    validate_data_matrix,
)
from .mpt import (
    MptResult,
    ProbeReport,
    exchangeability_probe,
    generate_permutations,
    mpt,
    mpt_from_pvalues,
    split_pvalues,
)
from .optimizer import (
    DirectionEstimate,
    SolverOptions,
    cv_lambda,
    default_lambda,
    estimate_direction,
    lipschitz_estimate,
    objective_value,
    solve_factored_batch,
    stationarity_residual,
)
from .penalty import (
    PenaltySpec,
    penalty_derivative,
    penalty_subgradient,
    penalty_value,
    prox,
    weak_convexity_gamma,
)
from .projtest import (
    SplitPlan,
    TestResult,
    make_split,
    project_and_t,
    resolve_penalty,
    spt,
    spt_power_oracle,
)
from .simharness import (
    BASELINE_METHODS,
    MULTISPLIT_METHODS,
    ScenarioConfig,
    SizePowerRow,
    TestSpec,
    power_vs_m_study,
    run_grid,
    run_scenario,
    scenario_key,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # penalty
    "PenaltySpec",
    "penalty_value",
    "penalty_derivative",
    "penalty_subgradient",
    "prox",
    "weak_convexity_gamma",
    # datagen
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
    # optimizer
    "SolverOptions",
    "DirectionEstimate",
    "default_lambda",
    "lipschitz_estimate",
    "objective_value",
    "stationarity_residual",
    "estimate_direction",
    "solve_factored_batch",
    "cv_lambda",
    # projtest
    "SplitPlan",
    "TestResult",
    "make_split",
    "project_and_t",
    "spt",
    "spt_power_oracle",
    "resolve_penalty",
    # combine
    "RhoEstimate",
    "TABLE_M",
    "TABLE1_C",
    "TABLE2_BETA",
    "Z_ALPHA_HALF",
    "P_CLAMP",
    "COMBINER_NAMES",
    "z_transform",
    "rho_hat1",
    "rho_hat2",
    "m_statistic",
    "critical_value",
    "combine",
    # mpt
    "MptResult",
    "ProbeReport",
    "generate_permutations",
    "split_pvalues",
    "mpt_from_pvalues",
    "mpt",
    "exchangeability_probe",
    # baselines
    "cq_test",
    "clx_test",
    "random_projection_test",
    "ridge_projection_test",
    # simharness
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
