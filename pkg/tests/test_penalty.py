"""Unit tests for the penalty families: values, derivatives, prox operators.

The prox oracle values were computed independently by dense scalar grid
search over the prox objective before the closed forms were implemented.
"""

import numpy as np
import pytest

from hdmt.penalty import (
    PenaltySpec,
    penalty_derivative,
    penalty_subgradient,
    penalty_value,
    prox,
    weak_convexity_gamma,
)


# ---------------------------------------------------------------------------
# Specification validation


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown penalty kind"):
        PenaltySpec(kind="ridge", lam=0.5)


def test_negative_lambda_rejected():
    with pytest.raises(ValueError, match="lambda"):
        PenaltySpec(kind="lasso", lam=-0.1)


def test_scad_shape_bound():
    with pytest.raises(ValueError, match="a > 2"):
        PenaltySpec(kind="scad", lam=0.5, a=2.0)


def test_mcp_shape_bound():
    with pytest.raises(ValueError, match="b > 1"):
        PenaltySpec(kind="mcp", lam=0.5, b=1.0)


def test_lambda_zero_allowed():
    spec = PenaltySpec(kind="lasso", lam=0.0)
    assert penalty_value(spec, 3.0) == 0.0
    assert prox(spec, 1.7, 1.0) == 1.7


# ---------------------------------------------------------------------------
# Values and derivatives against hand-computed points


def test_lasso_value_is_absolute_value():
    spec = PenaltySpec(kind="lasso", lam=0.5)
    t = np.array([-2.0, -0.3, 0.0, 0.3, 2.0])
    np.testing.assert_allclose(penalty_value(spec, t), 0.5 * np.abs(t))


def test_scad_saturation_level():
    # Beyond a*lam the SCAD value is the constant (a+1) lam^2 / 2; at
    # lam=1, a=3.7 that is 2.35 (verified by integrating the derivative).
    spec = PenaltySpec(kind="scad", lam=1.0, a=3.7)
    assert penalty_value(spec, 3.7) == pytest.approx(2.35, abs=1e-12)
    assert penalty_value(spec, 100.0) == pytest.approx(2.35, abs=1e-12)


def test_scad_linear_segment():
    spec = PenaltySpec(kind="scad", lam=1.0, a=3.7)
    assert penalty_value(spec, 0.5) == pytest.approx(0.5)
    assert penalty_derivative(spec, 0.5) == pytest.approx(1.0)


def test_mcp_saturation_and_derivative():
    # MCP value saturates at b lam^2 / 2; derivative at t=1 (lam=1, b=3)
    # is 1 - 1/3 = 2/3 (checked against a finite difference of the value).
    spec = PenaltySpec(kind="mcp", lam=1.0, b=3.0)
    assert penalty_value(spec, 3.0) == pytest.approx(1.5, abs=1e-12)
    assert penalty_value(spec, 50.0) == pytest.approx(1.5, abs=1e-12)
    assert penalty_derivative(spec, 1.0) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_derivative_limit_at_zero_is_lambda():
    for kind in ("lasso", "scad", "mcp"):
        spec = PenaltySpec(kind=kind, lam=0.4)
        assert penalty_derivative(spec, 0.0) == pytest.approx(0.4)


def test_derivative_odd_symmetry():
    t = np.linspace(0.01, 5.0, 97)
    for kind in ("lasso", "scad", "mcp"):
        spec = PenaltySpec(kind=kind, lam=0.7)
        np.testing.assert_allclose(
            penalty_derivative(spec, -t), -penalty_derivative(spec, t)
        )


def test_subgradient_interval_at_zero():
    spec = PenaltySpec(kind="scad", lam=0.3)
    assert penalty_subgradient(spec, 0.0) == (-0.3, 0.3)
    lo, hi = penalty_subgradient(spec, 0.1)
    assert lo == hi == pytest.approx(0.3)


def test_weak_convexity_constants():
    assert weak_convexity_gamma(PenaltySpec(kind="lasso", lam=1.0)) == 0.0
    assert weak_convexity_gamma(
        PenaltySpec(kind="scad", lam=1.0, a=3.7)
    ) == pytest.approx(1.0 / 2.7)
    assert weak_convexity_gamma(
        PenaltySpec(kind="mcp", lam=1.0, b=3.0)
    ) == pytest.approx(1.0 / 3.0)
    assert PenaltySpec(kind="mcp", lam=1.0, b=3.0).gamma == pytest.approx(1.0 / 3.0)


# ---------------------------------------------------------------------------
# Proximal operators


def test_lasso_prox_is_soft_threshold():
    spec = PenaltySpec(kind="lasso", lam=0.5)
    t = np.array([-2.0, -0.4, 0.0, 0.4, 2.0])
    np.testing.assert_allclose(
        prox(spec, t, 1.0), np.array([-1.5, 0.0, 0.0, 0.0, 1.5])
    )


def test_scad_prox_middle_region_oracle():
    # Grid-search oracle at t=2.5, lam=1, a=3.7, eta=1: argmin 1.794118
    # = ((a-1)t - a lam) / (a-2).
    spec = PenaltySpec(kind="scad", lam=1.0, a=3.7)
    assert prox(spec, 2.5, 1.0) == pytest.approx(1.7941176470588236, abs=1e-9)


def test_scad_prox_identity_beyond_a_lam():
    spec = PenaltySpec(kind="scad", lam=1.0, a=3.7)
    assert prox(spec, 5.0, 1.0) == pytest.approx(5.0)
    assert prox(spec, -5.0, 1.0) == pytest.approx(-5.0)


def test_mcp_prox_firm_threshold_region():
    # For |t| <= b lam and eta < b: u = b (t - eta lam) / (b - eta).
    spec = PenaltySpec(kind="mcp", lam=1.0, b=3.0)
    assert prox(spec, 2.0, 1.0) == pytest.approx(3.0 * (2.0 - 1.0) / 2.0)
    assert prox(spec, 4.0, 1.0) == pytest.approx(4.0)


@pytest.mark.parametrize("kind", ["lasso", "scad", "mcp"])
@pytest.mark.parametrize("eta", [0.2, 1.0, 4.0])
def test_prox_matches_scalar_grid_search(kind, eta):
    """Exactness of the prox on a dense scalar grid, including eta*gamma >= 1.

    At eta=4 both SCAD (gamma=1/2.7) and MCP (gamma=1/3) are in the
    nonconvex scalar regime where a naive stationary-point formula fails.
    """
    spec = PenaltySpec(kind=kind, lam=0.6)
    grid = np.linspace(-8.0, 8.0, 160_001)
    for t in (-3.3, -0.9, -0.3, 0.0, 0.45, 1.1, 2.7, 6.0):
        obj = 0.5 * (grid - t) ** 2 + eta * penalty_value(spec, grid)
        best = grid[np.argmin(obj)]
        got = prox(spec, t, eta)
        # The grid resolves the argmin to 1e-4; ties may differ in sign
        # region only when both objectives agree.
        obj_got = 0.5 * (got - t) ** 2 + eta * penalty_value(spec, got)
        assert obj_got <= obj.min() + 1e-8
        assert abs(abs(got) - abs(best)) < 2e-4


def test_prox_positive_step_required():
    spec = PenaltySpec(kind="lasso", lam=0.5)
    with pytest.raises(ValueError, match="positive"):
        prox(spec, 1.0, 0.0)


def test_prox_broadcasts_eta():
    spec = PenaltySpec(kind="lasso", lam=1.0)
    t = np.array([2.0, 2.0, 2.0])
    eta = np.array([0.5, 1.0, 1.5])
    np.testing.assert_allclose(prox(spec, t, eta), np.array([1.5, 1.0, 0.5]))


def test_prox_tie_breaks_toward_smaller_magnitude():
    # With eta large enough that zero and a nonzero candidate tie, the
    # sparser (smaller magnitude) output must win.
    spec = PenaltySpec(kind="mcp", lam=1.0, b=3.0)
    # At the firm-threshold boundary the objective of 0 and of the interior
    # candidate cross; scan for near-tie points and check the choice.
    grid = np.linspace(-8.0, 8.0, 160_001)
    for t in np.linspace(1.5, 2.5, 21):
        got = prox(spec, t, 3.0)
        obj = 0.5 * (grid - t) ** 2 + 3.0 * penalty_value(spec, grid)
        obj_got = 0.5 * (got - t) ** 2 + 3.0 * penalty_value(spec, got)
        assert obj_got <= obj.min() + 1e-8
