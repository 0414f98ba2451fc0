"""Penalty families for regularized projection-direction estimation.

Implements the Lasso, SCAD, and MCP penalties with values, subgradients,
proximal operators, and the weak-convexity constant gamma.  All penalties
satisfy the standard folded-concave conditions: P(0) = 0, symmetry,
monotonicity on [0, inf), P(t)/t nonincreasing on (0, inf), derivative
limit lambda at 0+, and convexity of P(t) + gamma/2 * t^2.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

__all__ = [
    "PenaltySpec",
    "penalty_value",
    "penalty_derivative",
    "penalty_subgradient",
    "prox",
    "weak_convexity_gamma",
]

_VALID_KINDS = ("lasso", "scad", "mcp")

ArrayLike = Union[float, np.ndarray]

# Candidates within this objective slack are considered tied in the prox;
# ties break toward the candidate of smaller magnitude (sparser estimate).
_PROX_TIE_TOL = 1e-12


@dataclass(frozen=True)
class PenaltySpec:
    """Specification of a penalty family.

    Attributes:
        kind: One of "lasso", "scad", or "mcp".
        lam: Regularization level lambda >= 0.
        a: SCAD shape parameter (must exceed 2); ignored otherwise.
        b: MCP shape parameter (must exceed 1); ignored otherwise.
    """

    kind: str
    lam: float
    a: float = 3.7
    b: float = 3.0

    def __post_init__(self):
        if self.kind not in _VALID_KINDS:
            raise ValueError(
                f"unknown penalty kind {self.kind!r}; expected one of {_VALID_KINDS}"
            )
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be a finite nonnegative real, got {self.lam}")
        if self.kind == "scad" and self.a <= 2:
            raise ValueError(f"SCAD requires a > 2, got a={self.a}")
        if self.kind == "mcp" and self.b <= 1:
            raise ValueError(f"MCP requires b > 1, got b={self.b}")

    @property
    def gamma(self) -> float:
        """Weak-convexity constant: smallest gamma with P(t) + gamma/2 t^2 convex."""
        return weak_convexity_gamma(self)


def weak_convexity_gamma(spec: PenaltySpec) -> float:
    """Return the weak-convexity constant gamma of the penalty.

    Lasso is convex (gamma = 0); SCAD has gamma = 1/(a-1); MCP has
    gamma = 1/b.

    Args:
        spec: Penalty specification.

    Returns:
        Nonnegative weak-convexity constant.
    """
    if spec.kind == "lasso":
        return 0.0
    if spec.kind == "scad":
        return 1.0 / (spec.a - 1.0)
    return 1.0 / spec.b


def penalty_value(spec: PenaltySpec, t: ArrayLike) -> ArrayLike:
    """Evaluate the penalty P_lambda at t (elementwise for arrays).

    Args:
        spec: Penalty specification.
        t: Scalar or array of evaluation points.

    Returns:
        P_lambda(t) with the same shape as t.
    """
    t = np.asarray(t, dtype=float)
    u = np.abs(t)
    lam = spec.lam
    if spec.kind == "lasso":
        out = lam * u
    elif spec.kind == "scad":
        a = spec.a
        out = np.where(
            u <= lam,
            lam * u,
            np.where(
                u <= a * lam,
                (2.0 * a * lam * u - u * u - lam * lam) / (2.0 * (a - 1.0)),
                (a + 1.0) * lam * lam / 2.0,
            ),
        )
    else:  # mcp
        b = spec.b
        out = np.where(u <= b * lam, lam * u - u * u / (2.0 * b), b * lam * lam / 2.0)
    if out.ndim == 0:
        return float(out)
    return out


def penalty_derivative(spec: PenaltySpec, t: ArrayLike) -> ArrayLike:
    """Derivative of P_lambda on |t| > 0, extended by its limit lambda at 0.

    For t < 0 the derivative is -P'(|t|) by symmetry.  At exactly t = 0 the
    returned value is the right-derivative limit lambda; use
    penalty_subgradient for the full subdifferential at 0.

    Args:
        spec: Penalty specification.
        t: Scalar or array of evaluation points.

    Returns:
        dP/dt with the same shape as t.
    """
    t = np.asarray(t, dtype=float)
    u = np.abs(t)
    lam = spec.lam
    if spec.kind == "lasso":
        mag = np.full_like(u, lam)
    elif spec.kind == "scad":
        a = spec.a
        mag = np.where(
            u <= lam, lam, np.maximum(a * lam - u, 0.0) / (a - 1.0)
        )
    else:  # mcp
        b = spec.b
        mag = np.maximum(lam - u / b, 0.0)
    sign = np.where(t < 0, -1.0, 1.0)
    out = sign * mag
    if out.ndim == 0:
        return float(out)
    return out


def penalty_subgradient(spec: PenaltySpec, t: float) -> Tuple[float, float]:
    """Subdifferential of P_lambda at a scalar t, as an interval [lo, hi].

    Singleton {P'(t)} for t != 0; the interval [-lambda, lambda] at t = 0.

    Args:
        spec: Penalty specification.
        t: Scalar evaluation point.

    Returns:
        Pair (lo, hi) bounding the subdifferential.
    """
    t = float(t)
    if t == 0.0:
        return (-spec.lam, spec.lam)
    d = float(penalty_derivative(spec, t))
    return (d, d)


def _prox_candidates(spec: PenaltySpec, s: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Stack of candidate minimizers of 1/2 (u-s)^2 + eta P(u) for s >= 0.

    Each row of the returned (k, *shape) array is one candidate: the
    stationary point of each smooth piece (clipped into its region) plus all
    region boundaries.  Evaluating the objective over this set yields the
    exact scalar prox for every eta > 0, including the nonconvex regime
    eta * gamma >= 1 where a piece's stationary point may be a maximum.
    """
    lam = spec.lam
    if spec.kind == "lasso":
        return np.stack([np.maximum(s - eta * lam, 0.0)])
    if spec.kind == "scad":
        a = spec.a
        c1 = np.clip(s - eta * lam, 0.0, lam)
        # Stationary point of the middle quadratic piece; where the piece is
        # concave (denominator <= 0) the clipped value is merely an extra
        # feasible point and the region boundaries below carry the minimum.
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = ((a - 1.0) * s - eta * a * lam) / (a - 1.0 - eta)
        c2 = np.clip(np.where(np.isfinite(raw), raw, lam), lam, a * lam)
        c3 = np.maximum(s, a * lam)
        bounds = np.broadcast_to(np.asarray(lam), s.shape)
        bounds_a = np.broadcast_to(np.asarray(a * lam), s.shape)
        return np.stack([np.zeros_like(s), c1, c2, c3, bounds, bounds_a])
    # mcp
    b = spec.b
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = b * (s - eta * lam) / (b - eta)
    c1 = np.clip(np.where(np.isfinite(raw), raw, 0.0), 0.0, b * lam)
    c2 = np.maximum(s, b * lam)
    bounds_b = np.broadcast_to(np.asarray(b * lam), s.shape)
    return np.stack([np.zeros_like(s), c1, c2, bounds_b])


def prox(spec: PenaltySpec, t: ArrayLike, eta: ArrayLike) -> ArrayLike:
    """Proximal operator of eta * P_lambda (elementwise for arrays).

    Returns argmin_u 1/2 (u - t)^2 + eta * P_lambda(u).  For the Lasso this
    is soft-thresholding; SCAD and MCP use their piecewise closed forms,
    resolved by exact candidate enumeration so that the nonconvex scalar
    regime (eta * gamma >= 1) is also handled.  Objective ties break toward
    the candidate with smaller magnitude.

    Args:
        spec: Penalty specification.
        t: Scalar or array of prox targets.
        eta: Positive step size, broadcastable to the shape of t.

    Returns:
        The prox output with the broadcast shape of t and eta.
    """
    eta_arr = np.asarray(eta, dtype=float)
    if np.any(eta_arr <= 0):
        raise ValueError("prox step eta must be positive")
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0 and eta_arr.ndim == 0
    t_b, eta_b = np.broadcast_arrays(t_arr, eta_arr)
    s = np.abs(t_b)

    if spec.kind == "lasso":
        out = np.sign(t_b) * np.maximum(s - eta_b * spec.lam, 0.0)
        return float(out) if scalar else out

    cands = _prox_candidates(spec, s, eta_b)
    obj = 0.5 * (cands - s) ** 2 + eta_b * penalty_value(spec, cands)
    best = np.min(obj, axis=0)
    # Among near-ties, prefer the smallest magnitude candidate.
    tied_mag = np.where(obj <= best + _PROX_TIE_TOL, cands, np.inf)
    u = np.min(tied_mag, axis=0)
    out = np.sign(t_b) * u
    return float(out) if scalar else out
