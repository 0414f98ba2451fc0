"""Regularized quadratic solver for the optimal projection direction.

Minimizes 1/2 w' Sigma_hat w - xbar' w + P_lambda(w) by composite (proximal)
gradient descent, with stationarity certified through the first-order
condition: the residual is the max-norm distance of xbar - Sigma_hat w to
the penalty subdifferential, coordinate by coordinate.

A batched factored path solves many independent instances at once when the
sample covariance is available as Sigma_hat = C'C / n1 for centered rows C;
this is the workhorse for multi-split testing and Monte Carlo studies.
"""

import warnings
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .penalty import PenaltySpec, penalty_derivative, penalty_value, prox

__all__ = [
    "SolverOptions",
    "DirectionEstimate",
    "default_lambda",
    "lipschitz_estimate",
    "objective_value",
    "stationarity_residual",
    "estimate_direction",
    "solve_factored_batch",
    "cv_lambda",
]

_TINY = 1e-12
# Rebind the working batch to its unfrozen rows only after this fraction
# (or less) remains, so compaction copies sum to a constant factor.
_COMPACT_FRACTION = 0.75


@dataclass(frozen=True)
class SolverOptions:
    """Options for the composite gradient solver.

    Attributes:
        max_iterations: Iteration cap (>= 1).
        stationarity_tolerance: Convergence threshold on the first-order
            residual (> 0).
        step_rule: "fixed" (step 1/L from a power-iteration Lipschitz
            estimate) or "backtracking".
        check_every: Iterations between convergence checks on the fixed path.
        debug_monotone: If True, assert the objective never increases under
            the fixed step (valid for the convex Lasso penalty).
    """

    max_iterations: int = 2000
    stationarity_tolerance: float = 1e-6
    step_rule: str = "fixed"
    check_every: int = 25
    debug_monotone: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.stationarity_tolerance <= 0:
            raise ValueError("stationarity_tolerance must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass
class DirectionEstimate:
    """Result of the direction solve.

    Attributes:
        w_hat: Estimated direction (length p).
        iterations_used: Number of gradient iterations performed.
        stationarity_residual: Max-norm first-order residual at w_hat.
        objective: Objective value at w_hat.
        converged: True iff the residual met the tolerance.
    """

    w_hat: np.ndarray
    iterations_used: int
    stationarity_residual: float
    objective: float
    converged: bool

    def to_dict(self) -> Dict:
        return {
            "iterations_used": int(self.iterations_used),
            "stationarity_residual": float(self.stationarity_residual),
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "nonzeros": int(np.count_nonzero(self.w_hat)),
        }


def default_lambda(n1: int, p: int, c0: float = 1.0) -> float:
    """Rate-formula regularization level lambda = c0 * sqrt(log p / n1).

    Args:
        n1: Estimation-half sample size (>= 2).
        p: Dimension (>= 2).
        c0: Positive rate constant.

    Returns:
        The regularization level.
    """
    if n1 < 2:
        raise ValueError(f"n1 must be >= 2, got {n1}")
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if c0 <= 0:
        raise ValueError(f"c0 must be positive, got {c0}")
    return c0 * np.sqrt(np.log(p) / n1)


def _power_iteration(
    matvec: Callable[[np.ndarray], np.ndarray],
    n_problems: int,
    p: int,
    max_iter: int = 200,
    rtol: float = 1e-8,
) -> np.ndarray:
    """Batched power iteration returning top-eigenvalue estimates per row."""
    rng = np.random.default_rng(0)  # fixed stream: deterministic, generic start
    V = rng.standard_normal((n_problems, p))
    V /= np.maximum(np.linalg.norm(V, axis=1, keepdims=True), _TINY)
    lam = np.zeros(n_problems)
    for _ in range(max_iter):
        W = matvec(V)
        lam_new = np.einsum("ij,ij->i", V, W)
        norms = np.linalg.norm(W, axis=1, keepdims=True)
        done = np.abs(lam_new - lam) <= rtol * np.maximum(np.abs(lam_new), _TINY)
        lam = lam_new
        if done.all():
            break
        V = W / np.maximum(norms, _TINY)
    return np.maximum(lam, 0.0)


def lipschitz_estimate(sigma: np.ndarray) -> float:
    """Gradient Lipschitz constant estimate 1.01 * lambda_max(Sigma_hat).

    Uses power iteration (200 iterations or relative change < 1e-8); the
    1.01 inflation keeps the estimate at or above 0.99 * lambda_max.

    Args:
        sigma: Symmetric positive-semidefinite matrix.

    Returns:
        Lipschitz constant for the quadratic gradient.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be a square matrix")
    if not np.allclose(sigma, sigma.T, atol=1e-10, rtol=0.0):
        raise ValueError("sigma must be symmetric")
    lam = _power_iteration(lambda V: V @ sigma, 1, sigma.shape[0])
    return float(1.01 * lam[0])


def objective_value(
    w: np.ndarray, sigma: np.ndarray, xbar: np.ndarray, penalty: PenaltySpec
) -> float:
    """Objective 1/2 w'Sigma w - xbar'w + P_lambda(w) at w.

    Args:
        w: Direction vector.
        sigma: Sample covariance.
        xbar: Sample mean.
        penalty: Penalty specification.

    Returns:
        Objective value.
    """
    w = np.asarray(w, dtype=float)
    quad = 0.5 * w @ (sigma @ w) - xbar @ w
    return float(quad + np.sum(penalty_value(penalty, w)))


def _residual_from_grad(
    g: np.ndarray, W: np.ndarray, penalty: PenaltySpec
) -> np.ndarray:
    """Max-norm distance of g = xbar - Sigma w to the subdifferential, rowwise."""
    deriv = penalty_derivative(penalty, W)
    resid_nonzero = np.abs(g - deriv)
    resid_zero = np.maximum(np.abs(g) - penalty.lam, 0.0)
    per_coord = np.where(W != 0.0, resid_nonzero, resid_zero)
    return per_coord.max(axis=-1)


def stationarity_residual(
    w: np.ndarray, sigma: np.ndarray, xbar: np.ndarray, penalty: PenaltySpec
) -> float:
    """First-order residual: max_j dist((xbar - Sigma w)_j, dP(w_j)).

    Exact stationary points return 0.

    Args:
        w: Candidate direction.
        sigma: Sample covariance.
        xbar: Sample mean.
        penalty: Penalty specification.

    Returns:
        Nonnegative max-norm subgradient violation.
    """
    w = np.asarray(w, dtype=float)
    g = np.asarray(xbar, dtype=float) - w @ np.asarray(sigma, dtype=float)
    return float(_residual_from_grad(g[None, :], w[None, :], penalty)[0])


def _prox_gradient_batch(
    matvec: Callable[[np.ndarray], np.ndarray],
    xbar: np.ndarray,
    penalty: PenaltySpec,
    opts: SolverOptions,
    L: np.ndarray,
    subset: Optional[Callable[[np.ndarray], Callable[[np.ndarray], np.ndarray]]] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Fixed-step proximal gradient on a batch of independent instances.

    Members that pass the stationarity check are frozen at that iterate and
    dropped from the working batch, so stragglers iterate alone instead of
    dragging the whole batch to the cap.  ``subset`` rebinds the operator to
    a member subset; when omitted the same ``matvec`` is reused (valid only
    for rowwise operators such as a shared covariance).
    """
    n_problems, p = xbar.shape
    w_out = np.zeros((n_problems, p))
    resid_out = np.zeros(n_problems)
    conv_out = np.zeros(n_problems, dtype=bool)

    bound = np.arange(n_problems)  # member ids behind the working arrays
    alive = np.ones(n_problems, dtype=bool)  # rows not yet frozen
    mv = matvec
    W = np.zeros((n_problems, p))
    xb = xbar
    eta_col = (1.0 / np.maximum(L, _TINY))[:, None]
    prev_obj: Optional[np.ndarray] = None

    def batch_objective(V: np.ndarray, sv: np.ndarray) -> np.ndarray:
        return (
            0.5 * np.einsum("ij,ij->i", V, sv)
            - np.einsum("ij,ij->i", xb, V)
            + penalty_value(penalty, V).sum(axis=1)
        )

    if penalty.kind == "lasso":
        # Soft threshold, same arithmetic as prox() but without re-running
        # validation and broadcasting on every iteration.
        thr = eta_col * penalty.lam

        def apply_prox(v: np.ndarray) -> np.ndarray:
            return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)

    else:

        def apply_prox(v: np.ndarray) -> np.ndarray:
            return prox(penalty, v, eta_col)

    def freeze(rows: np.ndarray, resid: np.ndarray, converged: bool) -> None:
        ids = bound[rows]
        w_out[ids] = W[rows]
        resid_out[ids] = resid[rows]
        conv_out[ids] = converged

    def compact() -> None:
        # Rebinding copies the working arrays, so do it only when enough
        # rows have frozen to repay the copy (geometric total cost).
        nonlocal bound, alive, mv, W, xb, eta_col, prev_obj, thr
        keep = alive
        bound = bound[keep]
        alive = np.ones(bound.size, dtype=bool)
        W = W[keep]
        xb = xb[keep]
        eta_col = eta_col[keep]
        if penalty.kind == "lasso":
            thr = thr[keep]
        if prev_obj is not None:
            prev_obj = prev_obj[keep]
        if subset is not None:
            mv = subset(bound)

    resid = _residual_from_grad(xb - mv(W), W, penalty)
    conv = resid <= opts.stationarity_tolerance
    resid_out[:] = resid
    conv_out[:] = conv
    if conv.all():
        return w_out, resid_out, conv_out, 0
    if opts.debug_monotone:
        prev_obj = batch_objective(W, mv(W))
    alive = ~conv
    if alive.mean() <= _COMPACT_FRACTION:
        compact()
    iterations = 0
    for it in range(1, opts.max_iterations + 1):
        sw = mv(W)
        W = apply_prox(W - eta_col * (sw - xb))
        iterations = it
        if opts.debug_monotone:
            obj = batch_objective(W, mv(W))
            slack = 1e-10 * (1.0 + np.abs(prev_obj))
            if np.any(obj > prev_obj + slack):
                raise AssertionError("objective increased under fixed 1/L step")
            prev_obj = obj
        if it % opts.check_every == 0 or it == opts.max_iterations:
            resid = _residual_from_grad(xb - mv(W), W, penalty)
            newly = alive & (resid <= opts.stationarity_tolerance)
            if newly.any():
                freeze(newly, resid, True)
                alive &= ~newly
                if not alive.any():
                    return w_out, resid_out, conv_out, iterations
                if alive.mean() <= _COMPACT_FRACTION:
                    compact()
    resid = _residual_from_grad(xb - mv(W), W, penalty)
    freeze(alive, resid, False)
    return w_out, resid_out, conv_out, iterations


def _backtracking_solve(
    sigma: np.ndarray,
    xbar: np.ndarray,
    penalty: PenaltySpec,
    opts: SolverOptions,
    L0: float,
) -> Tuple[np.ndarray, float, bool, int]:
    """Single-instance proximal gradient with backtracking line search."""
    p = xbar.shape[0]
    w = np.zeros(p)
    eta = 1.0 / max(L0, _TINY)

    def smooth(v: np.ndarray) -> float:
        return float(0.5 * v @ (sigma @ v) - xbar @ v)

    def full(v: np.ndarray) -> float:
        return smooth(v) + float(np.sum(penalty_value(penalty, v)))

    f_prev = full(w)
    increases = 0
    iterations = 0
    resid = stationarity_residual(w, sigma, xbar, penalty)
    if resid <= opts.stationarity_tolerance:
        return w, resid, True, 0
    for it in range(1, opts.max_iterations + 1):
        grad = sigma @ w - xbar
        f_w = smooth(w)
        step = eta
        for _ in range(60):
            cand = prox(penalty, w - step * grad, step)
            delta = cand - w
            quad_bound = f_w + grad @ delta + 0.5 * np.dot(delta, delta) / step
            if smooth(cand) <= quad_bound + 1e-12:
                break
            step *= 0.5
        w = cand
        iterations = it
        f_curr = full(w)
        if f_curr > f_prev + 1e-12:
            increases += 1
            if increases >= 10:
                raise RuntimeError(
                    "solver divergence: objective increased for 10 consecutive "
                    "backtracking iterations"
                )
        else:
            increases = 0
        f_prev = f_curr
        if it % opts.check_every == 0 or it == opts.max_iterations:
            resid = stationarity_residual(w, sigma, xbar, penalty)
            if resid <= opts.stationarity_tolerance:
                return w, resid, True, iterations
    resid = stationarity_residual(w, sigma, xbar, penalty)
    return w, resid, resid <= opts.stationarity_tolerance, iterations


def estimate_direction(
    sigma: np.ndarray,
    xbar: np.ndarray,
    penalty: PenaltySpec,
    opts: Optional[SolverOptions] = None,
) -> DirectionEstimate:
    """Solve min_w 1/2 w'Sigma w - xbar'w + P_lambda(w) from w0 = 0.

    Args:
        sigma: Symmetric PSD sample covariance (p x p).
        xbar: Sample mean (length p).
        penalty: Penalty specification with a concrete lambda.
        opts: Solver options; defaults used when omitted.

    Returns:
        DirectionEstimate with the stationary point and diagnostics.
    """
    opts = opts or SolverOptions()
    sigma = np.asarray(sigma, dtype=float)
    xbar = np.asarray(xbar, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("sigma must be a square matrix")
    p = sigma.shape[0]
    if xbar.shape != (p,):
        raise ValueError(f"xbar has shape {xbar.shape}, expected ({p},)")
    if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(xbar))):
        raise ValueError("solver inputs must be finite")
    L = lipschitz_estimate(sigma)
    gamma = penalty.gamma
    if gamma > 0 and gamma >= L / 1.01:
        warnings.warn(
            "penalty concavity gamma is at or above the top curvature of "
            "Sigma; stationary points may be poorly determined",
            RuntimeWarning,
        )
    if opts.step_rule == "backtracking":
        w, resid, converged, iters = _backtracking_solve(
            sigma, xbar, penalty, opts, L
        )
    else:
        W, resids, conv, iters = _prox_gradient_batch(
            lambda V: V @ sigma, xbar[None, :], penalty, opts, np.array([L])
        )
        w, resid, converged = W[0], float(resids[0]), bool(conv[0])
    return DirectionEstimate(
        w_hat=w,
        iterations_used=iters,
        stationarity_residual=float(resid),
        objective=objective_value(w, sigma, xbar, penalty),
        converged=bool(converged),
    )


def solve_factored_batch(
    centered: np.ndarray,
    xbar: np.ndarray,
    penalty: PenaltySpec,
    opts: Optional[SolverOptions] = None,
) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Solve a batch of direction problems with factored covariances.

    Each instance k has sample covariance Sigma_k = C_k' C_k / n1 where
    C_k = centered[k] holds the centered estimation-half rows, so the
    gradient is evaluated as C'(Cw)/n1 without forming Sigma_k.

    Args:
        centered: Array (m, n1, p) of centered rows per instance.
        xbar: Array (m, p) of sample means per instance.
        penalty: Penalty specification shared across instances.
        opts: Solver options; only the fixed step rule is supported here.

    Returns:
        Pair (W, info): W is (m, p) of stationary points; info holds
        per-instance arrays "stationarity_residual", "converged",
        and scalars "iterations_used".
    """
    opts = opts or SolverOptions()
    if opts.step_rule != "fixed":
        raise ValueError("batched solves support only the fixed step rule")
    centered = np.ascontiguousarray(centered, dtype=float)
    xbar = np.ascontiguousarray(xbar, dtype=float)
    m, n1, p = centered.shape
    if xbar.shape != (m, p):
        raise ValueError(f"xbar has shape {xbar.shape}, expected ({m},{p})")
    ct = np.ascontiguousarray(centered.transpose(0, 2, 1))

    def make_matvec(
        c: np.ndarray, t: np.ndarray
    ) -> Callable[[np.ndarray], np.ndarray]:
        def matvec(V: np.ndarray) -> np.ndarray:
            y = np.matmul(c, V[:, :, None])
            return np.matmul(t, y)[:, :, 0] / n1

        return matvec

    def subset(idx: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
        return make_matvec(
            np.ascontiguousarray(centered[idx]), np.ascontiguousarray(ct[idx])
        )

    matvec = make_matvec(centered, ct)
    # lambda_max(C'C / n1) equals lambda_max(C C' / n1): take the exact top
    # eigenvalue on whichever side is smaller.  Per-member and exact, so the
    # step size never depends on what else is stacked in the batch.
    if n1 <= p:
        gram = np.matmul(centered, ct) / n1
    else:
        gram = np.matmul(ct, centered) / n1
    top = np.linalg.eigvalsh(gram)[:, -1]
    L = 1.01 * np.maximum(top, 0.0)
    W, resid, converged, iters = _prox_gradient_batch(
        matvec, xbar, penalty, opts, L, subset=subset
    )
    info = {
        "stationarity_residual": resid,
        "converged": converged,
        "iterations_used": iters,
    }
    return W, info


def cv_lambda(
    data1: np.ndarray,
    penalty_template: PenaltySpec,
    grid: Sequence[float],
    folds: int = 5,
    opts: Optional[SolverOptions] = None,
) -> float:
    """Pick lambda from a grid by K-fold CV on the unpenalized quadratic loss.

    For each candidate lambda, directions are fit on K-1 folds and scored by
    1/2 w'Sigma_val w - xbar_val'w on the held-out fold; the lambda with the
    smallest mean validation loss wins, ties going to the larger (sparser)
    lambda.  Folds are contiguous blocks — the caller's split permutation
    already randomizes row order.

    Args:
        data1: Estimation-half rows (n1 x p).
        penalty_template: Penalty whose kind/shape parameters are reused.
        grid: Candidate lambda values (nonempty, positive).
        folds: Number of folds (>= 2).
        opts: Solver options for the inner fits.

    Returns:
        The selected lambda.
    """
    if len(grid) == 0:
        raise ValueError("lambda grid must be nonempty")
    if folds < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    data1 = np.asarray(data1, dtype=float)
    n1 = data1.shape[0]
    if n1 < folds:
        raise ValueError(f"n1={n1} too small for {folds}-fold CV")
    opts = opts or SolverOptions()
    bounds = np.linspace(0, n1, folds + 1, dtype=int)
    scores = np.zeros(len(grid))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        val = data1[lo:hi]
        train = np.concatenate([data1[:lo], data1[hi:]], axis=0)
        xbar_tr = train.mean(axis=0)
        ctr = train - xbar_tr
        sigma_tr = ctr.T @ ctr / train.shape[0]
        xbar_val = val.mean(axis=0)
        cval = val - xbar_val
        sigma_val = cval.T @ cval / val.shape[0]
        for i, lam in enumerate(grid):
            spec = PenaltySpec(
                kind=penalty_template.kind,
                lam=float(lam),
                a=penalty_template.a,
                b=penalty_template.b,
            )
            est = estimate_direction(sigma_tr, xbar_tr, spec, opts)
            w = est.w_hat
            scores[i] += 0.5 * w @ (sigma_val @ w) - xbar_val @ w
    order = np.lexsort((-np.asarray(grid, dtype=float), scores / folds))
    return float(grid[order[0]])
