"""Robust replacement of the Kalman measurement update.

The Kalman correction is the solution of a stacked linear regression: the
prior (identity design block against the predicted covariance) plus the
measurement rows (innovation against the rotated measurement covariance).
Robustness comes from swapping the quadratic loss on the *whitened*
measurement residuals for a Huber or Tukey cost and solving the resulting
M-estimation problem with iteratively reweighted least squares.

Scale parameters ``c`` are therefore unitless: they threshold residuals in
standard deviations.  Prior rows always keep unit weight; only measurement
rows are downweighted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from . import lie
from .inekf import FilterConfig, FilterState, _measurement_model, _retract

logger = logging.getLogger(__name__)

COSTS = ("none", "huber", "tukey")


@dataclass(frozen=True)
class RobustConfig:
    cost: str = "none"
    scale_c: float = 1.5
    irls_max_iters: int = 20
    irls_tol: float = 1e-8

    def __post_init__(self):
        if self.cost not in COSTS:
            raise ValueError(f"unknown cost '{self.cost}', expected one of {COSTS}")
        if self.scale_c <= 0.0:
            raise ValueError("scale parameter must be positive")
        if self.irls_max_iters < 1:
            raise ValueError("need at least one IRLS iteration")


def huber_rho(r, c: float):
    """Huber cost: quadratic inside ``|r| <= c``, linear tails outside."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    return np.where(a <= c, r * r, c * (2.0 * a - c))


def huber_weight(r, c: float):
    """IRLS weight for the Huber cost: 1 inside, ``c/|r|`` outside."""
    a = np.abs(np.asarray(r, dtype=float))
    with np.errstate(divide="ignore"):
        return np.minimum(1.0, c / np.maximum(a, 1e-300))


def tukey_rho(r, c: float):
    """Tukey biweight cost, saturating at ``c^2/6`` beyond the scale."""
    r = np.asarray(r, dtype=float)
    sat = c * c / 6.0
    u = 1.0 - (r / c) ** 2
    return np.where(np.abs(r) <= c, sat * (1.0 - u**3), sat)


def tukey_weight(r, c: float):
    """IRLS weight for the Tukey cost: ``(1-(r/c)^2)^2`` inside, 0 outside."""
    r = np.asarray(r, dtype=float)
    u = 1.0 - (r / c) ** 2
    return np.where(np.abs(r) <= c, u * u, 0.0)


def _weight_fn(cost: str, c: float):
    if cost == "huber":
        return lambda r: huber_weight(r, c)
    if cost == "tukey":
        return lambda r: tukey_weight(r, c)
    return lambda r: np.ones_like(np.asarray(r, dtype=float))


def _consistent_rho(cost: str, r, c: float):
    """Loss whose IRLS weights are the ones above with w(0) = 1.

    The Huber loss is rescaled by 1/2 so its quadratic region matches the
    prior rows; Tukey already is consistent.
    """
    r = np.asarray(r, dtype=float)
    if cost == "huber":
        a = np.abs(r)
        return np.where(a <= c, 0.5 * r * r, c * a - 0.5 * c * c)
    if cost == "tukey":
        return tukey_rho(r, c)
    return 0.5 * r * r


@dataclass(frozen=True)
class StackedRegression:
    """Linear-regression view of one measurement update.

    ``design`` stacks the identity prior block over the measurement rows,
    ``target`` the zero prior target over the innovation, and ``cov`` is
    block-diagonal in the prior and measurement covariances.  The first
    ``n_prior`` rows are prior rows.
    """

    design: NDArray[np.float64]
    target: NDArray[np.float64]
    cov: NDArray[np.float64]
    n_prior: int

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        target = np.asarray(self.target, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        rows = design.shape[0]
        if target.shape != (rows,) or cov.shape != (rows, rows):
            raise ValueError("inconsistent regression dimensions")
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise ValueError("residual covariance must be symmetric")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "cov", cov)


def _cholesky_with_jitter(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "residual covariance is not positive definite (after jitter)"
        ) from exc


def whiten(reg: StackedRegression):
    """Change of basis by the Cholesky factor of the residual covariance.

    Returns ``(design_w, target_w)`` such that the whitened residuals have
    identity covariance.
    """
    chol = _cholesky_with_jitter(reg.cov)
    design_w = scipy.linalg.solve_triangular(chol, reg.design, lower=True)
    target_w = scipy.linalg.solve_triangular(chol, reg.target, lower=True)
    return design_w, target_w


@dataclass(frozen=True)
class IrlsResult:
    xi: NDArray[np.float64]
    weights: NDArray[np.float64]
    iterations: int
    converged: bool
    singular_fallback: bool
    objectives: tuple[float, ...]


def irls_solve(reg: StackedRegression, cfg: RobustConfig) -> IrlsResult:
    """Iteratively reweighted least squares on the whitened regression.

    Starts from the prior mean (zero correction).  Weights apply per scalar
    whitened residual and only to measurement rows.  Stops on a relative
    step below ``irls_tol`` or after ``irls_max_iters`` iterations; a
    rank-deficient reweighted system keeps the previous iterate and sets
    the fallback flag.
    """
    design_w, target_w = whiten(reg)
    rows, dim = design_w.shape
    n_prior = reg.n_prior
    weight_fn = _weight_fn(cfg.cost, cfg.scale_c)

    xi = np.zeros(dim)
    weights = np.ones(rows)
    objectives = []
    converged = False
    singular = False
    iterations = 0
    for iterations in range(1, cfg.irls_max_iters + 1):
        residual = design_w @ xi - target_w
        weights = np.concatenate(
            [np.ones(n_prior), weight_fn(residual[n_prior:])]
        )
        objectives.append(
            0.5 * np.sum(residual[:n_prior] ** 2)
            + float(
                np.sum(
                    _consistent_rho(cfg.cost, residual[n_prior:], cfg.scale_c)
                )
            )
        )
        sqrt_w = np.sqrt(weights)
        solution, _, rank, singvals = np.linalg.lstsq(
            design_w * sqrt_w[:, None], target_w * sqrt_w, rcond=None
        )
        if rank < dim or singvals[0] > 1e12 * max(singvals[-1], 1e-300):
            logger.warning("IRLS reweighted system near-singular; keeping iterate")
            singular = True
            break
        step = np.linalg.norm(solution - xi)
        xi = solution
        if step <= cfg.irls_tol * max(np.linalg.norm(xi), 1.0):
            converged = True
            break
    residual = design_w @ xi - target_w
    objectives.append(
        0.5 * np.sum(residual[:n_prior] ** 2)
        + float(np.sum(_consistent_rho(cfg.cost, residual[n_prior:], cfg.scale_c)))
    )
    return IrlsResult(
        xi, weights, iterations, converged, singular, tuple(objectives)
    )


def robust_update(
    state: FilterState,
    contacts,
    config: FilterConfig,
    robust: RobustConfig,
) -> FilterState:
    """Measurement update solved as a robust stacked regression.

    With ``cost='none'`` this reproduces the standard Kalman update.  The
    posterior covariance uses the gain implied by the final IRLS weights:
    measurement information is scaled by the per-row weights, zeroed rows
    contribute nothing.
    """
    if not contacts:
        return state
    h, dz, n_hat = _measurement_model(state, contacts, config)
    p = state.cov
    dim = p.shape[0]
    reg = StackedRegression(
        design=np.vstack([np.eye(dim), h]),
        target=np.concatenate([np.zeros(dim), dz]),
        cov=scipy.linalg.block_diag(p, n_hat),
        n_prior=dim,
    )
    result = irls_solve(reg, robust)
    if result.singular_fallback and result.iterations <= 1:
        logger.warning(
            "robust update at t=%.3f rejected: singular reweighted system",
            state.t,
        )
        return state

    # information contributed by the measurement rows under final weights
    chol_n = _cholesky_with_jitter(n_hat)
    rows_w = scipy.linalg.solve_triangular(chol_n, np.eye(n_hat.shape[0]), lower=True)
    lam = rows_w.T @ (result.weights[dim:, None] * rows_w)
    hph = h @ p @ h.T
    gain = p @ h.T @ np.linalg.solve(lam @ hph + np.eye(h.shape[0]), lam)
    cov = (np.eye(dim) - gain @ h) @ p
    cov = 0.5 * (cov + cov.T)
    return _retract(state, result.xi, cov)
