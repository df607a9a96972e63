"""Yield derivatives.

For Gaussian uncertain parameters the design mean only enters through the
density, so gradient and Hessian with respect to the mean follow from the
statistics of the accepted samples at no extra model cost.  The
deterministic parameters enter the safe domain itself; their gradient is
taken by central differences over a fixed sample set, and curvature
information for them comes from BFGS updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .estimate import MonteCarloEstimator, YieldEstimate
from .uq import UncertainSpec

__all__ = [
    "GradientBundle",
    "BfgsState",
    "grad_yield_mean",
    "hess_yield_mean",
    "central_difference",
    "fd_grad_det",
    "default_fd_steps",
    "bfgs_update",
    "regularize_spd",
    "assemble_mixed_hessian",
]

CURVATURE_TOL = 1e-10
_SHIFTS = (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6, 1e8, 1e10)


@dataclass(frozen=True, eq=False)
class GradientBundle:
    """Yield gradient split into uncertain-mean and deterministic parts."""

    d_mean: np.ndarray
    d_det: np.ndarray
    degenerate: bool = False

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.d_mean, self.d_det])


def grad_yield_mean(est: YieldEstimate, uspec: UncertainSpec) -> np.ndarray:
    """Monte Carlo gradient ``Y * inv(Sigma) @ (mean_accepted - mean)``.

    Returns zeros when fewer than two samples were accepted.
    """
    if est.degenerate:
        return np.zeros(uspec.dim)
    return est.value * uspec.precision @ (est.accepted.mean - uspec.mean)


def hess_yield_mean(est: YieldEstimate, uspec: UncertainSpec) -> np.ndarray:
    """Monte Carlo Hessian with respect to the mean.

    ``Y * P @ (Sigma_acc + delta delta' - Sigma) @ P`` with ``P`` the
    precision and ``delta = mean_accepted - mean``.  Zeros when fewer than
    two samples were accepted.
    """
    if est.degenerate:
        return np.zeros((uspec.dim, uspec.dim))
    delta = est.accepted.mean - uspec.mean
    P = uspec.precision
    h = est.value * P @ (est.accepted.covariance + np.outer(delta, delta) - uspec.covariance) @ P
    return 0.5 * (h + h.T)


def default_fd_steps(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return np.maximum(1e-3 * np.abs(d), 1e-3)


def central_difference(f: Callable[[np.ndarray], float], x, steps) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    if np.any(steps <= 0):
        raise ConfigurationError("finite-difference steps must be positive")
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = steps[j]
        g[j] = (f(x + e) - f(x - e)) / (2.0 * steps[j])
    return g


def fd_grad_det(model, spec, uspec: UncertainSpec, d, sample_set, steps=None,
                estimator: MonteCarloEstimator | None = None,
                on_estimate: Callable[[YieldEstimate], None] | None = None) -> np.ndarray:
    """Central-difference yield gradient in the deterministic parameters.

    Every perturbed yield re-classifies the offsets of ``sample_set`` at the
    same mean, so no new samples are drawn and the difference is not
    swamped by sampling noise.  ``estimator`` selects how samples are
    classified (classic by default); ``on_estimate`` sees each perturbed
    estimate, which is how callers account for the extra model calls.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.size == 0:
        return np.zeros(0)
    steps = default_fd_steps(d) if steps is None else steps
    estimator = estimator or MonteCarloEstimator(model, spec)

    def yield_at(dd):
        est = estimator.classify_offsets(uspec.mean, dd, sample_set.offsets)
        if on_estimate is not None:
            on_estimate(est)
        return est.value

    return central_difference(yield_at, d, steps)


@dataclass(frozen=True, eq=False)
class BfgsState:
    """BFGS approximation of the Hessian of the negated yield.

    ``updated`` records whether the last call to :func:`bfgs_update` changed
    the matrix or skipped a pair that failed the curvature test.
    """

    hessian_approx: np.ndarray
    prev_point: np.ndarray
    prev_gradient: np.ndarray
    updated: bool = False

    @classmethod
    def initial(cls, point, gradient, scale: float = 1.0) -> "BfgsState":
        point = np.asarray(point, dtype=float)
        return cls(scale * np.eye(point.size), point.copy(), np.asarray(gradient, dtype=float).copy())


def bfgs_update(state: BfgsState, new_point, new_gradient) -> BfgsState:
    """One BFGS update from the step and gradient change.

    The pair is skipped (matrix kept) unless
    ``g @ x > 1e-10 * |g| * |x|``, which keeps the matrix positive definite.
    """
    x_new = np.asarray(new_point, dtype=float)
    g_new = np.asarray(new_gradient, dtype=float)
    H = state.hessian_approx
    if x_new.shape != state.prev_point.shape or g_new.shape != state.prev_gradient.shape:
        raise ConfigurationError("BFGS point/gradient dimensions do not match the state")
    x = x_new - state.prev_point
    g = g_new - state.prev_gradient
    gx = g @ x
    Hx = H @ x
    xHx = x @ Hx
    if gx <= CURVATURE_TOL * np.linalg.norm(g) * np.linalg.norm(x) or xHx <= 0:
        return BfgsState(H, x_new.copy(), g_new.copy(), updated=False)
    H_next = H + np.outer(g, g) / gx - np.outer(Hx, Hx) / xHx
    H_next = 0.5 * (H_next + H_next.T)
    return BfgsState(H_next, x_new.copy(), g_new.copy(), updated=True)


def regularize_spd(H: np.ndarray) -> tuple[np.ndarray, float]:
    """Add the smallest shift from ``0, 1e-8, 1e-6, ...`` that makes ``H`` SPD."""
    H = 0.5 * (H + H.T)
    eye = np.eye(H.shape[0])
    for tau in _SHIFTS:
        try:
            np.linalg.cholesky(H + tau * eye)
            return H + tau * eye, tau
        except np.linalg.LinAlgError:
            continue
    # beyond the table the diagonal dominates anything finite we produce
    tau = _SHIFTS[-1]
    while True:
        tau *= 100.0
        try:
            np.linalg.cholesky(H + tau * eye)
            return H + tau * eye, tau
        except np.linalg.LinAlgError:
            continue


def assemble_mixed_hessian(bfgs: BfgsState, analytic_pp) -> np.ndarray:
    """Full Hessian approximation with the analytic uncertain-mean block.

    The leading block of the BFGS matrix is replaced by ``analytic_pp``
    (already negated, like the BFGS matrix); the remaining blocks are kept.
    The result is symmetrized and shifted to be positive definite.
    """
    analytic_pp = np.atleast_2d(np.asarray(analytic_pp, dtype=float))
    k = analytic_pp.shape[0]
    H = bfgs.hessian_approx.copy()
    if k > H.shape[0] or analytic_pp.shape != (k, k):
        raise ConfigurationError("analytic block does not fit the BFGS matrix")
    H[:k, :k] = analytic_pp
    return regularize_spd(H)[0]
