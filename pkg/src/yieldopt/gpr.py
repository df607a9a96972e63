"""Exact Gaussian process regression with a squared-exponential kernel.

Hyperparameters are set by heuristics rather than by likelihood
optimization so that a fit is a deterministic function of its data.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .errors import SurrogateFitError

__all__ = ["GaussianProcess", "fit_gpr", "median_length_scales"]

MAX_JITTER = 1e-4
_PREDICT_CHUNK = 4096
_HEURISTIC_POINTS = 500


def median_length_scales(X: np.ndarray, factor: float = 1.0, fallback: float = 1.0) -> np.ndarray:
    """``factor`` times the per-dimension median of nonzero pairwise distances.

    Dimensions without spread get ``fallback``.  Only the first 500 rows are
    used, which keeps the heuristic cheap for large training sets.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))[:_HEURISTIC_POINTS]
    i, j = np.triu_indices(X.shape[0], k=1)
    scales = np.full(X.shape[1], float(fallback))
    for k in range(X.shape[1]):
        diff = np.abs(X[i, k] - X[j, k])
        diff = diff[diff > 0]
        if diff.size:
            scales[k] = factor * np.median(diff)
    return scales


class GaussianProcess:
    """Posterior of a GP with constant prior mean and SE kernel.

    The kernel is ``s2 * exp(-0.5 * sum(((x - x') / ell)**2))``.  Jitter is
    added to the diagonal of the correlation matrix ``K / s2`` and raised
    tenfold from ``jitter`` until the Cholesky factorization succeeds or
    :data:`MAX_JITTER` is exceeded.
    """

    def __init__(self, X, y, length_scales, signal_variance, prior_mean=0.0, jitter=1e-8):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] < 2:
            raise SurrogateFitError("need at least two training points")
        if X.shape[0] != y.size:
            raise SurrogateFitError("inputs and targets disagree in length")
        self.X = X
        self.y = y
        self.length_scales = np.broadcast_to(np.asarray(length_scales, float), (X.shape[1],)).copy()
        self.signal_variance = float(signal_variance)
        self.prior_mean = float(prior_mean)

        corr = self._correlation(X, X)
        while True:
            try:
                self._chol = linalg.cholesky(corr + jitter * np.eye(X.shape[0]), lower=True)
                break
            except linalg.LinAlgError:
                jitter *= 10.0
                if jitter > MAX_JITTER * (1 + 1e-9):
                    raise SurrogateFitError(
                        f"kernel matrix of {X.shape[0]} points is not positive definite "
                        f"with jitter up to {MAX_JITTER:g}"
                    ) from None
        self.jitter = jitter
        # alpha solves (K/s2 + jitter I) alpha = (y - m); the s2 factors cancel in the mean
        self._alpha = linalg.cho_solve((self._chol, True), y - self.prior_mean)

    def _correlation(self, A, B):
        return np.exp(-0.5 * cdist(A / self.length_scales, B / self.length_scales, "sqeuclidean"))

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation of the latent function."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        mean = np.empty(Xq.shape[0])
        std = np.empty(Xq.shape[0])
        for lo in range(0, Xq.shape[0], _PREDICT_CHUNK):
            kq = self._correlation(Xq[lo : lo + _PREDICT_CHUNK], self.X)
            mean[lo : lo + _PREDICT_CHUNK] = self.prior_mean + kq @ self._alpha
            v = linalg.solve_triangular(self._chol, kq.T, lower=True)
            var = self.signal_variance * (1.0 - (v * v).sum(0))
            std[lo : lo + _PREDICT_CHUNK] = np.sqrt(np.maximum(var, 0.0))
        return mean, std


def fit_gpr(X, y, length_scales=None, signal_variance=None, prior_mean=None, jitter=1e-8,
            length_scale_factor=0.5) -> GaussianProcess:
    """Fit a GP, filling unset hyperparameters from the data.

    Defaults: ``length_scale_factor`` times the median-distance length
    scales, the target variance as signal variance and the target mean as
    prior mean.  The factor below one keeps the predictive spread honest for
    the oscillatory waveguide response.  Duplicate input rows are dropped,
    keeping the first occurrence.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    _, first = np.unique(X, axis=0, return_index=True)
    keep = np.sort(first)
    X, y = X[keep], y[keep]
    if length_scales is None:
        length_scales = median_length_scales(X, length_scale_factor)
    if signal_variance is None:
        signal_variance = float(np.var(y))
    if prior_mean is None:
        prior_mean = float(np.mean(y))
    return GaussianProcess(X, y, length_scales, signal_variance, prior_mean, jitter)
