"""Gaussian model of the uncertain design parameters.

The uncertain parameters are normally distributed around a design mean and
truncated to a per-coordinate box that travels with the mean.  Sampling is
done by plain rejection from the untruncated Gaussian, which is exact and,
for boxes of a few standard deviations, wastes almost nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DegenerateTruncationError

__all__ = [
    "UncertainSpec",
    "RngStream",
    "gaussian_pdf",
    "draw_offsets",
    "sample_truncated",
]

# rejection sampling gives up below this acceptance rate
MIN_ACCEPTANCE = 1e-3
# ... but only after this many proposals have been made
MIN_PROPOSALS_BEFORE_GIVING_UP = 10_000


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UncertainSpec:
    """Mean, covariance and truncation box of the uncertain parameters.

    Parameters
    ----------
    mean : array_like, shape (n,)
        Design mean of the uncertain parameters.
    covariance : array_like, shape (n, n)
        Symmetric positive definite covariance matrix.
    truncation_halfwidth : float or array_like, shape (n,)
        Half-width of the truncation box around ``mean``.  ``inf`` disables
        truncation in that coordinate.
    """

    mean: np.ndarray
    covariance: np.ndarray
    truncation_halfwidth: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float)).copy()
        n = mean.shape[0]
        if mean.ndim != 1:
            raise ConfigurationError("mean must be a vector")
        if cov.shape != (n, n):
            raise ConfigurationError(
                f"covariance has shape {cov.shape}, expected {(n, n)} for a mean of length {n}"
            )
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ConfigurationError("covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ConfigurationError("covariance is not positive definite") from None
        half = np.broadcast_to(np.asarray(self.truncation_halfwidth, dtype=float), (n,)).copy()
        if not np.all(half > 0):
            raise ConfigurationError("truncation_halfwidth must be positive in every coordinate")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))
        object.__setattr__(self, "truncation_halfwidth", _frozen(half))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance."""
        return _frozen(np.linalg.cholesky(self.covariance))

    @cached_property
    def precision(self) -> np.ndarray:
        """Inverse covariance, computed through the Cholesky factor."""
        inv = linalg.cho_solve((self.cholesky, True), np.eye(self.dim))
        return _frozen(0.5 * (inv + inv.T))

    def with_mean(self, mean) -> "UncertainSpec":
        """Same covariance and truncation box, centered at ``mean``."""
        return UncertainSpec(mean, self.covariance, self.truncation_halfwidth)

    def in_box(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of the rows of ``points`` inside the truncation box."""
        return np.all(np.abs(np.atleast_2d(points) - self.mean) <= self.truncation_halfwidth, axis=1)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams are built with :class:`numpy.random.SeedSequence` using the
    stream id as spawn key, so different ids give independent PCG64 streams
    and the same pair always gives the same draws.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ConfigurationError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def gaussian_pdf(spec: UncertainSpec, point) -> float:
    """Normalized multivariate normal density of ``spec`` at ``point``.

    The truncation box is ignored; this is the untruncated density.
    """
    x = np.atleast_1d(np.asarray(point, dtype=float))
    if x.shape != spec.mean.shape:
        raise ConfigurationError(f"point has shape {x.shape}, expected {spec.mean.shape}")
    z = linalg.solve_triangular(spec.cholesky, x - spec.mean, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(spec.cholesky)))
    return float(np.exp(-0.5 * (z @ z) - 0.5 * log_det - 0.5 * spec.dim * np.log(2.0 * np.pi)))


def draw_offsets(spec: UncertainSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` truncated offsets ``p - mean``, shape ``(n, dim)``.

    Offsets rather than absolute samples make it cheap to translate one
    sample set to a neighbouring mean (common random numbers).
    """
    if n < 1:
        raise ConfigurationError(f"number of samples must be positive, got {n}")
    gen = rng.generator()
    chunks = []
    accepted = proposed = 0
    while accepted < n:
        # over-propose a little so the common case needs one round
        batch = max(int(1.05 * (n - accepted)) + 16, 64)
        z = gen.standard_normal((batch, spec.dim))
        x = z @ spec.cholesky.T
        ok = np.all(np.abs(x) <= spec.truncation_halfwidth, axis=1)
        chunks.append(x[ok])
        accepted += int(ok.sum())
        proposed += batch
        if proposed >= MIN_PROPOSALS_BEFORE_GIVING_UP and accepted < MIN_ACCEPTANCE * proposed:
            raise DegenerateTruncationError(
                f"truncation box accepted {accepted} of {proposed} proposals"
            )
    return np.concatenate(chunks)[:n]


def sample_truncated(spec: UncertainSpec, n: int, rng: RngStream) -> np.ndarray:
    """Draw ``n`` samples of the truncated Gaussian, shape ``(n, dim)``."""
    return spec.mean + draw_offsets(spec, n, rng)
