"""Monte Carlo yield estimation, classic and surrogate-assisted.

Both estimators keep the sample set they drew.  Samples are stored as
offsets from the mean so the same set can be re-classified at perturbed
designs, which is what the finite-difference gradient and the line search
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gpr import GaussianProcess, fit_gpr, median_length_scales
from .qoi import PerformanceSpec, QoiModel, classify
from .uq import RngStream, UncertainSpec, draw_offsets

__all__ = [
    "AcceptedStatistics",
    "SampleSet",
    "HybridDiagnostics",
    "YieldEstimate",
    "sigma_mc",
    "accepted_statistics",
    "SurrogatePool",
    "MonteCarloEstimator",
    "HybridEstimator",
    "estimate_yield_mc",
    "estimate_yield_hybrid",
]


def sigma_mc(y: float, n: int) -> float:
    """Standard deviation ``sqrt(y (1 - y) / n)`` of a Monte Carlo yield."""
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"yield must lie in [0, 1], got {y}")
    return float(np.sqrt(y * (1.0 - y) / n))


def worst_case_sample_size(sigma_max: float) -> int:
    """Smallest ``n`` with ``sigma_mc(0.5, n) <= sigma_max``."""
    n = int(np.ceil(0.25 / sigma_max**2 - 1e-9))
    while sigma_mc(0.5, n) > sigma_max:
        n += 1
    return n


@dataclass(frozen=True, eq=False)
class AcceptedStatistics:
    """Mean and population covariance of the samples inside the safe domain.

    ``defined`` is False when fewer than two samples were accepted; mean and
    covariance are NaN in that case.
    """

    count: int
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def defined(self) -> bool:
        return self.count >= 2


def accepted_statistics(points: np.ndarray, indicator: np.ndarray) -> AcceptedStatistics:
    acc = points[indicator]
    k = acc.shape[0]
    n_p = points.shape[1]
    if k < 2:
        return AcceptedStatistics(k, np.full(n_p, np.nan), np.full((n_p, n_p), np.nan))
    mean = acc.mean(axis=0)
    centered = acc - mean
    cov = centered.T @ centered / k
    return AcceptedStatistics(k, mean, 0.5 * (cov + cov.T))


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Retained samples ``mean + offsets`` and their safe-domain indicator."""

    mean: np.ndarray
    offsets: np.ndarray
    indicator: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.mean + self.offsets

    def __len__(self) -> int:
        return self.offsets.shape[0]


@dataclass(frozen=True, eq=False)
class HybridDiagnostics:
    """Per-sample bookkeeping of a surrogate-assisted classification.

    ``pred_mean``/``pred_std`` hold the surrogate prediction per sample and
    range point (NaN where the surrogate was not consulted).
    """

    pred_mean: np.ndarray
    pred_std: np.ndarray
    critical: np.ndarray
    true_evaluated: np.ndarray
    design: np.ndarray
    gamma: float


@dataclass(frozen=True, eq=False)
class YieldEstimate:
    """Result of one yield estimation.

    ``qoi_evals`` counts every (sample, range point) classification,
    ``full_model_evals`` only those that called the true model.
    """

    value: float
    n_samples: int
    sigma: float
    accepted: AcceptedStatistics
    qoi_evals: int
    full_model_evals: int
    samples: SampleSet
    hybrid: Optional[HybridDiagnostics] = None

    @property
    def degenerate(self) -> bool:
        return not self.accepted.defined


def _make_estimate(points, offsets, mean, indicator, qoi_evals, full_evals, hybrid=None) -> YieldEstimate:
    n = indicator.size
    value = int(indicator.sum()) / n
    return YieldEstimate(
        value=value,
        n_samples=n,
        sigma=sigma_mc(value, n),
        accepted=accepted_statistics(points, indicator),
        qoi_evals=qoi_evals,
        full_model_evals=full_evals,
        samples=SampleSet(np.array(mean, dtype=float), offsets, indicator),
        hybrid=hybrid,
    )


class MonteCarloEstimator:
    """Classic Monte Carlo: every sample is classified with the true model."""

    hybrid = False

    def __init__(self, model: QoiModel, spec: PerformanceSpec):
        self.model = model
        self.spec = spec

    def estimate(self, uspec: UncertainSpec, d, n: int, rng: RngStream) -> YieldEstimate:
        """Draw ``n`` fresh samples around ``uspec.mean`` and classify them."""
        return self.classify_offsets(uspec.mean, d, draw_offsets(uspec, n, rng))

    def classify_offsets(self, mean, d, offsets) -> YieldEstimate:
        """Classify the fixed offsets translated to ``mean`` at ``d``."""
        points = np.asarray(mean, dtype=float) + offsets
        indicator, _ = classify(self.model, self.spec, points, d)
        evals = points.shape[0] * len(self.spec.grid)
        return _make_estimate(points, offsets, mean, indicator, evals, evals)


@dataclass
class SurrogatePool:
    """True-model evaluations available for training the surrogate.

    Inputs are rows ``(p, d, r)``; including ``d`` lets one surrogate serve
    nearby designs.  When more than ``max_size`` rows are held the oldest
    are dropped.  Targets below ``threshold - floor_margin`` are clipped to
    that level before fitting: it does not change any classification and
    removes the deep reflection nulls a smooth kernel cannot follow.

    Length scales are fixed at the first fit (half the median-distance
    heuristic on the initial design) and reused by every refit, so the
    kernel does not drift with the clustering of later designs.  Columns
    without spread in the initial design, which includes ``d``, get
    ``fallback_length``.
    """

    max_size: int = 2500
    floor_margin: Optional[float] = 5.0
    length_scale_factor: float = 0.5
    fallback_length: float = 1.0
    length_scales: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None
    fits: int = 0
    _gp: Optional[GaussianProcess] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return 0 if self.targets is None else self.targets.size

    @staticmethod
    def rows(points, d, grid) -> np.ndarray:
        n, m = points.shape[0], len(grid)
        return np.hstack([
            np.repeat(points, m, axis=0),
            np.tile(np.asarray(d, float), (n * m, 1)),
            np.tile(grid, n)[:, None],
        ])

    def add(self, points, d, grid, q) -> None:
        x, y = self.rows(points, d, grid), q.ravel()
        if self.inputs is not None:
            x, y = np.vstack([self.inputs, x]), np.concatenate([self.targets, y])
        self.inputs, self.targets = x[-self.max_size:], y[-self.max_size:]
        self._gp = None

    def surrogate(self, threshold: float) -> GaussianProcess:
        if self._gp is None:
            y = self.targets
            if self.floor_margin is not None:
                y = np.maximum(y, threshold - self.floor_margin)
            if self.length_scales is None:
                self.length_scales = median_length_scales(
                    self.inputs, self.length_scale_factor, self.fallback_length)
            self._gp = fit_gpr(self.inputs, y, length_scales=self.length_scales)
            self.fits += 1
        return self._gp


def space_filling_subset(points: np.ndarray, k: int, scale: np.ndarray) -> np.ndarray:
    """Indices of ``k`` rows chosen by greedy farthest-point selection.

    Starts from the row closest to the centroid; distances are measured
    after dividing by ``scale``.
    """
    x = points / scale
    k = min(k, x.shape[0])
    first = int(np.argmin(((x - x.mean(0)) ** 2).sum(1)))
    chosen = [first]
    dist = ((x - x[first]) ** 2).sum(1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((x - x[nxt]) ** 2).sum(1))
    return np.array(chosen)


class HybridEstimator(MonteCarloEstimator):
    """Monte Carlo classification by a GP surrogate with true-model fallback.

    A sample is *critical* when, at any range point, the surrogate's
    predicted margin lies within ``gamma`` predicted standard deviations of
    the threshold: ``|mu - c| <= gamma * sd``.  Critical samples are
    classified with the true model at all range points; the others take the
    surrogate's verdict.  If the pool is empty, ``initial_design_size``
    space-filling samples are evaluated first.  New true evaluations join
    the pool only after the current classification is complete.
    """

    hybrid = True

    def __init__(self, model, spec, gamma: float = 3.0, initial_design_size: int = 50,
                 pool: Optional[SurrogatePool] = None):
        super().__init__(model, spec)
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if initial_design_size < 2:
            raise ValueError("initial_design_size must be at least 2")
        self.gamma = float(gamma)
        self.initial_design_size = int(initial_design_size)
        self.pool = pool if pool is not None else SurrogatePool()

    def classify_offsets(self, mean, d, offsets) -> YieldEstimate:
        spec, model = self.spec, self.model
        grid = spec.grid.points
        m = grid.size
        points = np.asarray(mean, dtype=float) + offsets
        n = points.shape[0]
        indicator = np.zeros(n, dtype=bool)
        true_done = np.zeros(n, dtype=bool)
        design = np.zeros(n, dtype=bool)
        pending = []

        if self.pool.size == 0:
            scale = np.std(offsets, axis=0)
            scale[scale == 0] = 1.0
            idx = space_filling_subset(points, min(self.initial_design_size, n), scale)
            ok, margins = classify(model, spec, points[idx], d)
            indicator[idx] = ok
            true_done[idx] = design[idx] = True
            self.pool.add(points[idx], d, grid, margins + spec.threshold)

        pred_mean = np.full((n, m), np.nan)
        pred_std = np.full((n, m), np.nan)
        rest = np.flatnonzero(~true_done)
        if rest.size:
            gp = self.pool.surrogate(spec.threshold)
            mu, sd = gp.predict(self.pool.rows(points[rest], d, grid))
            mu, sd = mu.reshape(rest.size, m), sd.reshape(rest.size, m)
            pred_mean[rest], pred_std[rest] = mu, sd
            crit = np.any(np.abs(mu - spec.threshold) <= self.gamma * sd, axis=1)
            indicator[rest[~crit]] = np.all(mu[~crit] <= spec.threshold, axis=1)
            ci = rest[crit]
            if ci.size:
                ok, margins = classify(model, spec, points[ci], d)
                indicator[ci] = ok
                true_done[ci] = True
                pending.append((points[ci], margins + spec.threshold))

        for pts, q in pending:
            self.pool.add(pts, d, grid, q)

        critical = np.zeros(n, dtype=bool)
        critical[rest] = np.any(np.abs(pred_mean[rest] - spec.threshold) <= self.gamma * pred_std[rest], axis=1)
        diag = HybridDiagnostics(pred_mean, pred_std, critical, true_done, design, self.gamma)
        return _make_estimate(points, offsets, mean, indicator, n * m, int(true_done.sum()) * m, diag)


def estimate_yield_mc(model: QoiModel, spec: PerformanceSpec, uspec: UncertainSpec, d, n: int,
                      rng: RngStream) -> YieldEstimate:
    """Classic Monte Carlo yield estimate from ``n`` fresh truncated samples."""
    return MonteCarloEstimator(model, spec).estimate(uspec, d, n, rng)


def estimate_yield_hybrid(model: QoiModel, spec: PerformanceSpec, uspec: UncertainSpec, d, n: int,
                          rng: RngStream, gamma: float = 3.0, initial_design_size: int = 50,
                          pool: Optional[SurrogatePool] = None) -> YieldEstimate:
    """Surrogate-assisted yield estimate; see :class:`HybridEstimator`.

    Without ``pool`` a fresh surrogate is trained on an initial design drawn
    from this sample set.
    """
    if n < initial_design_size:
        raise ValueError("n must be at least initial_design_size")
    return HybridEstimator(model, spec, gamma, initial_design_size, pool).estimate(uspec, d, n, rng)
