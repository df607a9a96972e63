"""Yield maximization drivers.

``newton_mixed`` is a globalized Newton ascent on the Monte Carlo yield.
Its gradient combines the sample-statistics gradient in the uncertain mean
with finite differences in the deterministic parameters; its Hessian is a
full-space BFGS matrix whose uncertain-mean block is replaced by the
sample-statistics Hessian.  With ``adaptive=True`` the sample size starts
small and doubles whenever Monte Carlo noise dominates the progress.

``nelder_mead_reference`` is the derivative-free baseline.  Both record
every iteration together with cumulative evaluation counters in a
:class:`RunRecord`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .deriv import (
    BfgsState,
    assemble_mixed_hessian,
    bfgs_update,
    default_fd_steps,
    fd_grad_det,
    grad_yield_mean,
    hess_yield_mean,
)
from .errors import ConfigurationError, DomainError, YieldOptError
from .estimate import (
    HybridEstimator,
    MonteCarloEstimator,
    SurrogatePool,
    YieldEstimate,
    worst_case_sample_size,
)
from .qoi import DesignPoint, PerformanceSpec, QoiModel
from .uq import RngStream, UncertainSpec, draw_offsets

__all__ = [
    "OptimizerConfig",
    "Problem",
    "IterationRecord",
    "RunRecord",
    "newton_mixed",
    "nelder_mead_reference",
    "compare_strategies",
    "STRATEGIES",
]

log = logging.getLogger(__name__)

STRATEGIES = {
    "v1": "V1dfo-ref",
    "v2": "V2mix-na",
    "v3": "V3mix-a",
    "v4": "V4mix-ha",
}

# stream ids inside one strategy's block of 1_000_000
_FINAL_STREAM = 900_000
_VERIFY_STREAM = 950_000


@dataclass
class OptimizerConfig:
    sigma_max: float = 0.01
    n_initial: int = 100
    n_max: int = 2500
    max_iterations: int = 50
    gradient_tolerance: float = 1e-3
    step_tolerance: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 20
    angle_threshold: float = 1e-4
    max_step: float = 0.5
    fd_steps: Optional[tuple] = None
    hybrid: bool = False
    gamma: float = 3.0
    initial_design_size: int = 50
    nm_max_evals: int = 200
    nm_diameter_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_max", "gradient_tolerance", "step_tolerance", "armijo_c1",
                     "angle_threshold", "max_step", "nm_diameter_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("armijo_c1", "backtrack_factor", "angle_threshold"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        for name in ("n_initial", "n_max", "max_iterations", "nm_max_evals", "initial_design_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.n_initial > self.n_max:
            raise ConfigurationError("n_initial must not exceed n_max")
        if self.max_backtracks < 0:
            raise ConfigurationError("max_backtracks must be nonnegative")
        if self.gamma < 0:
            raise ConfigurationError("gamma must be nonnegative")
        if self.fd_steps is not None and any(h <= 0 for h in self.fd_steps):
            raise ConfigurationError("fd_steps must be positive")

    @property
    def fixed_sample_size(self) -> int:
        """Sample size of the non-adaptive method: worst case ``sigma_mc <= sigma_max``."""
        return worst_case_sample_size(self.sigma_max)


@dataclass(frozen=True)
class Problem:
    model: QoiModel
    spec: PerformanceSpec
    uspec: UncertainSpec
    initial: DesignPoint
    name: str = "problem"

    def __post_init__(self):
        if self.initial.n_uncertain != self.uspec.dim:
            raise ConfigurationError("initial uncertain mean does not match the uncertain spec")
        if self.initial.n_uncertain != self.model.n_uncertain:
            raise ConfigurationError("model and uncertain spec disagree in dimension")
        if self.initial.n_deterministic != self.model.n_deterministic:
            raise ConfigurationError("initial deterministic vector does not match the model")


@dataclass(frozen=True)
class IterationRecord:
    """One row of optimizer telemetry.

    ``kind`` is ``"iterate"`` for an outer Newton iteration, ``"eval"`` for
    one Nelder-Mead objective call and ``"final"`` for the closing
    re-estimate.  Counters are cumulative and include this row's work.
    """

    iteration: int
    kind: str
    point: DesignPoint
    yield_value: float
    sigma: float
    n_samples: int
    grad_norm: float
    step_norm: float
    cum_yield_evals: int
    cum_qoi_evals: int
    cum_full_model_evals: int
    steepest: bool = False
    backtracks: int = 0


@dataclass
class RunRecord:
    strategy: str
    entries: list = field(default_factory=list)
    status: str = "running"
    optimum: Optional[DesignPoint] = None
    final_yield: float = float("nan")
    final_sigma: float = float("nan")
    final_n_samples: int = 0
    verified_yield: Optional[float] = None
    error: Optional[str] = None

    @property
    def yield_evals(self) -> int:
        return self.entries[-1].cum_yield_evals if self.entries else 0

    @property
    def qoi_evals(self) -> int:
        return self.entries[-1].cum_qoi_evals if self.entries else 0

    @property
    def full_model_evals(self) -> int:
        return self.entries[-1].cum_full_model_evals if self.entries else 0

    @property
    def failed(self) -> bool:
        return self.status == "failed"


class _Tally:
    """Cumulative evaluation counters of one run."""

    def __init__(self):
        self.yield_evals = 0
        self.qoi_evals = 0
        self.full_model_evals = 0

    def __call__(self, est: YieldEstimate) -> None:
        self.yield_evals += 1
        self.qoi_evals += est.qoi_evals
        self.full_model_evals += est.full_model_evals

    def row(self, **kw) -> IterationRecord:
        return IterationRecord(
            cum_yield_evals=self.yield_evals,
            cum_qoi_evals=self.qoi_evals,
            cum_full_model_evals=self.full_model_evals,
            **kw,
        )


def _make_estimator(problem: Problem, config: OptimizerConfig) -> MonteCarloEstimator:
    if config.hybrid:
        return HybridEstimator(problem.model, problem.spec, config.gamma,
                               config.initial_design_size, SurrogatePool())
    return MonteCarloEstimator(problem.model, problem.spec)


def _verify(problem: Problem, point: DesignPoint, config: OptimizerConfig, stream_base: int) -> float:
    """Classic Monte Carlo yield at ``point`` with ``n_max`` samples, outside the tally."""
    est = MonteCarloEstimator(problem.model, problem.spec).estimate(
        problem.uspec.with_mean(point.uncertain_mean), point.deterministic, config.n_max,
        RngStream(config.seed, stream_base + _VERIFY_STREAM))
    return est.value


def newton_mixed(problem: Problem, config: OptimizerConfig, adaptive: bool,
                 strategy: str = "newton", stream_base: int = 0) -> RunRecord:
    """Globalized Newton ascent with the mixed derivative strategy.

    Each outer iteration draws fresh samples at the current mean, builds the
    gradient and the mixed Hessian, solves for the Newton direction (or
    falls back to steepest ascent when it is not an ascent direction), caps
    its length at ``config.max_step`` and runs an Armijo backtracking line
    search on the same sample set.  Backtracking ends early once a trial
    point classifies every sample exactly as the current point does.  When every sample of an estimate is
    safe there is nothing left to gain on that set: the adaptive method
    then doubles the sample size, the fixed one stops.
    """
    n_p = problem.uspec.dim
    estimator = _make_estimator(problem, config)
    tally = _Tally()
    run = RunRecord(strategy)
    x = problem.initial.as_vector()
    n = config.n_initial if adaptive else config.fixed_sample_size
    n = min(n, config.n_max) if adaptive else n
    bfgs: Optional[BfgsState] = None
    status = "max-iter"

    for k in range(config.max_iterations):
        point = DesignPoint.from_vector(x, n_p)
        us = problem.uspec.with_mean(point.uncertain_mean)
        est = estimator.estimate(us, point.deterministic, n, RngStream(config.seed, stream_base + k))
        tally(est)
        base = dict(iteration=k, kind="iterate", point=point, yield_value=est.value,
                    sigma=est.sigma, n_samples=n)

        if est.value == 1.0:
            run.entries.append(tally.row(grad_norm=0.0, step_norm=0.0, **base))
            if adaptive and n < config.n_max:
                n = min(2 * n, config.n_max)
                continue
            status = "converged"
            break

        g_mean = grad_yield_mean(est, us)
        h_mean = hess_yield_mean(est, us)
        steps = config.fd_steps if config.fd_steps is not None else default_fd_steps(point.deterministic)
        g_det = fd_grad_det(problem.model, problem.spec, us, point.deterministic, est.samples,
                            steps, estimator=estimator, on_estimate=tally)
        g = np.concatenate([g_mean, g_det])
        gnorm = float(np.linalg.norm(g))

        if gnorm <= config.gradient_tolerance:
            run.entries.append(tally.row(grad_norm=gnorm, step_norm=0.0, **base))
            status = "degenerate" if est.degenerate else "converged"
            break

        # BFGS works on the negated yield
        bfgs = BfgsState.initial(x, -g) if bfgs is None else bfgs_update(bfgs, x, -g)
        steepest = est.degenerate
        if not steepest:
            H = assemble_mixed_hessian(bfgs, -h_mean)
            s = np.linalg.solve(H, g)
            snorm = np.linalg.norm(s)
            if not np.all(np.isfinite(s)) or g @ s < config.angle_threshold * gnorm * snorm:
                steepest = True
        if steepest:
            s = g.copy()
        snorm = float(np.linalg.norm(s))
        if snorm > config.max_step:
            s *= config.max_step / snorm

        slope = float(g @ s)
        alpha = 1.0
        accepted = None
        for j in range(config.max_backtracks + 1):
            trial = DesignPoint.from_vector(x + alpha * s, n_p)
            try:
                est_t = estimator.classify_offsets(trial.uncertain_mean, trial.deterministic,
                                                   est.samples.offsets)
            except DomainError:
                est_t = None
            if est_t is not None:
                tally(est_t)
                if est_t.value >= est.value + config.armijo_c1 * alpha * slope:
                    accepted = est_t
                    break
                # no sample changed class: shorter steps cannot raise the yield on this set
                if np.array_equal(est_t.samples.indicator, est.samples.indicator):
                    break
            alpha *= config.backtrack_factor

        if accepted is None:
            run.entries.append(tally.row(grad_norm=gnorm, step_norm=0.0, steepest=steepest,
                                         backtracks=j, **base))
            # a stall is only blamed on sampling noise while the error indicator says so
            if adaptive and n < config.n_max and est.sigma > config.sigma_max:
                n = min(2 * n, config.n_max)
                continue
            status = "degenerate"
            break

        step = alpha * s
        x = x + step
        run.entries.append(tally.row(grad_norm=gnorm, step_norm=float(np.linalg.norm(step)),
                                     steepest=steepest, backtracks=j, **base))
        if adaptive and est.sigma > config.sigma_max and abs(accepted.value - est.value) < 2.0 * est.sigma:
            n = min(2 * n, config.n_max)
        if np.linalg.norm(step) < config.step_tolerance:
            status = "converged"
            break

    optimum = DesignPoint.from_vector(x, n_p)
    _finish(run, problem, config, estimator, tally, optimum, status, stream_base,
            iteration=len(run.entries))
    return run


def _finish(run, problem, config, estimator, tally, optimum, status, stream_base, iteration):
    est = estimator.estimate(problem.uspec.with_mean(optimum.uncertain_mean), optimum.deterministic,
                             config.n_max, RngStream(config.seed, stream_base + _FINAL_STREAM))
    tally(est)
    run.entries.append(tally.row(iteration=iteration, kind="final", point=optimum,
                                 yield_value=est.value, sigma=est.sigma, n_samples=config.n_max,
                                 grad_norm=0.0, step_norm=0.0))
    run.status = status
    run.optimum = optimum
    run.final_yield = est.value
    run.final_sigma = est.sigma
    run.final_n_samples = config.n_max


def nelder_mead_reference(problem: Problem, config: OptimizerConfig, strategy: str = "nelder-mead",
                          stream_base: int = 0) -> RunRecord:
    """Derivative-free Nelder-Mead maximization of the Monte Carlo yield.

    One set of ``n_max`` offsets is drawn up front and reused for every
    objective call, so the objective is a deterministic function of the
    design.  Coefficients: reflection 1, expansion 2, contraction 0.5,
    shrink 0.5.  Stops when the simplex diameter falls below
    ``nm_diameter_tol`` or after ``nm_max_evals`` objective calls.
    """
    n_p = problem.uspec.dim
    estimator = MonteCarloEstimator(problem.model, problem.spec)
    tally = _Tally()
    run = RunRecord(strategy)
    x0 = problem.initial.as_vector()
    dim = x0.size
    offsets = draw_offsets(problem.uspec.with_mean(problem.initial.uncertain_mean), config.n_max,
                           RngStream(config.seed, stream_base))

    def objective(x):
        point = DesignPoint.from_vector(x, n_p)
        try:
            est = estimator.classify_offsets(point.uncertain_mean, point.deterministic, offsets)
        except DomainError:
            return -np.inf
        tally(est)
        run.entries.append(tally.row(iteration=len(run.entries), kind="eval", point=point,
                                     yield_value=est.value, sigma=est.sigma, n_samples=config.n_max,
                                     grad_norm=0.0, step_norm=0.0))
        return est.value

    edge = np.maximum(0.05 * np.abs(x0), 0.1)
    simplex = [x0] + [x0 + edge[i] * np.eye(dim)[i] for i in range(dim)]
    values = [objective(v) for v in simplex]
    status = "max-iter"

    while True:
        order = np.argsort(values, kind="stable")[::-1]
        simplex = [simplex[i] for i in order]
        values = [values[i] for i in order]
        diameter = max(np.linalg.norm(a - b) for a in simplex for b in simplex)
        if diameter < config.nm_diameter_tol:
            status = "converged"
            break
        if tally.yield_evals >= config.nm_max_evals:
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = objective(xr)
        if fr > values[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = objective(xe)
            simplex[-1], values[-1] = (xe, fe) if fe > fr else (xr, fr)
            continue
        if fr > values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr > values[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = objective(xc)
            if fc >= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = objective(xc)
            if fc > values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        best = simplex[0]
        for i in range(1, len(simplex)):
            simplex[i] = best + 0.5 * (simplex[i] - best)
            values[i] = objective(simplex[i])

    optimum = DesignPoint.from_vector(simplex[int(np.argmax(values))], n_p)
    _finish(run, problem, config, estimator, tally, optimum, status, stream_base,
            iteration=len(run.entries))
    return run


def _run_one(key: str, problem: Problem, config: OptimizerConfig, stream_base: int) -> RunRecord:
    name = STRATEGIES[key]
    if key == "v1":
        return nelder_mead_reference(problem, config, name, stream_base)
    if key == "v2":
        return newton_mixed(problem, replace(config, hybrid=False), False, name, stream_base)
    if key == "v3":
        return newton_mixed(problem, replace(config, hybrid=False), True, name, stream_base)
    if key == "v4":
        return newton_mixed(problem, replace(config, hybrid=True), True, name, stream_base)
    raise ConfigurationError(f"unknown strategy {key!r}")


def compare_strategies(problem: Problem, config: OptimizerConfig,
                       strategies=("v1", "v2", "v3", "v4"), verify: bool = True) -> dict:
    """Run the selected strategies under one master seed.

    Each strategy draws from its own block of stream ids, so the records do
    not depend on which other strategies ran.  A failing strategy is
    recorded with status ``"failed"`` and does not stop the others.  With
    ``verify`` the final design of each run is re-checked by classic Monte
    Carlo on an independent stream; that check is not counted.
    """
    records = {}
    for key in strategies:
        key = key.lower()
        if key not in STRATEGIES:
            raise ConfigurationError(f"unknown strategy {key!r}; choose from {', '.join(STRATEGIES)}")
        stream_base = (list(STRATEGIES).index(key) + 1) * 1_000_000
        try:
            rec = _run_one(key, problem, config, stream_base)
            if verify:
                rec.verified_yield = _verify(problem, rec.optimum, config, stream_base)
        except (YieldOptError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("strategy %s failed: %s", key, exc)
            rec = RunRecord(STRATEGIES[key], status="failed", error=f"{type(exc).__name__}: {exc}")
        records[key] = rec
    return records
