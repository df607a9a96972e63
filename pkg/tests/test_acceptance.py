"""Acceptance criteria, one test (or test group) per criterion.

Each test records its verdict with the ``acceptance`` fixture; the terminal
summary prints one PASS/FAIL line per criterion.
"""

import json

import numpy as np
import pytest
from scipy.stats import norm

from yieldopt import cli
from yieldopt.config import parse_config
from yieldopt.deriv import (
    BfgsState,
    assemble_mixed_hessian,
    bfgs_update,
    central_difference,
    fd_grad_det,
    grad_yield_mean,
    hess_yield_mean,
)
from yieldopt.estimate import (
    HybridEstimator,
    MonteCarloEstimator,
    estimate_yield_mc,
    sigma_mc,
)
from yieldopt.optimize import OptimizerConfig, Problem, newton_mixed
from yieldopt.qoi import DesignPoint, halfspace_oracle
from yieldopt.uq import RngStream, UncertainSpec, draw_offsets

# ---------------------------------------------------------------- criterion 1


def test_c1_sample_size_rule(acceptance):
    exact = sigma_mc(0.5, 2500) == 0.01
    oracle = halfspace_oracle([1.0], 0.0, shift=[1.0])
    problem = Problem(oracle.model, oracle.spec, UncertainSpec([0.0], [[1.0]], 8.0),
                      DesignPoint([0.0], [0.0]))
    cfg = OptimizerConfig(sigma_max=0.01, max_iterations=1, fd_steps=(0.05,))
    run = newton_mixed(problem, cfg, adaptive=False)
    n_used = run.entries[0].n_samples
    ok = acceptance(1, exact and n_used == 2500 and cfg.fixed_sample_size == 2500,
                    f"sigma_mc(0.5, 2500) = {sigma_mc(0.5, 2500)!r}, non-adaptive N = {n_used}")
    assert ok


# ---------------------------------------------------------------- criterion 2

Z_VALUES = (-1.0, 0.0, 1.0)


@pytest.mark.parametrize("z", Z_VALUES)
def test_c2_yield_mean_over_seeds(z, acceptance):
    oracle = halfspace_oracle([1.0], z)
    us = UncertainSpec([0.0], [[1.0]], 8.0)
    est = MonteCarloEstimator(oracle.model, oracle.spec)
    values = [est.estimate(us, [], 2500, RngStream(seed, 7)).value for seed in range(200)]
    target = norm.cdf(z)
    tol = 3 * sigma_mc(target, 2500) / np.sqrt(200)
    err = abs(np.mean(values) - target)
    ok = acceptance(2, err <= tol, f"z={z:+g}: |mean Y - Phi| = {err:.2e} <= {tol:.2e}")
    assert ok


@pytest.mark.parametrize("z", Z_VALUES)
def test_c2_mean_derivatives_at_large_n(z, acceptance):
    oracle = halfspace_oracle([1.0], z)
    us = UncertainSpec([0.0], [[1.0]], 8.0)
    n = 100_000
    est = estimate_yield_mc(oracle.model, oracle.spec, us, [], n, RngStream(2024, int(10 * z) + 50))
    g = grad_yield_mean(est, us)[0]
    h = hess_yield_mean(est, us)[0, 0]
    # both estimators are sample means: g = mean(1_i x_i), h = mean(1_i (x_i^2 - 1))
    x = est.samples.points[:, 0]
    ind = est.samples.indicator
    se_g = np.std(ind * x) / np.sqrt(n)
    se_h = np.std(ind * (x**2 - 1)) / np.sqrt(n)
    g_true = -norm.pdf(z)
    h_true = -z * norm.pdf(z)
    g_ok = abs(g - g_true) <= 5 * se_g
    # the Hessian target vanishes at z = 0, where a relative bound is meaningless
    h_tol = max(0.1 * abs(h_true), 5 * se_h) if z == 0 else 0.1 * abs(h_true)
    h_ok = abs(h - h_true) <= h_tol
    ok = acceptance(2, g_ok and h_ok,
                    f"z={z:+g}: grad err {abs(g - g_true):.1e} (5SE {5 * se_g:.1e}), "
                    f"hess err {abs(h - h_true):.1e} (tol {h_tol:.1e})")
    assert ok


# ---------------------------------------------------------------- criterion 3


def test_c3_fd_matches_analytic_on_shifted_oracle(acceptance):
    oracle = halfspace_oracle([1.0], 0.0, shift=[1.0])
    us = UncertainSpec([0.0], [[1.0]], 8.0)
    d, h, n = np.array([0.3]), 0.1, 50_000
    base = MonteCarloEstimator(oracle.model, oracle.spec).estimate(us, d, n, RngStream(31))
    g_fd = fd_grad_det(oracle.model, oracle.spec, us, d, base.samples, [h])[0]
    g_true = oracle.grad_det(us.mean, us.covariance, d)[0]
    # MC noise: samples falling in the band of width 2h; truncation: exact central-difference bias
    band = oracle.yield_value(us.mean, us.covariance, d + h) - oracle.yield_value(us.mean, us.covariance, d - h)
    se = np.sqrt(band * (1 - band) / n) / (2 * h)
    bias = abs(band / (2 * h) - g_true)
    err = abs(g_fd - g_true)
    ok = acceptance(3, err <= 4 * se + bias,
                    f"FD err {err:.2e} <= 4SE + bias = {4 * se + bias:.2e}")
    assert ok


def test_c3_fd_error_quarters_when_step_halves(acceptance):
    oracle = halfspace_oracle([1.0], 0.0, shift=[1.0])
    mean, cov = np.zeros(1), np.eye(1)
    f = lambda dd: oracle.yield_value(mean, cov, dd)
    d = np.array([0.3])
    g_true = oracle.grad_det(mean, cov, d)[0]
    errs = [abs(central_difference(f, d, [h])[0] - g_true) for h in (0.2, 0.1, 0.05)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = acceptance(3, all(3.0 <= r <= 5.0 for r in ratios),
                    "error ratios " + ", ".join(f"{r:.3f}" for r in ratios))
    assert ok


# ---------------------------------------------------------------- criterion 4


def _random_spd(rng, n):
    a = rng.normal(size=(n, n))
    return a @ a.T + 0.5 * np.eye(n)


def test_c4_bfgs_secant_and_symmetry(acceptance):
    rng = np.random.default_rng(4)
    worst_secant = worst_sym = 0.0
    accepted = skipped = 0
    skip_ok = True
    for trial in range(1000):
        n = int(rng.integers(2, 6))
        A = _random_spd(rng, n)
        x = rng.normal(size=n)
        state = BfgsState.initial(x, A @ x)
        for _ in range(3):
            x_new = x + rng.normal(size=n)
            # every fourth pair is made to violate the curvature condition
            g_new = A @ x_new if rng.random() > 0.25 else state.prev_gradient - (A @ (x_new - x))
            new = bfgs_update(state, x_new, g_new)
            H = new.hessian_approx
            if new.updated:
                accepted += 1
                s, y = x_new - x, g_new - state.prev_gradient
                worst_secant = max(worst_secant, np.abs(H @ s - y).max() / max(1.0, np.abs(y).max()))
                worst_sym = max(worst_sym, np.abs(H - H.T).max())
            else:
                skipped += 1
                skip_ok &= np.array_equal(H, state.hessian_approx)
            state, x = new, x_new
    ok = acceptance(4, worst_secant <= 1e-12 and worst_sym <= 1e-12 and skip_ok and skipped > 0,
                    f"{accepted} updates: max secant residual {worst_secant:.1e}, "
                    f"asymmetry {worst_sym:.1e}; {skipped} skips unchanged={skip_ok}")
    assert ok


def test_c4_mixed_hessian_positive_definite(acceptance):
    rng = np.random.default_rng(44)
    failures = 0
    for _ in range(1000):
        n_p, n_d = int(rng.integers(1, 4)), int(rng.integers(0, 4))
        n = n_p + n_d
        B = rng.normal(size=(n, n)) * 10 ** rng.uniform(-3, 3)
        B = 0.5 * (B + B.T)
        block = rng.normal(size=(n_p, n_p)) * 10 ** rng.uniform(-3, 3)
        block = 0.5 * (block + block.T)
        H = assemble_mixed_hessian(BfgsState(B, np.zeros(n), np.zeros(n)), block)
        try:
            np.linalg.cholesky(H)
            failures += not np.array_equal(H, H.T)
        except np.linalg.LinAlgError:
            failures += 1
    ok = acceptance(4, failures == 0, f"mixed Hessian SPD in {1000 - failures}/1000 random cases")
    assert ok


# ------------------------------------------------------ criteria 5, 6 and 8


@pytest.fixture(scope="module")
def benchmark_runs(tmp_path_factory):
    """The default benchmark through the CLI, twice, into separate directories."""
    outs = []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        code = cli.main(["run", "--out", str(out)])
        outs.append((code, out))
    return outs


def test_c5_benchmark_yields(benchmark_runs, acceptance):
    cfg = parse_config("")
    problem = cfg.build_problem()
    y0 = estimate_yield_mc(problem.model, problem.spec, problem.uspec, problem.initial.deterministic,
                           2500, RngStream(cfg.optimizer.seed, 17)).value
    code, out = benchmark_runs[0]
    summary = json.loads((out / "summary.json").read_text())
    finals = {k: s["verified_yield"] for k, s in summary["strategies"].items()}
    all_high = len(finals) == 4 and all(v is not None and v >= 0.95 for v in finals.values())
    ok = acceptance(5, code == 0 and 0.35 <= y0 <= 0.55 and all_high,
                    f"initial yield {y0:.4f}; verified final yields "
                    + ", ".join(f"{k}={v:.4f}" for k, v in sorted(finals.items())))
    assert ok


def test_c6_efficiency_ordering(benchmark_runs, acceptance):
    _, out = benchmark_runs[0]
    summary = json.loads((out / "summary.json").read_text())
    f = {k: s["full_model_evals"] for k, s in summary["strategies"].items()}
    ordered = f["v4"] < f["v3"] < f["v2"] < f["v1"]
    ok = acceptance(6, ordered and f["v4"] < 0.1 * f["v3"] and f["v2"] <= 0.8 * f["v1"],
                    "full-model evals " + ", ".join(f"{k}={f[k]}" for k in sorted(f))
                    + f"; v4/v3={f['v4'] / f['v3']:.3f}, v2/v1={f['v2'] / f['v1']:.3f}")
    assert ok


def test_c8_determinism(benchmark_runs, acceptance):
    (_, a), (_, b) = benchmark_runs
    same = {name: (a / name).read_bytes() == (b / name).read_bytes()
            for name in ("iterations.csv", "summary.json", "convergence.csv")}
    ok = acceptance(8, all(same.values()),
                    "byte-identical: " + ", ".join(f"{k}={v}" for k, v in same.items()))
    assert ok


# ---------------------------------------------------------------- criterion 7


def test_c7_hybrid_agrees_with_classic(acceptance):
    problem = parse_config("").build_problem()
    d = problem.initial.deterministic
    offsets = draw_offsets(problem.uspec, 2500, RngStream(7, 7))
    classic = MonteCarloEstimator(problem.model, problem.spec).classify_offsets(
        problem.uspec.mean, d, offsets)
    hybrid = HybridEstimator(problem.model, problem.spec, gamma=3.0).classify_offsets(
        problem.uspec.mean, d, offsets)
    agree = float(np.mean(hybrid.samples.indicator == classic.samples.indicator))
    diag = hybrid.hybrid
    covered = bool(np.all(diag.true_evaluated[diag.critical]))
    ok = acceptance(7, agree >= 0.99 and covered,
                    f"agreement {agree:.4f}; {int(diag.critical.sum())} critical samples all "
                    f"true-evaluated={covered}; full-model evals {hybrid.full_model_evals} "
                    f"of {classic.full_model_evals}")
    assert ok
