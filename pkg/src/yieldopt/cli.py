"""Command line entry point: ``yieldopt run``.

Exit status is 0 when every requested strategy finished, 1 when at least one
failed (the others are still written) and 2 for an invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import HarnessConfig, parse_config, validate_config
from .errors import ConfigurationError
from .optimize import STRATEGIES, RunRecord, compare_strategies

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

COUNTING_NOTE = (
    "yield_evals counts every classification of a full sample set, including "
    "finite-difference perturbations and line-search trials; qoi_evals counts "
    "(sample, range point) classifications by model or surrogate; "
    "full_model_evals counts only those computed with the true model."
)


def _num(x):
    """JSON-safe float: NaN and infinities become null."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _strategy_summary(key: str, rec: RunRecord) -> dict:
    out = {
        "name": STRATEGIES[key],
        "status": rec.status,
        "error": rec.error,
        "yield_evals": rec.yield_evals,
        "qoi_evals": rec.qoi_evals,
        "full_model_evals": rec.full_model_evals,
        "final_yield": _num(rec.final_yield),
        "final_sigma": _num(rec.final_sigma),
        "final_n_samples": rec.final_n_samples,
        "verified_yield": _num(rec.verified_yield),
        "iterations": sum(e.kind == "iterate" for e in rec.entries),
    }
    if rec.optimum is not None:
        out["optimum"] = {
            "uncertain_mean": [float(v) for v in rec.optimum.uncertain_mean],
            "deterministic": [float(v) for v in rec.optimum.deterministic],
        }
    return out


def _comparison(records: dict) -> dict:
    ok = {k: r for k, r in records.items() if not r.failed}
    ratios = {}
    for a, b in (("v4", "v3"), ("v3", "v2"), ("v2", "v1")):
        if a in ok and b in ok and ok[b].full_model_evals:
            ratios[f"{a}/{b}"] = ok[a].full_model_evals / ok[b].full_model_evals
    ordered = sorted(ok, key=lambda k: ok[k].full_model_evals)
    return {"full_model_evals_ratio": ratios, "cheapest_first": ordered}


def build_summary(cfg: HarnessConfig, records: dict) -> dict:
    return {
        "version": __version__,
        "seed": cfg.optimizer.seed,
        "problem": cfg.problem_name,
        # output location is left out so results do not depend on where they were written
        "parameters": {k: v for k, v in cfg.summary_table() if k != "output.dir"},
        "counting": COUNTING_NOTE,
        "strategies": {k: _strategy_summary(k, r) for k, r in records.items()},
        "comparison": _comparison(records),
    }


def _iteration_rows(records: dict):
    for key, rec in records.items():
        for e in rec.entries:
            p = e.point
            yield {
                "strategy": key,
                "iteration": e.iteration,
                "kind": e.kind,
                **{f"p{i + 1}": repr(float(v)) for i, v in enumerate(p.uncertain_mean)},
                **{f"d{i + 1}": repr(float(v)) for i, v in enumerate(p.deterministic)},
                "yield": repr(float(e.yield_value)),
                "sigma": repr(float(e.sigma)),
                "n_samples": e.n_samples,
                "grad_norm": repr(float(e.grad_norm)),
                "step_norm": repr(float(e.step_norm)),
                "steepest": int(e.steepest),
                "backtracks": e.backtracks,
                "cum_yield_evals": e.cum_yield_evals,
                "cum_qoi_evals": e.cum_qoi_evals,
                "cum_full_model_evals": e.cum_full_model_evals,
            }


def _write_csv(path: Path, rows: list, header: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n", restval="")
        w.writeheader()
        w.writerows(rows)


def write_outputs(out_dir: Path, cfg: HarnessConfig, records: dict) -> list[Path]:
    """Write iterations.csv, summary.json and (optionally) convergence.csv."""
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = list(_iteration_rows(records))
    header = ["strategy", "iteration", "kind"]
    header += [f"p{i + 1}" for i in range(cfg.uspec.dim)]
    header += [f"d{i + 1}" for i in range(cfg.initial.n_deterministic)]
    header += ["yield", "sigma", "n_samples", "grad_norm", "step_norm", "steepest", "backtracks",
               "cum_yield_evals", "cum_qoi_evals", "cum_full_model_evals"]
    written = [out_dir / "iterations.csv", out_dir / "summary.json"]
    _write_csv(written[0], rows, header)
    written[1].write_text(json.dumps(build_summary(cfg, records), indent=2, sort_keys=True) + "\n")
    if cfg.plot_data:
        conv = [{"strategy": r["strategy"], "cum_full_model_evals": r["cum_full_model_evals"],
                 "yield": r["yield"], "kind": r["kind"]} for r in rows]
        written.append(out_dir / "convergence.csv")
        _write_csv(written[2], conv, ["strategy", "cum_full_model_evals", "yield", "kind"])
    return written


def _print_table(rows, stream) -> None:
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"  {k:<{width}}  {v}", file=stream)


def _print_results(records: dict, stream) -> None:
    print(f"{'strategy':<10} {'status':<11} {'yield':>7} {'verified':>9} {'yield evals':>12} "
          f"{'full model evals':>17}", file=stream)
    for key, r in records.items():
        ver = "-" if r.verified_yield is None else f"{r.verified_yield:.4f}"
        fy = "-" if r.failed else f"{r.final_yield:.4f}"
        print(f"{STRATEGIES[key]:<10} {r.status:<11} {fy:>7} {ver:>9} {r.yield_evals:>12} "
              f"{r.full_model_evals:>17}", file=stream)
        if r.error:
            print(f"    error: {r.error}", file=stream)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="yieldopt", description="Yield optimization benchmark harness.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the strategy comparison")
    run.add_argument("--config", type=Path, help="config file; the built-in benchmark when omitted")
    run.add_argument("--strategies", help="comma-separated subset of " + ", ".join(STRATEGIES))
    run.add_argument("--seed", type=int, help="master seed (overrides the config)")
    run.add_argument("--out", type=Path, help="output directory (overrides the config)")
    run.add_argument("--dry-run", action="store_true",
                     help="print the resolved parameters and exit without optimizing")
    run.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = validate_config(args.config) if args.config else parse_config("")
        if args.seed is not None:
            cfg.optimizer = replace(cfg.optimizer, seed=args.seed)
        if args.strategies:
            keys = [s.strip().lower() for s in args.strategies.split(",") if s.strip()]
            bad = [s for s in keys if s not in STRATEGIES]
            if bad or not keys:
                raise ConfigurationError(f"--strategies: unknown strategy {', '.join(bad) or '(none)'}; "
                                         f"choose from {', '.join(STRATEGIES)}")
            cfg.strategies = keys
        if args.out is not None:
            cfg.out_dir = args.out
        problem = cfg.build_problem()
    except ConfigurationError as exc:
        print(f"yieldopt: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.dry_run:
        print("resolved parameters:")
        _print_table(cfg.summary_table(), sys.stdout)
        return EXIT_OK

    records = compare_strategies(problem, cfg.optimizer, cfg.strategies)
    written = write_outputs(cfg.out_dir, cfg, records)
    _print_results(records, sys.stdout)
    for path in written:
        print(f"wrote {path}")
    return EXIT_PARTIAL if any(r.failed for r in records.values()) else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
