"""Harness configuration: a sectioned ``key = value`` text file.

Sections are ``[problem]``, ``[uncertain]``, ``[spec]``, ``[optimizer]`` and
``[output]``.  Every key is optional; missing ones take the benchmark
defaults listed in :data:`SCHEMA`.  Unknown sections or keys are rejected.

Value syntax::

    scalar      3.5, 100, true, waveguide
    vector      9, 5          (or [9, 5])
    matrix      0.81, 0; 0, 0.81   (rows separated by ';'); a plain vector
                is read as the diagonal
    grid        6.5:7.5:11 GHz     (start:stop:count, unit GHz / MHz / Hz or rad/s)
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .optimize import STRATEGIES, OptimizerConfig, Problem
from .qoi import (
    DesignPoint,
    PerformanceSpec,
    RangeGrid,
    WaveguideConfig,
    WaveguideModel,
    halfspace_oracle,
)
from .uq import UncertainSpec

__all__ = ["HarnessConfig", "validate_config", "parse_config", "parse_grid", "PROBLEMS", "SCHEMA"]

PROBLEMS = ("waveguide", "halfspace-oracle", "shifted-oracle")

# section -> key -> (kind, default); None means "depends on the problem"
SCHEMA = {
    "problem": {
        "name": ("choice", "waveguide"),
        "width_mm": ("float", 30.0),
        "chi_e": ("float", 1.0),
        "chi_m": ("float", 1.9),
        "db_floor": ("float", -100.0),
        "initial_deterministic": ("vector", None),
        "normal": ("vector", None),
        "offset": ("float", 1.0),
    },
    "uncertain": {
        "mean": ("vector", None),
        "covariance": ("matrix", None),
        "truncation_halfwidth": ("vector", None),
    },
    "spec": {
        "threshold": ("float", None),
        "grid": ("grid", "6.5:7.5:11 GHz"),
    },
    "optimizer": {
        "sigma_max": ("float", 0.01),
        "n_initial": ("int", 100),
        "n_max": ("int", 2500),
        "max_iterations": ("int", 50),
        "gradient_tolerance": ("float", 1e-3),
        "step_tolerance": ("float", 1e-6),
        "armijo_c1": ("float", 1e-4),
        "backtrack_factor": ("float", 0.5),
        "max_backtracks": ("int", 20),
        "angle_threshold": ("float", 1e-4),
        "max_step": ("float", 0.5),
        "fd_steps": ("vector", None),
        "gamma": ("float", 3.0),
        "initial_design_size": ("int", 50),
        "nm_max_evals": ("int", 200),
        "nm_diameter_tol": ("float", 1e-3),
        "seed": ("int", 0),
        "strategies": ("list", "v1, v2, v3, v4"),
    },
    "output": {
        "dir": ("str", "results"),
        "plot_data": ("bool", True),
    },
}

_PROBLEM_DEFAULTS = {
    "waveguide": {
        "initial_deterministic": [1.0, 1.0],
        "mean": [9.0, 5.0],
        "covariance": [0.81, 0.81],
        "truncation_halfwidth": [3.0],
        "threshold": -24.0,
        "normal": None,
        "fd_steps": [0.02, 0.02],
    },
    "halfspace-oracle": {
        "initial_deterministic": [],
        "mean": [0.0],
        "covariance": [1.0],
        "truncation_halfwidth": [8.0],
        "threshold": None,
        "normal": [1.0],
        "fd_steps": None,
    },
    "shifted-oracle": {
        "initial_deterministic": [0.0],
        "mean": [0.0],
        "covariance": [1.0],
        "truncation_halfwidth": [8.0],
        "threshold": None,
        "normal": [1.0],
        "fd_steps": [0.05],
    },
}

_UNITS = {"ghz": 1e9, "mhz": 1e6, "hz": 1.0}


def parse_grid(text: str) -> RangeGrid:
    """Parse ``start:stop:count [unit]`` into angular frequencies.

    With a unit of GHz, MHz or Hz the endpoints are ordinary frequencies and
    are converted to rad/s; with ``rad/s`` (or no unit) they are used as is.
    """
    m = re.fullmatch(r"\s*([^:\s]+)\s*:\s*([^:\s]+)\s*:\s*(\d+)\s*([A-Za-z/]*)\s*", text)
    if not m:
        raise ValueError(f"expected 'start:stop:count [unit]', got {text!r}")
    start, stop, count, unit = float(m[1]), float(m[2]), int(m[3]), m[4].lower()
    if count < 1:
        raise ValueError("grid needs at least one point")
    pts = np.linspace(start, stop, count)
    if unit in _UNITS:
        return RangeGrid(2.0 * np.pi * pts * _UNITS[unit])
    if unit in ("", "rad/s"):
        return RangeGrid(pts)
    raise ValueError(f"unknown grid unit {m[4]!r}")


def _vector(text: str) -> list[float]:
    text = text.strip().strip("[]")
    if not text:
        return []
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _matrix(text: str) -> np.ndarray:
    rows = [r for r in text.strip().strip("[]").split(";") if r.strip()]
    if len(rows) == 1:
        return np.diag(_vector(rows[0]))
    m = np.array([_vector(r) for r in rows], dtype=float)
    if m.ndim != 2:
        raise ValueError("matrix rows have different lengths")
    return m


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_CONVERTERS = {
    "float": float,
    "int": lambda t: int(t.strip()),
    "bool": _bool,
    "str": str.strip,
    "choice": str.strip,
    "vector": _vector,
    "matrix": _matrix,
    "grid": parse_grid,
    "list": lambda t: [s.strip().lower() for s in t.split(",") if s.strip()],
}


@dataclass
class HarnessConfig:
    """Fully resolved harness configuration."""

    problem_name: str
    waveguide: WaveguideConfig
    normal: Optional[np.ndarray]
    offset: float
    uspec: UncertainSpec
    initial: DesignPoint
    spec: PerformanceSpec
    optimizer: OptimizerConfig
    strategies: list
    out_dir: Path
    plot_data: bool
    source: Optional[Path] = None
    raw: dict = field(default_factory=dict, repr=False)

    def build_problem(self) -> Problem:
        if self.problem_name == "waveguide":
            model = WaveguideModel(self.waveguide)
            return Problem(model, self.spec, self.uspec, self.initial, "waveguide")
        shift = np.ones(1) if self.problem_name == "shifted-oracle" else None
        oracle = halfspace_oracle(self.normal, self.spec.threshold, shift)
        return Problem(oracle.model, oracle.spec, self.uspec, self.initial, self.problem_name)

    def summary_table(self) -> list[tuple[str, str]]:
        """Resolved parameters as (name, value) rows, for display."""
        o = self.optimizer
        g = self.spec.grid.points
        rows = [
            ("problem", self.problem_name),
            ("uncertain.mean", _fmt(self.uspec.mean)),
            ("uncertain.covariance", _fmt(self.uspec.covariance)),
            ("uncertain.truncation_halfwidth", _fmt(self.uspec.truncation_halfwidth)),
            ("problem.initial_deterministic", _fmt(self.initial.deterministic)),
            ("spec.threshold", f"{self.spec.threshold:g}"),
            ("spec.grid", f"{g.size} points, {g[0]:.6g} .. {g[-1]:.6g} rad/s"),
        ]
        if self.problem_name == "waveguide":
            w = self.waveguide
            rows += [("problem.width_mm", f"{w.width_mm:g}"), ("problem.chi_e", f"{w.chi_e:g}"),
                     ("problem.chi_m", f"{w.chi_m:g}"), ("problem.db_floor", f"{w.db_floor:g}")]
        else:
            rows += [("problem.normal", _fmt(self.normal)), ("problem.offset", f"{self.offset:g}")]
        for f in fields(OptimizerConfig):
            if f.name == "hybrid":
                continue
            rows.append((f"optimizer.{f.name}", _fmt(getattr(o, f.name))))
        rows += [
            ("derived.non_adaptive_sample_size", str(o.fixed_sample_size)),
            ("strategies", ", ".join(self.strategies)),
            ("output.dir", str(self.out_dir)),
            ("output.plot_data", str(self.plot_data).lower()),
        ]
        return rows


def _fmt(v) -> str:
    if v is None:
        return "default"
    if isinstance(v, np.ndarray):
        return np.array2string(v, separator=", ", precision=6).replace("\n", "")
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(f"{x:g}" for x in v) + "]"
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def _line_of(text: str, section: str, key: Optional[str]) -> Optional[int]:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        hdr = re.fullmatch(r"\[\s*([^\]]+?)\s*\]", s)
        if hdr:
            current = hdr[1].lower()
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.I):
            return i
    return None


def _error(text, section, key, message) -> ConfigurationError:
    where = f"{section}.{key}" if key else f"[{section}]"
    line = _line_of(text, section, key) if text is not None else None
    loc = f" (line {line})" if line else ""
    return ConfigurationError(f"{where}{loc}: {message}")


def parse_config(text: str = "", source: Optional[Path] = None) -> HarnessConfig:
    """Parse and validate configuration text; see the module docstring."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=str(source or "<config>"))
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None

    values: dict[str, dict] = {s: {} for s in SCHEMA}
    for section in cp.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise _error(text, sec, None, f"unknown section; expected one of {', '.join(SCHEMA)}")
        for key, raw in cp.items(section):
            if key not in SCHEMA[sec]:
                raise _error(text, sec, key, "unknown key")
            kind, _ = SCHEMA[sec][key]
            try:
                values[sec][key] = _CONVERTERS[kind](raw)
            except ValueError as exc:
                raise _error(text, sec, key, f"expected {kind}: {exc}") from None

    def get(sec, key, fallback=None):
        if key in values[sec]:
            return values[sec][key]
        default = SCHEMA[sec][key][1]
        if default is None:
            return fallback
        return _CONVERTERS[SCHEMA[sec][key][0]](default) if isinstance(default, str) else default

    name = get("problem", "name")
    if name not in PROBLEMS:
        raise _error(text, "problem", "name", f"expected one of {', '.join(PROBLEMS)}, got {name!r}")
    pdef = _PROBLEM_DEFAULTS[name]

    def checked(sec, key, build):
        try:
            return build()
        except (ConfigurationError, ValueError) as exc:
            raise _error(text, sec, key, str(exc)) from None

    mean = get("uncertain", "mean", pdef["mean"])
    cov = get("uncertain", "covariance", None)
    if cov is None:
        cov = np.diag(pdef["covariance"])
    half = get("uncertain", "truncation_halfwidth", pdef["truncation_halfwidth"])
    if len(half) not in (1, len(mean)):
        raise _error(text, "uncertain", "truncation_halfwidth", f"needs 1 or {len(mean)} values")
    uspec = checked("uncertain", "covariance",
                    lambda: UncertainSpec(mean, cov, half[0] if len(half) == 1 else half))

    waveguide = checked("problem", "width_mm", lambda: WaveguideConfig(
        get("problem", "width_mm"), get("problem", "chi_e"), get("problem", "chi_m"),
        get("problem", "db_floor")))

    offset = get("problem", "offset")
    normal = None
    if name != "waveguide":
        normal = np.asarray(get("problem", "normal", pdef["normal"]), dtype=float)
        if normal.size != uspec.dim:
            raise _error(text, "problem", "normal", f"needs {uspec.dim} entries")
        if not np.isclose(np.linalg.norm(normal), 1.0, atol=1e-12):
            raise _error(text, "problem", "normal", "must be a unit vector")
    elif uspec.dim != 2:
        raise _error(text, "uncertain", "mean", "the waveguide has exactly 2 uncertain parameters")

    threshold = get("spec", "threshold", pdef["threshold"])
    if threshold is None:
        threshold = offset
    grid = get("spec", "grid") if name == "waveguide" else RangeGrid([0.0])
    spec = PerformanceSpec(float(threshold), grid)

    det = get("problem", "initial_deterministic", pdef["initial_deterministic"])
    n_det = {"waveguide": 2, "halfspace-oracle": 0, "shifted-oracle": 1}[name]
    if len(det) != n_det:
        raise _error(text, "problem", "initial_deterministic", f"needs {n_det} entries for {name}")
    initial = DesignPoint(uspec.mean, det)

    fd = get("optimizer", "fd_steps", pdef["fd_steps"])
    if fd is not None and len(fd) not in (1, n_det):
        raise _error(text, "optimizer", "fd_steps", f"needs 1 or {n_det} entries")
    if fd is not None and len(fd) == 1:
        fd = fd * n_det
    opt_kwargs = {k: get("optimizer", k) for k in SCHEMA["optimizer"] if k not in ("fd_steps", "strategies")}
    opt_kwargs["fd_steps"] = tuple(fd) if fd is not None else None
    try:
        optimizer = OptimizerConfig(**opt_kwargs)
    except ConfigurationError as exc:
        key = next((k for k in opt_kwargs if str(exc).startswith(k)), None)
        raise _error(text, "optimizer", key or "n_initial", str(exc)) from None

    strategies = get("optimizer", "strategies")
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad or not strategies:
        raise _error(text, "optimizer", "strategies",
                     f"unknown strategy {', '.join(bad) or '(none)'}; choose from {', '.join(STRATEGIES)}")

    return HarnessConfig(
        problem_name=name,
        waveguide=waveguide,
        normal=normal,
        offset=float(offset),
        uspec=uspec,
        initial=initial,
        spec=spec,
        optimizer=optimizer,
        strategies=strategies,
        out_dir=Path(get("output", "dir")),
        plot_data=get("output", "plot_data"),
        source=source,
        raw=values,
    )


def validate_config(path) -> HarnessConfig:
    """Read and validate a config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)
