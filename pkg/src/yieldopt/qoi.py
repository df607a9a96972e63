"""Quantity-of-interest models and the performance feature check.

A model maps an uncertain sample ``p``, the deterministic parameters ``d``
and a range point ``r`` to a scalar ``Q_r(p, d)``.  A design is safe for a
sample when ``Q_r(p, d) <= c`` at every point of the range grid.

Every model counts its evaluations; one (sample, range point) pair is one
evaluation, whether it was requested alone or inside a batch.
"""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, DomainError

__all__ = [
    "RangeGrid",
    "PerformanceSpec",
    "DesignPoint",
    "QoiModel",
    "ConstantModel",
    "HalfSpaceModel",
    "HalfSpaceOracle",
    "WaveguideConfig",
    "WaveguideModel",
    "waveguide_model",
    "halfspace_oracle",
    "is_in_safe_domain",
    "classify",
]

SPEED_OF_LIGHT = 299_792_458.0
MU_0 = 4e-7 * np.pi


@dataclass(frozen=True, eq=False)
class RangeGrid:
    """Strictly increasing discretization of the range parameter."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_1d(np.asarray(self.points, dtype=float)).copy()
        if pts.ndim != 1 or pts.size < 1:
            raise ConfigurationError("range grid needs at least one point")
        if np.any(np.diff(pts) <= 0):
            raise ConfigurationError("range grid must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def angular_ghz(cls, start_ghz: float, stop_ghz: float, num: int) -> "RangeGrid":
        """Equidistant angular frequencies ``2*pi*f`` for ``f`` in GHz, in rad/s."""
        return cls(2.0 * np.pi * np.linspace(start_ghz, stop_ghz, int(num)) * 1e9)

    def __len__(self) -> int:
        return self.points.size


@dataclass(frozen=True)
class PerformanceSpec:
    """Requirement ``Q_r <= threshold`` for every ``r`` of ``grid``."""

    threshold: float
    grid: RangeGrid

    direction = "<="


@dataclass(frozen=True, eq=False)
class DesignPoint:
    """Optimization variables: uncertain mean and deterministic parameters."""

    uncertain_mean: np.ndarray
    deterministic: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "uncertain_mean", np.atleast_1d(np.asarray(self.uncertain_mean, float)).copy())
        object.__setattr__(self, "deterministic", np.atleast_1d(np.asarray(self.deterministic, float)).copy())

    @property
    def n_uncertain(self) -> int:
        return self.uncertain_mean.size

    @property
    def n_deterministic(self) -> int:
        return self.deterministic.size

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.uncertain_mean, self.deterministic])

    @classmethod
    def from_vector(cls, x, n_uncertain: int) -> "DesignPoint":
        x = np.asarray(x, dtype=float)
        return cls(x[:n_uncertain], x[n_uncertain:])

    def __repr__(self):
        return f"DesignPoint(uncertain_mean={self.uncertain_mean.tolist()}, deterministic={self.deterministic.tolist()})"


class QoiModel(ABC):
    """Scalar quantity of interest with an evaluation counter.

    Subclasses implement :meth:`_evaluate`, a vectorized map from samples
    ``(n, n_p)``, one deterministic vector and range points ``(m,)`` to an
    ``(n, m)`` array.  The counter is shared between threads and is updated
    under a lock.
    """

    n_uncertain: int
    n_deterministic: int

    def __init__(self):
        self._lock = threading.Lock()
        self._evaluations = 0

    @property
    def evaluations(self) -> int:
        return self._evaluations

    def reset_counter(self) -> None:
        with self._lock:
            self._evaluations = 0

    def _count(self, k: int) -> None:
        with self._lock:
            self._evaluations += k

    @abstractmethod
    def _evaluate(self, p: np.ndarray, d: np.ndarray, r: np.ndarray) -> np.ndarray: ...

    def evaluate_batch(self, p, d, r) -> np.ndarray:
        """Evaluate ``Q_r(p, d)`` for every row of ``p`` and every ``r``.

        Returns an array of shape ``(len(p), len(r))``.
        """
        p = np.atleast_2d(np.asarray(p, dtype=float))
        d = np.atleast_1d(np.asarray(d, dtype=float))
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if p.shape[1] != self.n_uncertain:
            raise ConfigurationError(f"expected {self.n_uncertain} uncertain parameters, got {p.shape[1]}")
        if d.size != self.n_deterministic:
            raise ConfigurationError(f"expected {self.n_deterministic} deterministic parameters, got {d.size}")
        out = self._evaluate(p, d, r)
        self._count(p.shape[0] * r.size)
        return out

    def evaluate(self, p, d, r: float) -> float:
        return float(self.evaluate_batch(np.atleast_2d(p), d, [r])[0, 0])


class ConstantModel(QoiModel):
    """``Q == value`` everywhere."""

    def __init__(self, value: float, n_uncertain: int = 1, n_deterministic: int = 0):
        super().__init__()
        self.value = float(value)
        self.n_uncertain = n_uncertain
        self.n_deterministic = n_deterministic

    def _evaluate(self, p, d, r):
        return np.full((p.shape[0], r.size), self.value)


class HalfSpaceModel(QoiModel):
    """Linear model ``Q(p, d) = normal @ p - shift @ d``, independent of ``r``."""

    def __init__(self, normal, shift=None):
        super().__init__()
        self.normal = np.atleast_1d(np.asarray(normal, dtype=float))
        self.shift = np.zeros(0) if shift is None else np.atleast_1d(np.asarray(shift, dtype=float))
        self.n_uncertain = self.normal.size
        self.n_deterministic = self.shift.size

    def _evaluate(self, p, d, r):
        q = p @ self.normal - (d @ self.shift if d.size else 0.0)
        return np.repeat(q[:, None], r.size, axis=1)


@dataclass(frozen=True)
class HalfSpaceOracle:
    """Half-space problem with closed-form yield and derivatives.

    With ``s = sqrt(normal' Sigma normal)`` and
    ``z = (offset + shift @ d - normal @ mean) / s`` the untruncated yield
    is ``Phi(z)``.
    """

    model: HalfSpaceModel
    spec: PerformanceSpec

    def _z(self, mean, covariance, d):
        n = self.model.normal
        s = float(np.sqrt(n @ np.atleast_2d(covariance) @ n))
        d = np.atleast_1d(np.asarray(d, float)) if self.model.shift.size else np.zeros(0)
        z = (self.spec.threshold + (self.model.shift @ d if d.size else 0.0) - n @ np.atleast_1d(mean)) / s
        return float(z), s

    def yield_value(self, mean, covariance, d=()) -> float:
        z, _ = self._z(mean, covariance, d)
        return float(ndtr(z))

    def grad_mean(self, mean, covariance, d=()) -> np.ndarray:
        z, s = self._z(mean, covariance, d)
        return -_phi(z) / s * self.model.normal

    def hess_mean(self, mean, covariance, d=()) -> np.ndarray:
        z, s = self._z(mean, covariance, d)
        n = self.model.normal
        return -z * _phi(z) / s**2 * np.outer(n, n)

    def grad_det(self, mean, covariance, d=()) -> np.ndarray:
        z, s = self._z(mean, covariance, d)
        return _phi(z) / s * self.model.shift


def _phi(z: float) -> float:
    return float(np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi))


def halfspace_oracle(normal, offset: float, shift=None) -> HalfSpaceOracle:
    """Build the half-space verification problem ``normal @ p - shift @ d <= offset``."""
    normal = np.atleast_1d(np.asarray(normal, dtype=float))
    if not np.isclose(np.linalg.norm(normal), 1.0, rtol=0, atol=1e-12):
        raise ConfigurationError("half-space normal must be a unit vector")
    model = HalfSpaceModel(normal, shift)
    return HalfSpaceOracle(model, PerformanceSpec(float(offset), RangeGrid([0.0])))


@dataclass(frozen=True)
class WaveguideConfig:
    """Geometry and material constants of the benchmark waveguide.

    ``width_mm`` is the broad side of the rectangular guide, which sets the
    TE10 cutoff.  The inlay has ``eps_r = 1 + d1*chi_e`` and
    ``mu_r = 1 + d2*chi_m``.
    """

    width_mm: float = 30.0
    chi_e: float = 1.0
    chi_m: float = 1.9
    db_floor: float = -100.0

    def __post_init__(self):
        if self.width_mm <= 0:
            raise ConfigurationError("waveguide width must be positive")


class WaveguideModel(QoiModel):
    """``20*log10|S11|`` of a TE10 waveguide holding a dielectric inlay.

    Uncertain parameters are the inlay length ``p1`` and the length ``p2``
    of the vacuum offsets on both sides of it, in mm.  Deterministic
    parameters scale the inlay's electric and magnetic susceptibilities.
    The range parameter is the angular frequency in rad/s.

    The structure is solved with 2x2 wave-transfer matrices: interface
    matrices from the continuity of tangential E and H, and diagonal phase
    matrices for propagation through each section.
    """

    n_uncertain = 2
    n_deterministic = 2

    def __init__(self, config: WaveguideConfig = WaveguideConfig()):
        super().__init__()
        self.config = config
        self._kc = np.pi / (config.width_mm * 1e-3)

    def _section(self, omega, eps_r, mu_r):
        """Propagation constant and TE10 wave impedance, shape of ``omega``."""
        beta2 = mu_r * eps_r * (omega / SPEED_OF_LIGHT) ** 2 - self._kc**2
        if np.any(beta2 <= 0):
            raise DomainError("TE10 mode is evanescent (operating at or below cutoff)")
        beta = np.sqrt(beta2)
        return beta, omega * MU_0 * mu_r / beta

    def material(self, d) -> tuple[float, float]:
        """Relative permittivity and permeability of the inlay."""
        return 1.0 + d[0] * self.config.chi_e, 1.0 + d[1] * self.config.chi_m

    def _evaluate(self, p, d, r):
        if np.any(p < 0):
            raise DomainError("inlay and offset lengths must be nonnegative")
        eps_r, mu_r = self.material(d)
        if eps_r <= 0 or mu_r <= 0:
            raise DomainError(f"nonphysical inlay material eps_r={eps_r}, mu_r={mu_r}")
        beta0, z0 = self._section(r, 1.0, 1.0)
        beta1, z1 = self._section(r, eps_r, mu_r)
        inlay = p[:, :1] * 1e-3
        offset = p[:, 1:2] * 1e-3

        into = _interface(z0, z1)
        out_of = _interface(z1, z0)
        n = p.shape[0]
        t = _propagation(beta0[None, :] * offset)
        t = t @ np.broadcast_to(into, (n,) + into.shape)
        t = t @ _propagation(beta1[None, :] * inlay)
        t = t @ np.broadcast_to(out_of, (n,) + out_of.shape)
        t = t @ _propagation(beta0[None, :] * offset)
        s11 = t[..., 1, 0] / t[..., 0, 0]

        floor = 10.0 ** (self.config.db_floor / 20.0)
        return 20.0 * np.log10(np.maximum(np.abs(s11), floor))


def _interface(z_left, z_right):
    """Maps wave amplitudes right of an interface to those left of it."""
    ratio = z_left / z_right
    m = np.empty(np.shape(ratio) + (2, 2), dtype=complex)
    m[..., 0, 0] = m[..., 1, 1] = 0.5 * (1.0 + ratio)
    m[..., 0, 1] = m[..., 1, 0] = 0.5 * (1.0 - ratio)
    return m


def _propagation(phase):
    """Maps amplitudes at the right end of a section to its left end."""
    m = np.zeros(np.shape(phase) + (2, 2), dtype=complex)
    m[..., 0, 0] = np.exp(1j * phase)
    m[..., 1, 1] = np.exp(-1j * phase)
    return m


def waveguide_model(config: WaveguideConfig | None = None) -> WaveguideModel:
    return WaveguideModel(config or WaveguideConfig())


def classify(model: QoiModel, spec: PerformanceSpec, samples, d) -> tuple[np.ndarray, np.ndarray]:
    """Safe-domain indicator and margins ``Q_r - c`` for a batch of samples.

    Returns ``(indicator, margins)`` with shapes ``(n,)`` and ``(n, m)``.
    """
    q = model.evaluate_batch(samples, d, spec.grid.points)
    margins = q - spec.threshold
    return np.all(margins <= 0.0, axis=1), margins


def is_in_safe_domain(model: QoiModel, spec: PerformanceSpec, p, d) -> tuple[bool, np.ndarray]:
    """Whether one sample satisfies the requirement at every range point."""
    ok, margins = classify(model, spec, np.atleast_2d(p), d)
    return bool(ok[0]), margins[0]
