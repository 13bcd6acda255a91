"""Bath spectral densities and their quadrature on a frequency grid.

Each site couples to an independent harmonic bath described by a combined
spectral density

    J_com(w) = J_bg(w) + J_vib(w)

where ``J_bg`` is a broad log-normal background and ``J_vib`` an underdamped
vibrational mode damped by an Ohmic environment.  All rates and frequencies
are in ps^-1 (hbar = 1); the shape parameters S, sigma, X and xi are
dimensionless.

Integral functionals (reorganization energy, displacement moments, bath
correlation kernels) are evaluated on a shared logarithmic frequency grid
with trapezoid weights.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpectralParams",
    "FrequencyGrid",
    "exponential_integral",
    "j_background",
    "j_vibrational",
    "j_combined",
    "reorganization_energy",
]

_EULER_GAMMA = 0.5772156649015328606

# Switch point between the power series and the asymptotic expansion of Ei.
_EI_ASYMPTOTIC_CUTOFF = 42.0


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class SpectralParams:
    """Per-site parameters of the combined spectral density.

    Attributes
    ----------
    S : float
        Peak amplitude factor of the log-normal background (dimensionless).
    sigma : float
        Standard deviation of the log-normal background (dimensionless).
    omega_c : float
        Background cut-off frequency in ps^-1.
    X : float
        Huang-Rhys factor of the vibrational mode (dimensionless).
    xi : float
        Damping factor of the vibrational mode (dimensionless).
    lam : float
        Cut-off frequency of the Ohmic environment damping the mode, ps^-1.
    zeta : float
        Center frequency of the vibrational mode, ps^-1.
    """

    S: float
    sigma: float
    omega_c: float
    X: float
    xi: float
    lam: float
    zeta: float

    def __post_init__(self) -> None:
        for name in ("S", "sigma", "omega_c", "X", "xi", "lam", "zeta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValueError(f"spectral parameter {name} must be finite and >= 0, got {value}")
        # X = 0 (no vibrational mode) and S = 0 (no background) are allowed;
        # sigma appears in a denominator and must stay away from zero.
        if self.sigma < 1e-6:
            raise ValueError(f"spectral parameter sigma too small: {self.sigma}")
        for name in ("omega_c", "lam", "zeta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"spectral parameter {name} must be > 0")


def exponential_integral(x):
    """Exponential integral Ei(x) for x > 0.

    Power series for moderate arguments, asymptotic expansion for large
    ones; relative error below 1e-10 over the range used here.  Accepts
    scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        raise DomainError("exponential_integral requires x > 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    small = x < _EI_ASYMPTOTIC_CUTOFF
    if np.any(small):
        out[small] = _ei_series(x[small])
    if np.any(~small):
        out[~small] = _ei_asymptotic(x[~small])
    return out[0] if scalar else out


def _ei_series(x: np.ndarray) -> np.ndarray:
    # Ei(x) = gamma + ln x + sum_{k>=1} x^k / (k k!); all terms positive.
    acc = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, 400):
        term = term * x / k
        contrib = term / k
        acc += contrib
        if np.all(contrib <= 1e-17 * (1.0 + np.abs(acc))):
            break
    return _EULER_GAMMA + np.log(x) + acc


def _ei_asymptotic(x: np.ndarray) -> np.ndarray:
    # Ei(x) ~ e^x/x (1 + 1!/x + 2!/x^2 + ...); truncate at the smallest term.
    acc = np.ones_like(x)
    term = np.ones_like(x)
    active = np.ones(x.shape, dtype=bool)
    for k in range(1, 80):
        new_term = term * k / x
        # stop where terms start growing (divergent tail)
        active &= np.abs(new_term) < np.abs(term)
        if not np.any(active):
            break
        acc[active] += new_term[active]
        term = new_term
    return np.exp(x) / x * acc


def j_background(omega, p: SpectralParams):
    """Log-normal background component J_bg(w), ps^-1.  Requires w > 0."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0.0):
        raise DomainError("j_background requires omega > 0")
    log_ratio = np.log(omega / p.omega_c)
    return math.sqrt(math.pi / 2.0) * (p.S * omega / p.sigma) * np.exp(-0.5 * (log_ratio / p.sigma) ** 2)


def j_vibrational(omega, p: SpectralParams):
    """Underdamped vibrational component J_vib(w), ps^-1.  Requires w > 0."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0.0):
        raise DomainError("j_vibrational requires omega > 0")
    if p.X == 0.0:
        return np.zeros_like(omega)
    j_ohm = p.xi * omega * np.exp(-omega / p.lam)
    shift = p.zeta - p.xi * p.lam / math.pi + j_ohm * exponential_integral(omega / p.lam) / math.pi
    return p.X * omega**2 * j_ohm / ((omega - shift) ** 2 + j_ohm**2)


def j_combined(omega, p: SpectralParams):
    """J_com = J_bg + J_vib, ps^-1."""
    return j_background(omega, p) + j_vibrational(omega, p)


@dataclass(frozen=True)
class FrequencyGrid:
    """Logarithmic quadrature grid with trapezoid weights.

    ``nodes`` are strictly increasing positive frequencies; ``weights`` are
    trapezoid weights such that ``weights @ f(nodes)`` approximates the
    integral of f over the grid span.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] <= 0.0 or np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be positive and strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.weights.shape != nodes.shape:
            raise ValueError("weights must match nodes")

    @classmethod
    def logarithmic(cls, omega_min: float, omega_max: float, n_nodes: int) -> "FrequencyGrid":
        nodes = np.geomspace(omega_min, omega_max, n_nodes)
        return cls(nodes, _trapezoid_weights(nodes))

    @classmethod
    def default_for(cls, params: "SpectralParams | list[SpectralParams]", n_nodes: int = 8000) -> "FrequencyGrid":
        """Default grid spanning [1e-3, 50 * max(omega_c, zeta, lam)] ps^-1."""
        if isinstance(params, SpectralParams):
            params = [params]
        top = max(max(p.omega_c, p.zeta, p.lam) for p in params)
        return cls.logarithmic(1e-3, 50.0 * top, n_nodes)

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        """Quadrature along the last axis."""
        return np.asarray(values) @ self.weights

    def coarsened(self, factor: int = 2) -> "FrequencyGrid":
        nodes = self.nodes[::factor]
        return FrequencyGrid(nodes, _trapezoid_weights(nodes))


def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    w = np.zeros_like(nodes)
    d = np.diff(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def reorganization_energy(p: SpectralParams, grid: FrequencyGrid, check: bool = True) -> float:
    """Site reorganization energy: integral of J_com(w)/w, ps^-1.

    With ``check`` enabled, the quadrature is repeated on a node-halved grid
    and a warning is emitted if the two disagree by more than 0.1%.
    """
    value = float(grid.integrate(j_combined(grid.nodes, p) / grid.nodes))
    if check:
        coarse = grid.coarsened(2)
        rough = float(coarse.integrate(j_combined(coarse.nodes, p) / coarse.nodes))
        if abs(rough - value) > 1e-3 * abs(value):
            warnings.warn(
                f"frequency grid may be too coarse for the reorganization energy "
                f"(fine={value:.6g}, halved={rough:.6g})",
                RuntimeWarning,
                stacklevel=2,
            )
    return value
