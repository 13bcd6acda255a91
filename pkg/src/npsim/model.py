"""Site network, simulation configuration and config-file loading.

All energies and rates are in ps^-1 (hbar = 1), times in ps.  The bundled
default configuration is a three-site network with base coupling v = 10
ps^-1; ``chain`` geometry leaves sites 1 and 3 uncoupled while ``ring``
closes the loop with the same coupling v.

Config files are flat ``key = value`` text (see ``data/default.cfg`` and the
README).  Per-site values are comma-separated lists; ``#`` starts a comment.
"""
from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .noise import NoiseProcess
from .spectral import SpectralParams

__all__ = [
    "ConfigError",
    "SiteNetwork",
    "SimConfig",
    "MODES",
    "build_system_hamiltonian",
    "load_config",
    "default_config",
]

MODES = ("rtn-only", "bath-only", "bath-rtn")

DEFAULT_SEED = 20260810


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class SiteNetwork:
    """Bare site energies, electronic couplings and the trapping site.

    ``couplings`` must be symmetric with zero diagonal.  ``trap_site`` is a
    0-based index or None; ``trap_rate`` is the sink rate kappa in ps^-1.
    """

    energies: np.ndarray
    couplings: np.ndarray
    geometry: str = "chain"
    trap_site: int | None = None
    trap_rate: float = 0.0

    def __post_init__(self) -> None:
        energies = np.atleast_1d(np.asarray(self.energies, dtype=float))
        couplings = np.asarray(self.couplings, dtype=float)
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "couplings", couplings)
        n = energies.size
        if n < 2:
            raise ConfigError("n_sites: need at least two sites")
        if couplings.shape != (n, n):
            raise ConfigError(f"couplings: expected shape {(n, n)}, got {couplings.shape}")
        if not np.array_equal(couplings, couplings.T):
            raise ConfigError("couplings: matrix must be symmetric")
        if np.any(np.diag(couplings) != 0.0):
            raise ConfigError("couplings: diagonal must be zero")
        if self.geometry not in ("chain", "ring"):
            raise ConfigError(f"geometry: unknown value {self.geometry!r}")
        if n == 3:
            v12 = couplings[0, 1]
            v13 = couplings[0, 2]
            if self.geometry == "chain" and v13 != 0.0:
                raise ConfigError("geometry: chain requires zero coupling between sites 1 and 3")
            if self.geometry == "ring" and v13 != v12:
                raise ConfigError("geometry: ring requires the 1-3 coupling to equal the base coupling")
        if self.trap_rate < 0.0:
            raise ConfigError("trap_rate: must be >= 0")
        if self.trap_rate > 0.0 and self.trap_site is None:
            raise ConfigError("trap_rate: positive rate requires a trap_site")
        if self.trap_site is not None and not (0 <= self.trap_site < n):
            raise ConfigError(f"trap_site: index {self.trap_site} out of range for {n} sites")

    @property
    def n_sites(self) -> int:
        return self.energies.size

    @classmethod
    def three_site(cls, v: float = 10.0, energies=(20.0, 10.0, 0.0), geometry: str = "chain",
                   trap_site: int | None = 2, trap_rate: float = 0.5) -> "SiteNetwork":
        couplings = np.array([[0.0, v, 0.0], [v, 0.0, v], [0.0, v, 0.0]])
        if geometry == "ring":
            couplings[0, 2] = couplings[2, 0] = v
        return cls(np.asarray(energies, float), couplings, geometry, trap_site, trap_rate)


def build_system_hamiltonian(network: SiteNetwork, rtn_values=None) -> np.ndarray:
    """Hermitian system Hamiltonian with per-site diagonal offsets, ps^-1."""
    n = network.n_sites
    if rtn_values is None:
        rtn_values = np.zeros(n)
    rtn_values = np.asarray(rtn_values, dtype=float)
    if rtn_values.shape != (n,):
        raise ConfigError(f"rtn_values: expected {n} offsets, got shape {rtn_values.shape}")
    h = network.couplings.astype(complex)
    h[np.diag_indices(n)] = network.energies + rtn_values
    return h


@dataclass(frozen=True)
class SimConfig:
    """Complete, validated simulation setup (immutable after load)."""

    network: SiteNetwork
    spectra: tuple[SpectralParams, ...]
    kT: float
    noise: NoiseProcess
    initial_site: int
    t_max: float
    dt: float
    n_realizations: int
    rng_seed: int
    mode: str = "bath-rtn"

    def __post_init__(self) -> None:
        n = self.network.n_sites
        if len(self.spectra) != n:
            raise ConfigError(f"spectra: expected {n} per-site parameter sets, got {len(self.spectra)}")
        if self.kT <= 0.0:
            raise ConfigError("kT: must be > 0")
        if len(self.noise.pattern) != n:
            raise ConfigError(f"noise_pattern: expected {n} entries, got {len(self.noise.pattern)}")
        if not (0 <= self.initial_site < n):
            raise ConfigError(f"initial_site: index {self.initial_site} out of range")
        if self.t_max <= 0.0:
            raise ConfigError("t_max: must be > 0")
        if self.dt <= 0.0:
            raise ConfigError("dt: must be > 0")
        scale = max(float(np.max(np.abs(self.network.energies))),
                    float(np.max(np.abs(self.network.couplings))),
                    self.noise.amplitude)
        if scale > 0.0 and self.dt >= 1.0 / scale:
            raise ConfigError(f"dt: step {self.dt} too large for energy scale {scale:.3g} "
                              f"(need dt < {1.0 / scale:.3g})")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations: must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode: unknown value {self.mode!r} (choose from {MODES})")

    @property
    def beta(self) -> float:
        return 1.0 / self.kT

    def with_(self, **kwargs) -> "SimConfig":
        """Copy with replaced fields (network/noise fields are nested)."""
        return replace(self, **kwargs)


def _parse_flat(text: str, source: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _get_float(values: dict, key: str, default: float) -> float:
    if key not in values:
        return default
    try:
        return float(values.pop(key))
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {exc}") from None


def _get_int(values: dict, key: str, default: int) -> int:
    if key not in values:
        return default
    raw = values.pop(key)
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {raw!r}") from None


def _get_list(values: dict, key: str, default, n: int, cast=float):
    if key not in values:
        out = list(default)
    else:
        raw = values.pop(key)
        try:
            out = [cast(part.strip()) for part in raw.split(",") if part.strip()]
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated values, got {raw!r}") from None
    if len(out) != n:
        raise ConfigError(f"{key}: expected {n} entries, got {len(out)}")
    return out


_TABLE_DEFAULTS = {
    "bare_energies": (20.0, 10.0, 0.0),
    "omega_c": (10.0, 20.0 / 3.0, 10.0),
    "sigma": (0.7, 0.7, 0.7),
    "S": (0.06, 0.04, 0.02),
    "X": (0.5, 0.6, 0.4),
    "xi": (0.5, 0.5, 0.5),
    "Lambda": (20.0, 15.0, 20.0),
    "zeta": (20.0, 20.0, 20.0),
    "noise_pattern": (1, -1, 1),
}


def load_config(path: str | Path | None = None, **overrides) -> SimConfig:
    """Load a configuration file, filling omitted keys with the defaults.

    ``path=None`` loads the bundled default parameter set.  Keyword
    overrides are applied after parsing (same names as the file keys).
    """
    if path is None:
        text = importlib.resources.files("npsim.data").joinpath("default.cfg").read_text()
        source = "<default>"
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config: file not found: {path}")
        text = path.read_text()
        source = str(path)
    values = _parse_flat(text, source)
    for key, val in overrides.items():
        values[key] = str(val)

    n = _get_int(values, "n_sites", 3)
    v = _get_float(values, "v", 10.0)
    geometry = values.pop("geometry", "chain").strip().lower()

    if n == 3:
        defaults = _TABLE_DEFAULTS
    else:
        defaults = {k: [np.nan] * n for k in _TABLE_DEFAULTS}

    energies = np.array(_get_list(values, "bare_energies", defaults["bare_energies"], n))
    if "couplings" in values:
        raw_rows = values.pop("couplings").split(";")
        if len(raw_rows) != n:
            raise ConfigError(f"couplings: expected {n} semicolon-separated rows")
        try:
            couplings = np.array([[float(x) for x in row.split(",")] for row in raw_rows])
        except ValueError:
            raise ConfigError("couplings: rows must be comma-separated numbers") from None
    elif n == 3:
        couplings = np.array([[0.0, v, 0.0], [v, 0.0, v], [0.0, v, 0.0]])
        if geometry == "ring":
            couplings[0, 2] = couplings[2, 0] = v
    else:
        raise ConfigError("couplings: required for networks with n_sites != 3")

    trap_raw = values.pop("trap_site", "3").strip().lower()
    trap_site = None if trap_raw in ("", "none") else int(trap_raw) - 1
    trap_rate = _get_float(values, "trap_rate", 0.5)

    spectra = []
    cols = {key: _get_list(values, key, defaults[key], n)
            for key in ("omega_c", "sigma", "S", "X", "xi", "Lambda", "zeta")}
    if any(np.any(np.isnan(cols[k])) for k in cols):
        raise ConfigError("spectra: non-default networks must list all spectral parameters")
    for i in range(n):
        try:
            spectra.append(SpectralParams(S=cols["S"][i], sigma=cols["sigma"][i],
                                          omega_c=cols["omega_c"][i], X=cols["X"][i],
                                          xi=cols["xi"][i], lam=cols["Lambda"][i],
                                          zeta=cols["zeta"][i]))
        except ValueError as exc:
            raise ConfigError(f"spectra[site {i + 1}]: {exc}") from None

    noise = NoiseProcess(
        amplitude=_get_float(values, "noise_amplitude", 14.0),
        rate=_get_float(values, "noise_rate", 4.0),
        pattern=tuple(int(c) for c in _get_list(values, "noise_pattern",
                                                defaults["noise_pattern"], n, cast=int)),
        correlated=values.pop("noise_correlated", "true").strip().lower() != "false",
    )

    config = SimConfig(
        network=SiteNetwork(energies, couplings, geometry, trap_site, trap_rate),
        spectra=tuple(spectra),
        kT=_get_float(values, "kT", 1.0),
        noise=noise,
        initial_site=_get_int(values, "initial_site", 1) - 1,
        t_max=_get_float(values, "t_max", 7.0),
        dt=_get_float(values, "dt", 1e-3),
        n_realizations=_get_int(values, "n_realizations", 100),
        rng_seed=_get_int(values, "rng_seed", DEFAULT_SEED),
        mode=values.pop("mode", "bath-rtn").strip().lower(),
    )
    if values:
        raise ConfigError(f"config: unknown keys {sorted(values)}")
    return config


def default_config(**overrides) -> SimConfig:
    """Bundled default configuration, optionally with overridden keys."""
    return load_config(None, **overrides)
