"""npsim: excitation transport in dissipative site networks under telegraph
noise and per-site harmonic baths, in the variational polaron frame."""

__version__ = "0.1.0"

from .model import SimConfig, SiteNetwork, build_system_hamiltonian, default_config, load_config
from .noise import NoiseProcess, Trajectory, sample_trajectory
from .polaron import CorrelationKernels, VariationalFrame, optimize_frame, tabulate_kernels
from .spectral import FrequencyGrid, SpectralParams

__all__ = [
    "__version__",
    "SimConfig",
    "SiteNetwork",
    "build_system_hamiltonian",
    "default_config",
    "load_config",
    "NoiseProcess",
    "Trajectory",
    "sample_trajectory",
    "CorrelationKernels",
    "VariationalFrame",
    "optimize_frame",
    "tabulate_kernels",
    "FrequencyGrid",
    "SpectralParams",
]
