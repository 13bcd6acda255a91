"""Random telegraph noise: sampling, evaluation and per-site offsets.

The telegraph variable alpha(t) jumps between +1 and -1.  With switching
parameter nu, flips form a Poisson process of rate nu/2, which gives the
autocorrelation <alpha(t) alpha(t')> = exp(-nu |t - t'|) and correlation
time 1/nu.  A single shared variable drives all sites through an integer
pattern c_n in {+1, -1, 0} (fully correlated/anti-correlated sites); an
uncorrelated per-site variant is available behind ``correlated=False``.

Sampling is deterministic given a seed: the generator is Philox (counter
based) keyed via ``numpy.random.SeedSequence``, so trajectories are
reproducible across platforms and worker layouts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["NoiseProcess", "Trajectory", "sample_trajectory", "value_at", "site_offsets",
           "trajectory_seed", "RNG_ALGORITHM"]

RNG_ALGORITHM = "philox4x64-10 keyed by numpy SeedSequence"


@dataclass(frozen=True)
class NoiseProcess:
    """Telegraph-noise parameters: amplitude (ps^-1), switching parameter nu
    (ps^-1, the autocorrelation decay rate) and per-site pattern."""

    amplitude: float
    rate: float
    pattern: tuple[int, ...] = (1, -1, 1)
    correlated: bool = True

    def __post_init__(self) -> None:
        if self.amplitude < 0.0:
            raise ValueError("noise amplitude must be >= 0")
        if self.rate < 0.0:
            raise ValueError("noise rate must be >= 0")
        if any(c not in (-1, 0, 1) for c in self.pattern):
            raise ValueError("noise pattern entries must be -1, 0 or +1")


@dataclass(frozen=True)
class Trajectory:
    """One realization: initial sign and sorted flip times in (0, t_max]."""

    initial_sign: int
    flip_times: np.ndarray
    t_max: float

    def __post_init__(self) -> None:
        flips = np.asarray(self.flip_times, dtype=float)
        object.__setattr__(self, "flip_times", flips)
        if self.initial_sign not in (-1, 1):
            raise ValueError("initial_sign must be +1 or -1")
        if flips.size and (np.any(np.diff(flips) <= 0.0) or flips[0] <= 0.0 or flips[-1] > self.t_max):
            raise ValueError("flip times must be strictly increasing within (0, t_max]")

    @property
    def n_flips(self) -> int:
        return self.flip_times.size

    def flipped(self) -> "Trajectory":
        """Mirror realization with the opposite initial sign (same flips)."""
        return Trajectory(-self.initial_sign, self.flip_times, self.t_max)


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Derived per-trajectory seed (splittable hash of master seed and index)."""
    return np.random.SeedSequence((int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(index)))


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, (tuple, list)):
        seed = np.random.SeedSequence(tuple(int(s) & 0xFFFFFFFFFFFFFFFF for s in seed))
    elif not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(seed))


def sample_trajectory(proc: NoiseProcess, t_max: float, seed) -> Trajectory:
    """Sample one realization on [0, t_max].

    The initial sign is +1 or -1 with equal probability and inter-flip
    waiting times are i.i.d. exponential with rate nu/2 (zero rate means no
    flips).  Deterministic given ``seed``.
    """
    if t_max <= 0.0:
        raise ValueError("t_max must be > 0")
    rng = _generator(seed)
    sign = 1 if rng.random() < 0.5 else -1
    if proc.rate == 0.0:
        return Trajectory(sign, np.empty(0), t_max)
    scale = 2.0 / proc.rate
    flips = []
    t = rng.exponential(scale)
    while t <= t_max:
        flips.append(t)
        t += rng.exponential(scale)
    return Trajectory(sign, np.array(flips), t_max)


def value_at(traj: Trajectory, t: float) -> int:
    """alpha(t) with the right-continuous convention at flip instants."""
    if t < 0.0 or t > traj.t_max:
        raise ValueError(f"t={t} outside [0, {traj.t_max}]")
    flips_before = int(np.searchsorted(traj.flip_times, t, side="right"))
    return traj.initial_sign * (-1) ** flips_before


def site_offsets(proc: NoiseProcess, traj: Trajectory, t: float) -> np.ndarray:
    """Per-site energy offsets c_n * Omega * alpha(t), ps^-1."""
    return np.asarray(proc.pattern, dtype=float) * (proc.amplitude * value_at(traj, t))
