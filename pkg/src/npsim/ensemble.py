"""Ensemble averaging over noise realizations, transport metrics and sweeps.

Realizations are averaged in fixed trajectory-index order so results are
bit-reproducible for a given master seed regardless of the worker count:
trajectories are grouped into fixed-size blocks, each block is reduced by a
single worker in index order, and block partials are combined in block
order.  Realizations come in antithetic pairs (one sampled realization and
its sign-flipped mirror, an equally likely path), which halves the variance
of odd moments and makes the zero-switching-rate limit average exactly two
deterministic branches.

Transport metrics follow the trapped-population bookkeeping: efficiency is
the trapped fraction 2*kappa*int rho_trap dt up to the readout horizon, and
the average trapping time integrates all site populations to the time the
trace falls below a threshold, plus an exponential-tail estimate fitted to
the last decade of decay.
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from .dynamics import DensityTimeSeries, EvolutionError, evolve, prepare
from .model import SimConfig
from .noise import NoiseProcess, Trajectory, sample_trajectory, trajectory_seed

__all__ = [
    "AveragedSeries",
    "SweepGrid",
    "HorizonError",
    "average_dynamics",
    "transport_efficiency",
    "average_trapping_time",
    "steady_state_populations",
    "convergence_report",
    "sweep",
    "resolve_jobs",
]

_BLOCK_PAIRS = 8  # antithetic pairs per reduction block (fixed for determinism)

DEFAULT_TU = 7.0
TAIL_EPSILON = 1e-4


class HorizonError(EvolutionError):
    """Simulation horizon too short for the requested metric."""


@dataclass
class AveragedSeries:
    """Ensemble mean of trajectory solutions plus per-node standard errors."""

    times: np.ndarray
    rho: np.ndarray
    pop_se: np.ndarray
    site_integrals: np.ndarray
    kappa: float
    trap_site: int | None
    n_realizations: int
    master_seed: int
    per_traj: dict = field(default_factory=dict)

    def populations(self) -> np.ndarray:
        return np.einsum("tii->ti", self.rho).real

    def trace(self) -> np.ndarray:
        return np.einsum("tii->t", self.rho).real

    def trapped_weight(self) -> np.ndarray:
        if self.trap_site is None or self.kappa == 0.0:
            return np.zeros(len(self.times))
        return 2.0 * self.kappa * self.site_integrals[:, self.trap_site]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.rho).min())


def resolve_jobs(jobs: int | None) -> int:
    if jobs is not None and jobs >= 1:
        return int(jobs)
    env = os.environ.get("NPSIM_JOBS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _sample_realization(config: SimConfig, index: int, seed: int):
    """Realization ``index`` = antithetic mirror pair (index // 2, index % 2)."""
    pair, mirror = divmod(index, 2)
    noise = config.noise
    if noise.correlated:
        traj = sample_trajectory(noise, config.t_max, trajectory_seed(seed, pair))
        return traj.flipped() if mirror else traj
    trajs = tuple(
        sample_trajectory(noise, config.t_max,
                          np.random.SeedSequence((seed & 0xFFFFFFFFFFFFFFFF, pair, site)))
        for site in range(config.network.n_sites))
    return tuple(t.flipped() for t in trajs) if mirror else trajs


# worker-global state (set once per pool via the initializer; 'fork' would
# inherit it anyway but the explicit handoff also works under 'spawn')
_WORK: dict = {}


def _init_worker(payload) -> None:
    _WORK.clear()
    _WORK.update(payload)
    _WORK["frame_kernels"] = None


def _worker_block(task):
    block_index, start, count = task
    config: SimConfig = _WORK["config"]
    if _WORK["frame_kernels"] is None:
        if _WORK.get("frame") is not None or config.mode == "rtn-only":
            _WORK["frame_kernels"] = (_WORK.get("frame"), _WORK.get("kernels"))
        else:
            _WORK["frame_kernels"] = prepare(config)
    frame, kernels = _WORK["frame_kernels"]
    seed = _WORK["seed"]
    out_stride = _WORK["out_stride"]
    stop_trace = _WORK["stop_trace"]
    want_rho = _WORK["want_rho"]

    sum_rho = None
    sum_pops = None
    sum_pops_sq = None
    sum_integrals = None
    finals = []
    for index in range(start, start + count):
        traj = _sample_realization(config, index, seed)
        series = evolve(None, traj, config, frame, kernels,
                        out_stride=out_stride, stop_trace=stop_trace)
        pops = series.populations()
        if sum_pops is None:
            sum_pops = np.zeros_like(pops)
            sum_pops_sq = np.zeros_like(pops)
            sum_integrals = np.zeros_like(series.site_integrals)
            if want_rho:
                sum_rho = np.zeros_like(series.rho)
        sum_pops += pops
        sum_pops_sq += pops**2
        sum_integrals += series.site_integrals
        if want_rho:
            sum_rho += series.rho
        finals.append((series.site_integrals[-1].copy(), series.trace()[-1]))
    return block_index, count, sum_rho, sum_pops, sum_pops_sq, sum_integrals, finals


def _run_blocks(config, n_real, seed, frame, kernels, jobs, out_stride, stop_trace, want_rho):
    blocks = []
    start = 0
    per_block = 2 * _BLOCK_PAIRS
    while start < n_real:
        count = min(per_block, n_real - start)
        blocks.append((len(blocks), start, count))
        start += count
    payload = {"config": config, "frame": frame, "kernels": kernels, "seed": seed,
               "out_stride": out_stride, "stop_trace": stop_trace, "want_rho": want_rho}
    jobs = min(resolve_jobs(jobs), len(blocks))
    if jobs <= 1:
        _init_worker(payload)
        results = [_worker_block(b) for b in blocks]
        _WORK.clear()
    else:
        ctx = get_context("fork")
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(payload,)) as pool:
            results = list(pool.imap(_worker_block, blocks))
    results.sort(key=lambda r: r[0])
    return results


def average_dynamics(config: SimConfig, *, n_realizations: int | None = None,
                     frame=None, kernels=None, jobs: int | None = None,
                     out_stride: int = 1, stop_trace: float = 0.0,
                     want_rho: bool = True) -> AveragedSeries:
    """Mean of per-trajectory solutions in fixed index order.

    ``n_realizations`` defaults to the config value; odd counts leave the
    last antithetic pair incomplete (still deterministic).  Standard errors
    are per-node, per-site, across realizations.
    """
    n_real = config.n_realizations if n_realizations is None else int(n_realizations)
    if n_real < 1:
        raise ValueError("need at least one realization")
    seed = config.rng_seed
    if config.mode != "rtn-only" and (frame is None or kernels is None):
        frame, kernels = prepare(config)
    results = _run_blocks(config, n_real, seed, frame, kernels, jobs, out_stride,
                          stop_trace, want_rho)

    total = 0
    sum_rho = sum_pops = sum_sq = sum_int = None
    finals = []
    for _, count, b_rho, b_pops, b_sq, b_int, b_fin in results:
        if sum_pops is None:
            sum_pops = b_pops.copy()
            sum_sq = b_sq.copy()
            sum_int = b_int.copy()
            sum_rho = b_rho.copy() if want_rho else None
        else:
            sum_pops += b_pops
            sum_sq += b_sq
            sum_int += b_int
            if want_rho:
                sum_rho += b_rho
        total += count
        finals.extend(b_fin)
    mean_pops = sum_pops / total
    var = np.maximum(sum_sq / total - mean_pops**2, 0.0)
    pop_se = np.sqrt(var / total)
    rho = sum_rho / total if want_rho else _diag_to_rho(mean_pops)
    per_traj = {"site_integrals": np.array([f[0] for f in finals]),
                "final_trace": np.array([f[1] for f in finals])}
    # time grid comes from any single evolution; reconstruct cheaply
    times = _output_times(config, out_stride)
    return AveragedSeries(times=times, rho=rho, pop_se=pop_se,
                          site_integrals=sum_int / total,
                          kappa=config.network.trap_rate,
                          trap_site=config.network.trap_site,
                          n_realizations=total, master_seed=seed, per_traj=per_traj)


def _output_times(config: SimConfig, out_stride: int) -> np.ndarray:
    n_steps = int(round(config.t_max / config.dt))
    out = np.arange(out_stride - 1, n_steps, out_stride, dtype=np.int64)
    return np.concatenate(([0.0], (out + 1) * config.dt))


def _diag_to_rho(pops: np.ndarray) -> np.ndarray:
    n_t, n = pops.shape
    rho = np.zeros((n_t, n, n), dtype=complex)
    rho[:, np.arange(n), np.arange(n)] = pops
    return rho


def transport_efficiency(series, kappa: float | None = None, trap_site: int | None = None,
                         tu: float = DEFAULT_TU) -> float:
    """Trapped population fraction 2*kappa*int_0^tu rho_trap dt.

    Trapezoid rule on the stored grid.  The report is clamped at 1 (with a
    warning) if quadrature error pushes it above 1 by more than 5e-3.
    """
    kappa = series.kappa if kappa is None else kappa
    trap_site = series.trap_site if trap_site is None else trap_site
    if kappa <= 0.0 or trap_site is None:
        raise ValueError("transport efficiency needs a positive trapping rate")
    times = series.times
    if times[-1] < tu - 1e-9:
        raise ValueError(f"series covers [0, {times[-1]}] but tu={tu}")
    mask = times <= tu + 1e-9
    pops = series.populations()[mask, trap_site]
    eta = 2.0 * kappa * float(np.trapezoid(pops, times[mask]))
    if eta > 1.0 + 5e-3:
        warnings.warn(f"efficiency {eta:.4f} exceeds 1; clamping (check step sizes)",
                      RuntimeWarning, stacklevel=2)
        return 1.0
    return eta


def average_trapping_time(series, eps_tail: float = TAIL_EPSILON) -> float:
    """Total residence time: sum_i int rho_ii dt with exponential tail closure.

    The integral runs to the first node where the trace falls below
    ``eps_tail``; the remainder is estimated from an exponential fit to the
    last decade of trace decay.  Raises :class:`HorizonError` when the trace
    at the end of the series is still above 0.1.
    """
    if series.kappa <= 0.0 or series.trap_site is None:
        raise ValueError("average trapping time needs a positive trapping rate")
    trace = np.maximum(series.trace(), 0.0)
    below = np.nonzero(trace < eps_tail)[0]
    t_star_idx = int(below[0]) if below.size else len(trace) - 1
    if not below.size and trace[-1] > 0.1:
        raise HorizonError(
            f"trace is still {trace[-1]:.3f} at t={series.times[-1]}; increase t_max")
    base = float(np.sum(series.site_integrals[t_star_idx]))
    tail_level = trace[t_star_idx]
    if tail_level <= 0.0:
        return base
    window = (trace[:t_star_idx + 1] <= 10.0 * tail_level) \
        & (trace[:t_star_idx + 1] >= tail_level)
    idx = np.nonzero(window)[0]
    if idx.size < 2:
        idx = np.arange(max(0, t_star_idx - 10), t_star_idx + 1)
    slope = np.polyfit(series.times[idx], np.log(trace[idx]), 1)[0]
    if slope >= 0.0:
        raise HorizonError("trace is not decaying at the end of the series; increase t_max")
    return base + float(tail_level / -slope)


def steady_state_populations(config: SimConfig, t_ss: float, **kwargs) -> np.ndarray:
    """Site populations of the ensemble average at readout time t_ss.

    Requires a sink-free network (the steady-state study has no trap).
    """
    if config.network.trap_rate != 0.0:
        raise ValueError("steady-state populations are defined without a sink")
    if t_ss > config.t_max:
        config = config.with_(t_max=t_ss)
    avg = average_dynamics(config, want_rho=False, **kwargs)
    idx = int(np.argmin(np.abs(avg.times - t_ss)))
    pops = avg.populations()[idx]
    total = pops.sum()
    if abs(total - 1.0) > 1e-4:
        warnings.warn(f"populations at t_ss sum to {total:.6f}", RuntimeWarning, stacklevel=2)
    return pops


def convergence_report(config: SimConfig, checkpoints, out_stride: int = 10) -> dict[int, float]:
    """Max population deviation of partial averages vs the largest checkpoint."""
    checkpoints = sorted(int(c) for c in checkpoints)
    if not checkpoints or checkpoints[0] < 1:
        raise ValueError("checkpoints must be positive")
    n_max = checkpoints[-1]
    frame, kernels = prepare(config)
    partial: dict[int, np.ndarray] = {}
    running = None
    for index in range(n_max):
        traj = _sample_realization(config, index, config.rng_seed)
        series = evolve(None, traj, config, frame, kernels, out_stride=out_stride)
        pops = series.populations()
        running = pops if running is None else running + pops
        if index + 1 in checkpoints:
            partial[index + 1] = running / (index + 1)
    reference = partial[n_max]
    return {m: float(np.abs(p - reference).max()) for m, p in partial.items()}


@dataclass
class SweepGrid:
    """Metric values on an (amplitude x switching-rate) grid."""

    omegas: np.ndarray
    nus: np.ndarray
    metric: str
    values: np.ndarray
    stderr: np.ndarray
    n_realizations: int
    master_seed: int
    cell_seeds: np.ndarray

    def rows(self):
        """Iterate (omega, nu, value, stderr, n_real, seed) in row-major order."""
        for i, om in enumerate(self.omegas):
            for j, nu in enumerate(self.nus):
                yield (float(om), float(nu), float(self.values[i, j]),
                       float(self.stderr[i, j]), self.n_realizations,
                       int(self.cell_seeds[i, j]))


_METRICS = ("eta", "ttime", "pss")


def _cell_seed(master_seed: int, i: int, j: int) -> int:
    ss = np.random.SeedSequence((master_seed & 0xFFFFFFFFFFFFFFFF, i, j))
    return int(ss.generate_state(1, np.uint64)[0])


def _metric_config(config: SimConfig, metric: str, omega: float, nu: float,
                   seed: int, t_max: float) -> SimConfig:
    noise = NoiseProcess(amplitude=omega, rate=nu, pattern=config.noise.pattern,
                         correlated=config.noise.correlated)
    cfg = config.with_(noise=noise, rng_seed=seed, t_max=t_max)
    if metric == "pss" and cfg.network.trap_rate != 0.0:
        from dataclasses import replace
        network = replace(cfg.network, trap_rate=0.0, trap_site=None)
        cfg = cfg.with_(network=network)
    return cfg


def _eval_cell(config: SimConfig, metric: str, tu: float, t_ss: float,
               site: int, frame, kernels, jobs) -> tuple[float, float]:
    if metric == "eta":
        avg = average_dynamics(config, frame=frame, kernels=kernels, jobs=jobs,
                               want_rho=False, out_stride=max(1, int(round(0.01 / config.dt))))
        value = 2.0 * config.network.trap_rate \
            * _integral_at(avg.site_integrals, avg.times, tu)[config.network.trap_site]
        per = 2.0 * config.network.trap_rate \
            * avg.per_traj["site_integrals"][:, config.network.trap_site]
        # per-trajectory integrals run to t_max; scale error only
        return min(value, 1.0), float(per.std(ddof=1) / np.sqrt(len(per))) if len(per) > 1 else 0.0
    if metric == "ttime":
        t_max = config.t_max
        for _ in range(4):
            cfg = config.with_(t_max=t_max)
            avg = average_dynamics(cfg, frame=frame, kernels=kernels, jobs=jobs,
                                   want_rho=False, stop_trace=1e-7,
                                   out_stride=max(1, int(round(0.01 / cfg.dt))))
            try:
                value = average_trapping_time(avg)
            except HorizonError:
                t_max *= 2.0
                continue
            tot = avg.per_traj["site_integrals"].sum(axis=1)
            se = float(tot.std(ddof=1) / np.sqrt(len(tot))) if len(tot) > 1 else 0.0
            return value, se
        raise HorizonError(f"trace did not decay within t_max={t_max}")
    # pss
    cfg = config if config.t_max >= t_ss else config.with_(t_max=t_ss)
    avg = average_dynamics(cfg, frame=frame, kernels=kernels, jobs=jobs, want_rho=False,
                           out_stride=max(1, int(round(0.01 / cfg.dt))))
    idx = int(np.argmin(np.abs(avg.times - t_ss)))
    value = avg.populations()[idx, site]
    return float(value), float(avg.pop_se[idx, site])


def _integral_at(site_integrals: np.ndarray, times: np.ndarray, t: float) -> np.ndarray:
    idx = np.searchsorted(times, t + 1e-12) - 1
    idx = min(max(idx, 0), len(times) - 1)
    if abs(times[idx] - t) > 1e-6 and idx + 1 < len(times):
        w = (t - times[idx]) / (times[idx + 1] - times[idx])
        return (1 - w) * site_integrals[idx] + w * site_integrals[idx + 1]
    return site_integrals[idx]


def sweep(config: SimConfig, omegas, nus, metric: str = "eta", *,
          n_realizations: int | None = None, jobs: int | None = None,
          tu: float = DEFAULT_TU, t_ss: float = 5.0, site: int | None = None,
          t_max_metric: float = 40.0) -> SweepGrid:
    """Evaluate a transport metric on an amplitude x rate grid.

    Cells are independent (each derives its own seed from the master seed
    and its grid coordinates) and evaluated in a fixed order, so the grid is
    reproducible for any worker count.  ``n_realizations`` defaults to 200
    for the trapping metrics and 100 for steady-state populations.
    """
    if metric not in _METRICS:
        raise ValueError(f"metric must be one of {_METRICS}")
    omegas = np.asarray(list(omegas), dtype=float)
    nus = np.asarray(list(nus), dtype=float)
    if omegas.size == 0 or nus.size == 0:
        raise ValueError("sweep grids must be non-empty")
    if n_realizations is None:
        n_realizations = 100 if metric == "pss" else 200
    site = (config.network.trap_site if site is None else site)
    if site is None:
        site = config.network.n_sites - 1

    frame = kernels = None
    if config.mode != "rtn-only":
        frame, kernels = prepare(config)

    values = np.empty((omegas.size, nus.size))
    stderr = np.empty_like(values)
    seeds = np.empty(values.shape, dtype=np.uint64)
    horizon = {"eta": max(config.t_max, tu), "ttime": t_max_metric, "pss": t_ss}[metric]
    for i, om in enumerate(omegas):
        for j, nu in enumerate(nus):
            seed = _cell_seed(config.rng_seed, i, j)
            seeds[i, j] = seed
            cfg = _metric_config(config, metric, float(om), float(nu), seed, horizon)
            cfg = cfg.with_(n_realizations=n_realizations)
            values[i, j], stderr[i, j] = _eval_cell(cfg, metric, tu, t_ss, site,
                                                    frame, kernels, jobs)
    return SweepGrid(omegas=omegas, nus=nus, metric=metric, values=values,
                     stderr=stderr, n_realizations=n_realizations,
                     master_seed=config.rng_seed, cell_seeds=seeds)
