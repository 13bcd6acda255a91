"""Single-trajectory evolution of the reduced density matrix.

The master equation combines (i) coherent evolution under the
piecewise-constant system Hamiltonian set by the telegraph noise, (ii) an
anti-Hermitian sink acting on the trap site, and (iii) a second-order memory
dissipator built from the bath correlation kernels of the displaced frame:

    drho/dt = -i[H(t), rho] - kappa {P_trap, rho}
              - sum_ij int_0^t ds C_ij(s) (S_i S_j(s; t) rho - S_j(s; t) rho S_i) + h.c.

where S_j(s; t) = U(t) U(t-s)^dag S_j U(t-s) U(t)^dag is the system operator
carried backward over the memory span with the full noisy propagator, and
the S_i run over all matrix units |n><m|.

Environment modes: ``rtn-only`` evolves the bare Hamiltonian with no
dissipator (solved exactly, segment by segment), ``bath-only`` evolves the
renormalized frame Hamiltonian with the dissipator and zero noise offsets,
``bath-rtn`` applies both.

The integro-differential equation is integrated in the interaction picture
of H(t), where the memory operators A_i(t) = int ds sum_j C_ij(s) Q_j(t-s)
(Q_j = U^dag S_j U) reduce to discrete convolutions of kernel tables against
products of propagator entries; these are evaluated with FFTs on the RK4
stage grid and fed to the compiled stepping core.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from . import _engine
from .model import SimConfig, build_system_hamiltonian
from .noise import Trajectory
from .polaron import CorrelationKernels, VariationalFrame, optimize_frame, tabulate_kernels

__all__ = [
    "DensityTimeSeries",
    "PiecewisePropagator",
    "EvolutionError",
    "IntegratorError",
    "propagator_at",
    "interaction_picture",
    "trap_liouvillian",
    "dissipator",
    "prepare",
    "evolve",
]

_HERMITICITY_TOL = 1e-10
_TRACE_TOL = 1e-6


class EvolutionError(RuntimeError):
    """Evolution failed (configuration or numerical problem)."""


class IntegratorError(EvolutionError):
    """Step-size instability detected; retry with a smaller step."""


@dataclass
class DensityTimeSeries:
    """Density matrices on a time grid plus RK4-consistent running integrals.

    ``site_integrals[k, n]`` is the accumulated integral of rho_nn from 0 to
    ``times[k]``, evaluated inside the integrator stages so that trace
    bookkeeping identities hold to round-off.  ``t_stop`` marks early
    termination (trace fell below the stop threshold); later nodes hold
    zeros and frozen integrals.
    """

    times: np.ndarray
    rho: np.ndarray
    site_integrals: np.ndarray
    kappa: float
    trap_site: int | None
    t_stop: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_sites(self) -> int:
        return self.rho.shape[1]

    def populations(self) -> np.ndarray:
        return np.einsum("tii->ti", self.rho).real

    def trace(self) -> np.ndarray:
        return np.einsum("tii->t", self.rho).real

    def trapped_weight(self) -> np.ndarray:
        """Cumulative trapped population 2 kappa int rho_trap."""
        if self.trap_site is None or self.kappa == 0.0:
            return np.zeros(len(self.times))
        return 2.0 * self.kappa * self.site_integrals[:, self.trap_site]

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue over all stored nodes (positivity monitor)."""
        return float(np.linalg.eigvalsh(self.rho).min())

    def hermiticity_defect(self) -> float:
        return float(np.abs(self.rho - self.rho.conj().transpose(0, 2, 1)).max())


def _check_rho0(rho0: np.ndarray, n: int) -> np.ndarray:
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (n, n):
        raise EvolutionError(f"rho0: expected shape {(n, n)}, got {rho0.shape}")
    if np.abs(rho0 - rho0.conj().T).max() > 1e-12:
        raise EvolutionError("rho0: not Hermitian")
    if abs(np.trace(rho0).real - 1.0) > 1e-9:
        raise EvolutionError("rho0: trace must be 1")
    return rho0


def _segments(traj, t_max: float, static: bool):
    """(t_lo, t_hi, alpha_tuple) pieces covering [0, t_max].

    ``traj`` is one shared Trajectory (collective noise), a tuple of
    per-site Trajectories (uncorrelated noise) or None; the alpha tuple
    holds one sign per driving variable.
    """
    trajs = (traj,) if isinstance(traj, Trajectory) else traj
    if static or trajs is None:
        signs = (1,) if trajs is None else tuple(t.initial_sign for t in trajs)
        return [(0.0, t_max, signs)]
    for t in trajs:
        if t.t_max < t_max - 1e-12:
            raise EvolutionError(f"trajectory covers [0, {t.t_max}] but t_max={t_max}")
    events = sorted(set(float(ft) for t in trajs for ft in t.flip_times if ft < t_max))
    bounds = [0.0] + events + [t_max]
    signs = np.array([t.initial_sign for t in trajs])
    counts = np.zeros(len(trajs), dtype=int)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        for k, t in enumerate(trajs):
            counts[k] = np.searchsorted(t.flip_times, lo, side="right")
        current = tuple(int(s) for s in signs * (-1) ** counts)
        if hi > lo:
            out.append((float(lo), float(hi), current))
    return out


def _is_static(config: SimConfig, traj) -> bool:
    """True when the noise cannot change the Hamiltonian along the run."""
    return (config.mode == "bath-only" or config.noise.amplitude == 0.0 or traj is None
            or all(c == 0 for c in config.noise.pattern))


def _hamiltonian_builder(config: SimConfig, frame: VariationalFrame | None):
    """Maps an alpha tuple (one sign per driving variable) to the segment
    Hamiltonian of the active mode."""
    noise = config.noise
    n = config.network.n_sites
    pattern = np.asarray(noise.pattern, dtype=float)
    amp = 0.0 if config.mode == "bath-only" else noise.amplitude
    if config.mode == "rtn-only":
        energies, couplings = config.network.energies, config.network.couplings.astype(complex)
    else:
        if frame is None:
            raise EvolutionError("bath modes need a variational frame")
        energies = frame.renormalized_energies()
        couplings = frame.Vt.astype(complex).copy()
        np.fill_diagonal(couplings, 0.0)

    def build(alpha: tuple[int, ...]) -> np.ndarray:
        alpha_sites = np.full(n, alpha[0]) if len(alpha) == 1 else np.asarray(alpha)
        h = couplings.copy()
        h[np.diag_indices(n)] = energies + amp * pattern * alpha_sites
        return h

    return build


class PiecewisePropagator:
    """Exact time-ordered propagator for a piecewise-constant Hamiltonian.

    ``h_of`` maps an alpha tuple to the segment Hamiltonian; ``at(t)``
    returns the ordered product of segment exponentials, unitary to
    round-off (each factor comes from a Hermitian eigendecomposition).
    """

    def __init__(self, h_of, traj, t_max: float, static: bool = False):
        self.t_max = float(t_max)
        self.segments = _segments(traj, self.t_max, static)
        self._eig = {}
        for _, _, alpha in self.segments:
            if alpha not in self._eig:
                lam, vec = np.linalg.eigh(h_of(alpha))
                self._eig[alpha] = (lam, vec)

    def _segment_step(self, alpha, dt: float) -> np.ndarray:
        lam, vec = self._eig[alpha]
        return (vec * np.exp(-1j * lam * dt)) @ vec.conj().T

    def at(self, t: float) -> np.ndarray:
        if t < 0.0 or t > self.t_max + 1e-12:
            raise EvolutionError(f"t={t} outside [0, {self.t_max}]")
        n = next(iter(self._eig.values()))[1].shape[0]
        u = np.eye(n, dtype=complex)
        for lo, hi, alpha in self.segments:
            if t <= lo:
                break
            u = self._segment_step(alpha, min(t, hi) - lo) @ u
        return u

    def grid(self, delta: float, n_pts: int) -> np.ndarray:
        """Propagators at k * delta for k = 0..n_pts-1 (batched per segment)."""
        n = next(iter(self._eig.values()))[1].shape[0]
        out = np.empty((n_pts, n, n), dtype=complex)
        out[0] = np.eye(n)
        u_run = np.eye(n, dtype=complex)
        k_next = 1
        for lo, hi, alpha in self.segments:
            lam, vec = self._eig[alpha]
            k_hi = min(int(math.floor(hi / delta + 1e-9)), n_pts - 1)
            if k_hi >= k_next:
                taus = np.arange(k_next, k_hi + 1) * delta - lo
                base = vec.conj().T @ u_run
                phases = np.exp(-1j * np.outer(taus, lam))
                out[k_next:k_hi + 1] = np.einsum("ab,kb,bc->kac", vec, phases, base)
                k_next = k_hi + 1
            u_run = self._segment_step(alpha, hi - lo) @ u_run
            if k_next >= n_pts:
                break
        return out


def propagator_at(traj: Trajectory, network, frame: VariationalFrame, proc, t: float) -> np.ndarray:
    """U(t) in the displaced frame (renormalized energies and couplings)."""
    pattern = np.asarray(proc.pattern, dtype=float)
    base = frame.Vt.astype(complex).copy()
    np.fill_diagonal(base, 0.0)
    energies = frame.renormalized_energies()

    def h_of(alpha):
        h = base.copy()
        np.fill_diagonal(h, energies + proc.amplitude * pattern * alpha[0])
        return h

    return PiecewisePropagator(h_of, traj, max(t, traj.t_max)).at(t)


def interaction_picture(op: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Similarity transform U op U^dag (spectrum preserving)."""
    return u @ op @ u.conj().T


def trap_liouvillian(rho: np.ndarray, kappa: float, trap_site: int | None) -> np.ndarray:
    """Sink contribution -kappa {P_trap, rho}; drains trace at 2 kappa rho_nn."""
    if kappa < 0.0:
        raise EvolutionError("kappa must be >= 0")
    out = np.zeros_like(np.asarray(rho, dtype=complex))
    if kappa == 0.0 or trap_site is None:
        return out
    out[trap_site, :] = -kappa * rho[trap_site, :]
    out[:, trap_site] += -kappa * np.asarray(rho)[:, trap_site]
    return out


# ---------------------------------------------------------------------------
# memory tables
# ---------------------------------------------------------------------------

def _pair_kernel_taps(kernels: CorrelationKernels, delta: float):
    """Nonzero pair kernels resampled on the uniform stage grid.

    Returns (n_taps, tau, [(i, j, c_raw, c_trap)]) where ``c_trap`` carries
    trapezoid weights (half at both ends) and the raw samples are kept for
    the moving-endpoint correction at early times.
    """
    n_taps = int(math.floor(kernels.s_max / delta + 1e-9))
    tau = np.arange(n_taps + 1) * delta
    out = []
    for i, j in kernels.nonzero_pairs():
        k = kernels.pair_kernel(i, j)
        c = np.interp(tau, kernels.s, k.real) + 1j * np.interp(tau, kernels.s, k.imag)
        c_trap = c * delta
        c_trap[0] *= 0.5
        c_trap[-1] *= 0.5
        out.append((i, j, c, c_trap))
    return n_taps, tau, out


class _MemoryConvolver:
    """Chunked FFT evaluation of the memory operators A_i on the stage grid.

    Only operator channels with a nonzero kernel against some partner are
    transformed (uncoupled site pairs drop out of both the inputs and the
    outputs of the convolution).
    """

    def __init__(self, kernels: CorrelationKernels, u_grid: np.ndarray, delta: float):
        self.u = u_grid
        self.n_sites = u_grid.shape[1]
        self.delta = delta
        self.n_taps, self.tau, self.pairs = _pair_kernel_taps(kernels, delta)
        self.j_active = sorted({j for _, j, _, _ in self.pairs})
        self.i_active = sorted({i for i, _, _, _ in self.pairs})
        self._j_slot = {j: s for s, j in enumerate(self.j_active)}
        self._i_slot = {i: s for s, i in enumerate(self.i_active)}
        self._fft_len = None
        self._c_hat = None

    def _ensure_fft(self, length: int) -> None:
        if self._fft_len == length:
            return
        self._fft_len = length
        self._c_hat = {}
        for i, j, _, c_trap in self.pairs:
            self._c_hat[(i, j)] = np.fft.fft(c_trap, n=length)

    def chunk(self, g0: int, g1: int) -> np.ndarray:
        """A4[g, n, m, a, b] for stage points g0..g1 inclusive."""
        n = self.n_sites
        n_pts = g1 - g0 + 1
        k = self.n_taps
        ext = n_pts + k
        length = next_fast_len(ext)
        self._ensure_fft(length)

        x = np.zeros((ext, n, n), dtype=complex)
        lo = g0 - k
        src_lo = max(lo, 0)
        x[src_lo - lo:] = self.u[src_lo:g1 + 1]
        # q_j[g, a, b] = conj(U[g, p, a]) U[g, q, b] for active channels j=(p,q)
        q = np.empty((ext, len(self.j_active), n, n), dtype=complex)
        xc = x.conj()
        for slot, j in enumerate(self.j_active):
            pj, qj = divmod(j, n)
            q[:, slot] = xc[:, pj, :, None] * x[:, qj, None, :]
        q_hat = np.fft.fft(q.reshape(ext, -1), n=length, axis=0) \
            .reshape(length, len(self.j_active), n, n)

        a_hat = np.zeros((length, len(self.i_active), n, n), dtype=complex)
        for i, j, _, _ in self.pairs:
            a_hat[:, self._i_slot[i]] += self._c_hat[(i, j)][:, None, None] \
                * q_hat[:, self._j_slot[j]]
        a_act = np.fft.ifft(a_hat.reshape(length, -1), axis=0) \
            .reshape(length, len(self.i_active), n, n)[k:k + n_pts]

        a4 = np.zeros((n_pts, n, n, n, n), dtype=complex)
        for slot, i in enumerate(self.i_active):
            ni, mi = divmod(i, n)
            a4[:, ni, mi] = a_act[:, slot]

        # moving upper endpoint: for t = g * delta < s_max the last trapezoid
        # tap needs half weight (the FFT applied full weight)
        if g0 < k:
            g_fix = np.arange(g0, min(g1 + 1, k))
            local = g_fix - g0
            for i, j, c_raw, _ in self.pairs:
                ni, mi = divmod(i, n)
                pj, qj = divmod(j, n)
                q0 = np.outer(self.u[0, pj].conj(), self.u[0, qj])
                a4[local, ni, mi] -= (0.5 * self.delta) * c_raw[g_fix][:, None, None] * q0
        return a4


def _memory_rhs_tables(convolver, u_chunk, g0, g1, kappa, trap_site):
    """A4 chunk plus the sigma-independent part M = sum_i Q_i A_i + kappa Q_T."""
    a4 = convolver.chunk(g0, g1) if convolver is not None else None
    m = None
    if a4 is not None:
        m = np.einsum("gna,gmb,gnmbc->gac", u_chunk.conj(), u_chunk, a4, optimize=True)
    if kappa > 0.0 and trap_site is not None:
        q_t = np.einsum("ga,gb->gab", u_chunk[:, trap_site].conj(), u_chunk[:, trap_site])
        m = kappa * q_t if m is None else m + kappa * q_t
    return a4, m


def dissipator(rho: np.ndarray, t: float, kernels: CorrelationKernels, traj: Trajectory | None,
               frame: VariationalFrame, proc=None, delta: float = 5e-4) -> np.ndarray:
    """Memory dissipator evaluated at time t (reference implementation).

    Direct quadrature of the truncated memory integral in the Schroedinger
    picture; slow but independent of the FFT/interaction-picture machinery,
    so tests can cross-check against it.  ``proc=None`` means zero noise
    offsets.
    """
    n = frame.n_sites
    rho = np.asarray(rho, dtype=complex)
    base = frame.Vt.astype(complex).copy()
    np.fill_diagonal(base, 0.0)
    energies = frame.renormalized_energies()
    amp = 0.0 if proc is None else proc.amplitude
    pattern = np.zeros(n) if proc is None else np.asarray(proc.pattern, float)

    def h_of(alpha):
        h = base.copy()
        np.fill_diagonal(h, energies + amp * pattern * alpha[0])
        return h

    prop = PiecewisePropagator(h_of, traj, max(t, 1e-12), static=(traj is None))

    n_taps, tau, pairs = _pair_kernel_taps(kernels, delta)
    tau = tau[tau <= t + 1e-15]
    u_t = prop.at(t)
    units = [np.zeros((n, n), complex) for _ in range(n * n)]
    for idx in range(n * n):
        units[idx][divmod(idx, n)] = 1.0
    w_ops = [np.zeros((n, n), complex) for _ in range(n * n)]
    for k_idx, s in enumerate(tau):
        v = u_t @ prop.at(t - s).conj().T
        weight = delta
        if k_idx == 0 or k_idx == len(tau) - 1:
            weight *= 0.5
        for i, j, c_raw, _ in pairs:
            w_ops[i] = w_ops[i] + (weight * c_raw[k_idx]) * (v @ units[j] @ v.conj().T)
    out = np.zeros((n, n), dtype=complex)
    for i in range(n * n):
        term = units[i] @ w_ops[i] @ rho - w_ops[i] @ rho @ units[i]
        out -= term + term.conj().T
    return out


# ---------------------------------------------------------------------------
# evolution drivers
# ---------------------------------------------------------------------------

def prepare(config: SimConfig):
    """Variational frame and kernel tables for ``config`` (None for rtn-only)."""
    if config.mode == "rtn-only":
        return None, None
    frame = optimize_frame(list(config.spectra), config.network, config.beta)
    kernels = tabulate_kernels(frame)
    return frame, kernels


def evolve(rho0, traj: Trajectory | None, config: SimConfig,
           frame: VariationalFrame | None = None, kernels: CorrelationKernels | None = None,
           *, out_stride: int = 1, stop_trace: float = 0.0, engine: str | None = None,
           chunk_steps: int = 8192, self_check: bool = False) -> DensityTimeSeries:
    """Evolve one trajectory on the configured time grid.

    ``out_stride`` stores every k-th step (node 0 is always included);
    ``stop_trace > 0`` stops once the trace falls below it, zero-filling the
    remaining nodes.  ``engine`` selects "exact" (rtn-only default) or "rk4";
    ``self_check=True`` repeats the run at half step and records the maximum
    population deviation in ``meta['self_check']``.
    """
    n = config.network.n_sites
    if rho0 is None:
        rho0 = np.zeros((n, n), dtype=complex)
        rho0[config.initial_site, config.initial_site] = 1.0
    rho0 = _check_rho0(rho0, n)

    if config.mode == "rtn-only":
        if engine in (None, "exact"):
            series = _evolve_rtn_exact(rho0, traj, config, out_stride, stop_trace)
        else:
            series = _evolve_rk4(rho0, traj, config, None, None, out_stride, stop_trace,
                                 chunk_steps)
    else:
        if frame is None or kernels is None:
            frame, kernels = prepare(config)
        if engine == "exact":
            raise EvolutionError("exact engine only applies to rtn-only mode")
        series = _evolve_rk4(rho0, traj, config, frame, kernels, out_stride, stop_trace,
                             chunk_steps)

    if self_check:
        fine = evolve(rho0, traj, config.with_(dt=config.dt / 2), frame, kernels,
                      out_stride=2 * out_stride, stop_trace=stop_trace, engine=engine,
                      chunk_steps=chunk_steps)
        k = min(len(series.times), len(fine.times))
        dev = np.abs(series.populations()[:k] - fine.populations()[:k]).max()
        series.meta["self_check"] = float(dev)
    return series


def _out_layout(n_steps: int, out_stride: int):
    out_global = np.arange(out_stride - 1, n_steps, out_stride, dtype=np.int64)
    return out_global


def _checks(series: DensityTimeSeries, kappa: float) -> None:
    defect = series.hermiticity_defect()
    if defect > _HERMITICITY_TOL:
        raise IntegratorError(f"hermiticity defect {defect:.3e} exceeds {_HERMITICITY_TOL}")
    tr = series.trace()
    if kappa == 0.0:
        if np.abs(tr - tr[0]).max() > _TRACE_TOL:
            raise IntegratorError(
                f"trace drift {np.abs(tr - tr[0]).max():.3e} at step {series.meta.get('dt')}; "
                "reduce the time step")
    else:
        # The sink drains at 2*kappa*rho_trap; the trace can grow slightly
        # while the (monitored, unenforced) trap population transiently dips
        # negative, which is a known second-order artifact.  Instability, by
        # contrast, blows the trace up exponentially, so a loose cumulative
        # bound is the robust detector.
        if tr.min() < -1e-6 or tr.max() > tr[0] + 0.02:
            raise IntegratorError(
                f"trace left [0, 1] materially (min {tr.min():.3e}, max {tr.max():.6f}); "
                "reduce the time step")


def _evolve_rk4(rho0, traj, config, frame, kernels, out_stride, stop_trace, chunk_steps):
    n = config.network.n_sites
    dt = config.dt
    n_steps = int(round(config.t_max / dt))
    if abs(n_steps * dt - config.t_max) > 1e-9 * max(1.0, config.t_max):
        raise EvolutionError(f"t_max={config.t_max} is not a multiple of dt={dt}")
    delta = 0.5 * dt
    n_pts = 2 * n_steps + 1

    h_of = _hamiltonian_builder(config, frame)
    static = _is_static(config, traj)
    prop = PiecewisePropagator(h_of, traj, config.t_max, static=static)
    u_grid = prop.grid(delta, n_pts)

    convolver = None
    if kernels is not None and config.mode != "rtn-only":
        convolver = _MemoryConvolver(kernels, u_grid, delta)

    kappa = config.network.trap_rate
    trap = config.network.trap_site

    out_global = _out_layout(n_steps, out_stride)
    n_out = len(out_global)
    sig_out = np.empty((n_out, n, n), dtype=complex)
    acc_out = np.empty((n_out, n), dtype=float)

    sigma = rho0.astype(complex).copy()
    pop_acc = np.zeros(n, dtype=float)
    written = 0
    steps_done = 0
    stopped = False
    for s0 in range(0, n_steps, chunk_steps):
        s1 = min(s0 + chunk_steps, n_steps)
        g0, g1 = 2 * s0, 2 * s1
        u_chunk = np.ascontiguousarray(u_grid[g0:g1 + 1])
        a4, m = _memory_rhs_tables(convolver, u_chunk, g0, g1, kappa, trap)
        mask = (out_global >= s0) & (out_global < s1)
        local_out = (out_global[mask] - s0).astype(np.int64)
        done, wrote, stopped = _engine.rk4_sigma_chunk(
            sigma, pop_acc, u_chunk, a4, m, dt, local_out, sig_out, acc_out, written,
            stop_trace)
        written += wrote
        steps_done = s0 + done
        if stopped:
            break

    times = np.concatenate(([0.0], (out_global + 1) * dt))
    rho = np.empty((n_out + 1, n, n), dtype=complex)
    integrals = np.empty((n_out + 1, n), dtype=float)
    rho[0] = rho0
    integrals[0] = 0.0
    if written < n_out:  # early stop: zero populations, frozen integrals
        sig_out[written:] = 0.0
        acc_out[written:] = pop_acc
    u_out = u_grid[2 * (out_global + 1)]
    rho[1:] = np.einsum("tab,tbc,tdc->tad", u_out, sig_out, u_out.conj())
    integrals[1:] = acc_out

    series = DensityTimeSeries(times=times, rho=rho, site_integrals=integrals,
                               kappa=kappa, trap_site=trap,
                               t_stop=(steps_done * dt if stopped else None),
                               meta={"engine": _engine.IMPLEMENTATION, "dt": dt,
                                     "stop_index": written if stopped else None})
    _checks(series, kappa)
    return series


def _evolve_rtn_exact(rho0, traj, config, out_stride, stop_trace):
    """Exact piecewise propagation for the noise-only model.

    Within each constant-noise segment the density matrix evolves as
    rho(t) = E rho E^dag with E = exp(-i H_eff t), H_eff = H - i kappa P;
    populations and their time integrals follow in closed form from the
    eigendecomposition of H_eff, so the trace identities hold to round-off
    at any horizon.
    """
    n = config.network.n_sites
    dt = config.dt
    n_steps = int(round(config.t_max / dt))
    if abs(n_steps * dt - config.t_max) > 1e-9 * max(1.0, config.t_max):
        raise EvolutionError(f"t_max={config.t_max} is not a multiple of dt={dt}")
    kappa = config.network.trap_rate
    trap = config.network.trap_site

    h_of = _hamiltonian_builder(config, None)
    segments = _segments(traj, config.t_max, _is_static(config, traj))
    eig = {}
    for _, _, alpha in segments:
        if alpha in eig:
            continue
        h_eff = h_of(alpha).astype(complex)
        if kappa > 0.0 and trap is not None:
            h_eff[trap, trap] -= 1j * kappa
        lam, vec = np.linalg.eig(h_eff)
        eig[alpha] = (lam, vec, np.linalg.inv(vec))

    out_global = _out_layout(n_steps, out_stride)
    times = np.concatenate(([0.0], (out_global + 1) * dt))
    n_nodes = len(times)
    rho = np.zeros((n_nodes, n, n), dtype=complex)
    integrals = np.zeros((n_nodes, n), dtype=float)
    rho[0] = rho0

    rho_seg = rho0.astype(complex)
    acc = np.zeros(n, dtype=float)
    node = 1
    t_stop = None
    for lo, hi, alpha in segments:
        lam, vec, vec_inv = eig[alpha]
        b = vec_inv @ rho_seg @ vec_inv.conj().T
        z = lam[:, None] - lam[None, :].conj()  # rho ~ exp(-i z tau)
        coef = np.einsum("nc,cd,nd->ncd", vec, b, vec.conj())  # site populations
        while node < n_nodes and times[node] <= hi + 1e-12:
            tau = times[node] - lo
            w = np.exp(-1j * z * tau)
            rho[node] = vec @ (b * w) @ vec.conj().T
            integrals[node] = acc + np.einsum("ncd,cd->n", coef, _int_exp(z, tau)).real
            if stop_trace > 0.0 and np.trace(rho[node]).real < stop_trace:
                t_stop = times[node]
                break
            node += 1
        if t_stop is not None:
            break
        tau = hi - lo
        acc += np.einsum("ncd,cd->n", coef, _int_exp(z, tau)).real
        rho_seg = vec @ (b * np.exp(-1j * z * tau)) @ vec.conj().T

    if t_stop is not None and node + 1 < n_nodes:
        integrals[node + 1:] = integrals[node]
        rho[node + 1:] = 0.0

    series = DensityTimeSeries(times=times, rho=rho, site_integrals=integrals,
                               kappa=kappa, trap_site=trap, t_stop=t_stop,
                               meta={"engine": "exact", "dt": dt,
                                     "stop_index": node if t_stop is not None else None})
    _checks(series, kappa)
    return series


def _int_exp(z: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise integral of exp(-i z u) over [0, tau], stable as z -> 0."""
    zt = z * tau
    small = np.abs(zt) < 1e-8
    safe = np.where(small, 1.0, z)
    out = (1.0 - np.exp(-1j * zt)) / (1j * safe)
    return np.where(small, tau * (1.0 - 0.5j * zt), out)
