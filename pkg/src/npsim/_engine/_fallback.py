"""Pure-NumPy propagation core (fallback when the compiled one is absent).

Same contract as ``_core``: fixed-step RK4 on the interaction-picture
density matrix sigma(t) = U(t)^dag rho(t) U(t), where all memory-integral
information enters through precomputed per-stage tables.

Grid layout: a chunk of ``n_steps`` RK4 steps of size ``h`` uses a stage
grid of ``2 * n_steps + 1`` points spaced ``h/2`` (stages of step s are the
points 2s, 2s+1, 2s+2).  Tables indexed by stage-grid point:

- ``U``  : propagator of the piecewise-constant system Hamiltonian,
- ``A4`` : memory operators A_(nm) as a (pts, N, N, N, N) array, or None,
- ``M``  : sum_i Q_i A_i + kappa * Q_trap, with Q_i(t) = U^dag S_i U.

The equation advanced is

    dsigma/dt = -(G + G^dag),   G = M sigma - sum_i A_i sigma Q_i,

which is the trap anticommutator plus the second-order memory dissipator;
site populations (U sigma U^dag)_nn are accumulated through the same RK4
stages so trace bookkeeping is exact at the discrete level.
"""
from __future__ import annotations

import numpy as np

IMPLEMENTATION = "numpy"


def _rhs(sigma: np.ndarray, U_g: np.ndarray, A_g, M_g) -> np.ndarray:
    if M_g is None:
        return np.zeros_like(sigma)
    G = M_g @ sigma
    if A_g is not None:
        # sum over pairs (n, m): A_(nm) sigma conj(u_n) x u_m
        P = sigma @ U_g.conj().T
        G = G - np.einsum("nmab,bn,mc->ac", A_g, P, U_g)
    return -(G + G.conj().T)


def _stage_pops(sigma: np.ndarray, U_g: np.ndarray) -> np.ndarray:
    return np.einsum("na,ab,nb->n", U_g, sigma, U_g.conj()).real


def rk4_sigma_chunk(sigma, pop_acc, U, A4, M, h, out_steps, sig_out, acc_out, out_base,
                    stop_trace):
    """Advance ``sigma`` through one chunk; see module docstring.

    Returns ``(steps_done, n_written, stopped)``; buffers ``sig_out`` and
    ``acc_out`` are filled from row ``out_base`` for every local step index
    listed in ``out_steps`` (stored after the step completes).
    """
    n_steps = (U.shape[0] - 1) // 2
    next_out = 0
    written = 0
    stopped = False
    half = 0.5 * h
    sixth = h / 6.0
    for s in range(n_steps):
        g = 2 * s
        a0 = A4[g] if A4 is not None else None
        a1 = A4[g + 1] if A4 is not None else None
        a2 = A4[g + 2] if A4 is not None else None
        k1 = _rhs(sigma, U[g], a0, M[g] if M is not None else None)
        p1 = _stage_pops(sigma, U[g])
        s2 = sigma + half * k1
        k2 = _rhs(s2, U[g + 1], a1, M[g + 1] if M is not None else None)
        p2 = _stage_pops(s2, U[g + 1])
        s3 = sigma + half * k2
        k3 = _rhs(s3, U[g + 1], a1, M[g + 1] if M is not None else None)
        p3 = _stage_pops(s3, U[g + 1])
        s4 = sigma + h * k3
        k4 = _rhs(s4, U[g + 2], a2, M[g + 2] if M is not None else None)
        p4 = _stage_pops(s4, U[g + 2])
        sigma += sixth * (k1 + 2.0 * (k2 + k3) + k4)
        pop_acc += sixth * (p1 + 2.0 * (p2 + p3) + p4)
        if next_out < len(out_steps) and out_steps[next_out] == s:
            sig_out[out_base + written] = sigma
            acc_out[out_base + written] = pop_acc
            written += 1
            next_out += 1
        if stop_trace > 0.0 and np.trace(sigma).real < stop_trace:
            return s + 1, written, True
    return n_steps, written, stopped
