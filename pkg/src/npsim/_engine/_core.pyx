# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled propagation core: RK4 on the interaction-picture density matrix.

Mirrors ``_fallback.rk4_sigma_chunk``; see that module for the contract.
"""
import numpy as np

ctypedef double complex cplx

IMPLEMENTATION = "cython"


cdef void _rhs(cplx[:, :] sigma, cplx[:, :, :] U, cplx[:, :, :, :, :] A,
               cplx[:, :, :] M, Py_ssize_t g, bint have_A, bint have_M,
               cplx[:, :] P, cplx[:, :] G, cplx[:, :] out, int N) noexcept:
    cdef int a, b, c, n, m
    cdef cplx acc, w
    for a in range(N):
        for c in range(N):
            acc = 0
            if have_M:
                for b in range(N):
                    acc = acc + M[g, a, b] * sigma[b, c]
            G[a, c] = acc
    if have_A:
        # P[:, n] = sigma @ conj(u_n);  G -= sum_nm (A_(nm) P[:, n]) outer u_m
        for b in range(N):
            for n in range(N):
                acc = 0
                for c in range(N):
                    acc = acc + sigma[b, c] * U[g, n, c].conjugate()
                P[b, n] = acc
        for n in range(N):
            for m in range(N):
                for a in range(N):
                    w = 0
                    for b in range(N):
                        w = w + A[g, n, m, a, b] * P[b, n]
                    for c in range(N):
                        G[a, c] = G[a, c] - w * U[g, m, c]
    for a in range(N):
        for c in range(N):
            out[a, c] = -(G[a, c] + G[c, a].conjugate())


cdef void _stage_pops(cplx[:, :] sigma, cplx[:, :, :] U, Py_ssize_t g,
                      double[:] pops, int N) noexcept:
    cdef int n, a, b
    cdef cplx acc
    for n in range(N):
        acc = 0
        for a in range(N):
            for b in range(N):
                acc = acc + U[g, n, a] * sigma[a, b] * U[g, n, b].conjugate()
        pops[n] = acc.real


def rk4_sigma_chunk(cplx[:, :] sigma, double[:] pop_acc, cplx[:, :, :] U, A4_obj, M_obj,
                    double h, long[:] out_steps, cplx[:, :, :] sig_out,
                    double[:, :] acc_out, long out_base, double stop_trace):
    cdef int N = sigma.shape[0]
    cdef Py_ssize_t n_steps = (U.shape[0] - 1) // 2
    cdef bint have_A = A4_obj is not None
    cdef bint have_M = M_obj is not None
    cdef cplx[:, :, :, :, :] A = np.zeros((1, N, N, N, N), dtype=np.complex128) \
        if not have_A else A4_obj
    cdef cplx[:, :, :] M = np.zeros((1, N, N), dtype=np.complex128) \
        if not have_M else M_obj

    scratch = np.zeros((7, N, N), dtype=np.complex128)
    cdef cplx[:, :] P = scratch[0]
    cdef cplx[:, :] G = scratch[1]
    cdef cplx[:, :] k1 = scratch[2]
    cdef cplx[:, :] k2 = scratch[3]
    cdef cplx[:, :] k3 = scratch[4]
    cdef cplx[:, :] k4 = scratch[5]
    cdef cplx[:, :] stage = scratch[6]
    pscratch = np.zeros((4, N), dtype=np.float64)
    cdef double[:] p1 = pscratch[0]
    cdef double[:] p2 = pscratch[1]
    cdef double[:] p3 = pscratch[2]
    cdef double[:] p4 = pscratch[3]

    cdef Py_ssize_t s, g, written = 0, next_out = 0, n_out = out_steps.shape[0]
    cdef int a, b
    cdef double half = 0.5 * h, sixth = h / 6.0, tr
    cdef bint stopped = False

    for s in range(n_steps):
        g = 2 * s
        _rhs(sigma, U, A, M, g, have_A, have_M, P, G, k1, N)
        _stage_pops(sigma, U, g, p1, N)
        for a in range(N):
            for b in range(N):
                stage[a, b] = sigma[a, b] + half * k1[a, b]
        _rhs(stage, U, A, M, g + 1, have_A, have_M, P, G, k2, N)
        _stage_pops(stage, U, g + 1, p2, N)
        for a in range(N):
            for b in range(N):
                stage[a, b] = sigma[a, b] + half * k2[a, b]
        _rhs(stage, U, A, M, g + 1, have_A, have_M, P, G, k3, N)
        _stage_pops(stage, U, g + 1, p3, N)
        for a in range(N):
            for b in range(N):
                stage[a, b] = sigma[a, b] + h * k3[a, b]
        _rhs(stage, U, A, M, g + 2, have_A, have_M, P, G, k4, N)
        _stage_pops(stage, U, g + 2, p4, N)
        for a in range(N):
            for b in range(N):
                sigma[a, b] = sigma[a, b] + sixth * (k1[a, b] + 2.0 * (k2[a, b] + k3[a, b]) + k4[a, b])
        for a in range(N):
            pop_acc[a] = pop_acc[a] + sixth * (p1[a] + 2.0 * (p2[a] + p3[a]) + p4[a])
        if next_out < n_out and out_steps[next_out] == s:
            for a in range(N):
                for b in range(N):
                    sig_out[out_base + written, a, b] = sigma[a, b]
                acc_out[out_base + written, a] = pop_acc[a]
            written += 1
            next_out += 1
        if stop_trace > 0.0:
            tr = 0.0
            for a in range(N):
                tr += sigma[a, a].real
            if tr < stop_trace:
                return s + 1, written, True
    return n_steps, written, stopped
