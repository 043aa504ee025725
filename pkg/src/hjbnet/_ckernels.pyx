# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; signatures mirror ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, copysign

cnp.import_array()


cdef inline void _act(double[::1] u, double[::1] t, double[::1] a, Py_ssize_t m) noexcept nogil:
    # t = tanh(u), a = log(e^u + e^-u), sharing one exponential
    cdef Py_ssize_t i
    cdef double ax, e
    for i in range(m):
        ax = fabs(u[i])
        e = exp(-2.0 * ax)
        a[i] = ax + log1p(e)
        t[i] = copysign((1.0 - e) / (1.0 + e), u[i])


def value_grad(const double[:, ::1] S, const double[::1] w, const double[:, ::1] K0,
               const double[:, ::1] K1, const double[::1] b0, const double[::1] b1,
               const double[:, ::1] A, const double[::1] b, const double[::1] c):
    cdef Py_ssize_t B = S.shape[0], D = S.shape[1], m = w.shape[0], G = A.shape[0]
    cdef Py_ssize_t n, i, j, k, g
    phi_a = np.empty(B)
    grad_a = np.empty((B, D))
    t0_a = np.empty((B, m))
    a0_a = np.empty((B, m))
    t1_a = np.empty((B, m))
    N_a = np.empty((B, m))
    z1_a = np.empty((B, m))
    AS_a = np.empty((B, G))
    cdef double[::1] phi = phi_a
    cdef double[:, ::1] grad = grad_a, t0 = t0_a, a0 = a0_a, t1 = t1_a
    cdef double[:, ::1] N = N_a, z1 = z1_a, AS = AS_a
    cdef double[::1] u = np.empty(m), sg = np.empty(m), y = np.empty(m)
    cdef double acc, yi, tz, val
    with nogil:
        for n in range(B):
            for i in range(m):
                acc = b0[i]
                for k in range(D):
                    acc = acc + K0[i, k] * S[n, k]
                u[i] = acc
            _act(u, t0[n], a0[n], m)
            for i in range(m):
                acc = b1[i]
                for j in range(m):
                    acc = acc + K1[i, j] * a0[n, j]
                u[i] = acc
            _act(u, t1[n], sg, m)
            val = c[0]
            for i in range(m):
                N[n, i] = a0[n, i] + sg[i]
                y[i] = t1[n, i] * w[i]
                z1[n, i] = w[i]
                val = val + w[i] * N[n, i]
            for i in range(m):
                yi = y[i]
                for j in range(m):
                    z1[n, j] = z1[n, j] + K1[i, j] * yi
            for k in range(D):
                grad[n, k] = b[k]
                val = val + b[k] * S[n, k]
            for g in range(G):
                acc = 0.0
                for k in range(D):
                    acc = acc + A[g, k] * S[n, k]
                AS[n, g] = acc
                val = val + 0.5 * acc * acc
                for k in range(D):
                    grad[n, k] = grad[n, k] + A[g, k] * acc
            for i in range(m):
                y[i] = t0[n, i] * z1[n, i]
            for k in range(D):
                acc = grad[n, k]
                for i in range(m):
                    acc = acc + K0[i, k] * y[i]
                grad[n, k] = acc
            phi[n] = val
    return phi_a, grad_a, (t0_a, a0_a, t1_a, N_a, z1_a, AS_a)


def value_grad_vjp(const double[:, ::1] S, const double[::1] w, const double[:, ::1] K0,
                   const double[:, ::1] K1, const double[:, ::1] A, const double[::1] b,
                   cache, vval, const double[:, ::1] V,
                   double[::1] gw, double[:, ::1] gK0, double[:, ::1] gK1,
                   double[::1] gb0, double[::1] gb1, double[:, ::1] gA,
                   double[::1] gb, double[::1] gc):
    cdef Py_ssize_t B = S.shape[0], D = S.shape[1], m = w.shape[0], G = A.shape[0]
    cdef Py_ssize_t n, i, j, k, g
    t0_a, a0_a, t1_a, N_a, z1_a, AS_a = cache
    cdef const double[:, ::1] t0 = t0_a, a0 = a0_a, t1 = t1_a, N = N_a, z1 = z1_a, AS = AS_a
    cdef bint has_v = vval is not None
    cdef const double[::1] vv
    if has_v:
        vv = np.ascontiguousarray(vval, dtype=np.float64)
    else:
        vv = np.zeros(B)
    dS_a = np.zeros((B, D))
    cdef double[:, ::1] dS = dS_a
    cdef double[::1] AV = np.empty(G), tz = np.empty(m), dz1 = np.empty(m)
    cdef double[::1] y = np.empty(m), du1 = np.empty(m), du0 = np.empty(m)
    cdef double acc, vn, dg0, dyi, ti, tj, yi, dui, dzj
    with nogil:
        for n in range(B):
            vn = vv[n]
            for g in range(G):
                acc = 0.0
                for k in range(D):
                    acc = acc + A[g, k] * V[n, k]
                AV[g] = acc
                for k in range(D):
                    dS[n, k] = dS[n, k] + A[g, k] * (acc + vn * AS[n, g])
                    gA[g, k] = gA[g, k] + AS[n, g] * (V[n, k] + vn * S[n, k]) + acc * S[n, k]
            for k in range(D):
                dS[n, k] = dS[n, k] + vn * b[k]
                gb[k] = gb[k] + V[n, k] + vn * S[n, k]
            gc[0] = gc[0] + vn
            for i in range(m):
                acc = 0.0
                for k in range(D):
                    acc = acc + K0[i, k] * V[n, k]
                dg0 = acc
                ti = t0[n, i]
                tz[i] = ti * z1[n, i]
                dz1[i] = dg0 * ti
                # keep dt0 in du0 for now; the residual path is added below
                du0[i] = dg0 * z1[n, i] * (1.0 - ti * ti)
                y[i] = t1[n, i] * w[i]
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc = acc + K1[i, j] * dz1[j]
                dyi = acc
                ti = t1[n, i]
                gw[i] = gw[i] + dz1[i] + dyi * ti + vn * N[n, i]
                du1[i] = dyi * w[i] * (1.0 - ti * ti) + vn * w[i] * ti
                gb1[i] = gb1[i] + du1[i]
            for i in range(m):
                yi = y[i]
                dui = du1[i]
                for j in range(m):
                    gK1[i, j] = gK1[i, j] + yi * dz1[j] + dui * a0[n, j]
            for j in range(m):
                y[j] = vn * w[j]
            for i in range(m):
                dui = du1[i]
                for j in range(m):
                    y[j] = y[j] + K1[i, j] * dui
            for j in range(m):
                du0[j] = du0[j] + y[j] * t0[n, j]
            for i in range(m):
                gb0[i] = gb0[i] + du0[i]
                for k in range(D):
                    gK0[i, k] = gK0[i, k] + tz[i] * V[n, k] + du0[i] * S[n, k]
            for k in range(D):
                acc = dS[n, k]
                for i in range(m):
                    acc = acc + K0[i, k] * du0[i]
                dS[n, k] = acc
    return dS_a


def interaction(const double[:, ::1] Z, Py_ssize_t n, Py_ssize_t q, double r):
    cdef Py_ssize_t B = Z.shape[0], s, i, j, k
    W_a = np.zeros(B)
    dW_a = np.zeros((B, n * q))
    wmax_a = np.zeros(B)
    cdef double[::1] W = W_a, wmax = wmax_a
    cdef double[:, ::1] dW = dW_a
    cdef double cut = 4.0 * r * r, inv = 1.0 / (2.0 * r * r)
    cdef double d2, diff, val, coef
    with nogil:
        for s in range(B):
            for i in range(n - 1):
                for j in range(i + 1, n):
                    d2 = 0.0
                    for k in range(q):
                        diff = Z[s, i * q + k] - Z[s, j * q + k]
                        d2 = d2 + diff * diff
                    if d2 < cut:
                        val = exp(-d2 * inv)
                        W[s] = W[s] + 2.0 * val
                        if val > wmax[s]:
                            wmax[s] = val
                        coef = -4.0 * inv * val
                        for k in range(q):
                            diff = coef * (Z[s, i * q + k] - Z[s, j * q + k])
                            dW[s, i * q + k] = dW[s, i * q + k] + diff
                            dW[s, j * q + k] = dW[s, j * q + k] - diff
    return W_a, dW_a, wmax_a


def gaussian_sum(const double[:, ::1] P, const double[:, ::1] means, const double[::1] var):
    cdef Py_ssize_t Np = P.shape[0], q = P.shape[1], K = means.shape[0], s, j, k
    val_a = np.zeros(Np)
    grad_a = np.zeros((Np, q))
    cdef double[::1] val = val_a
    cdef double[:, ::1] grad = grad_a
    norm_a = np.array([1.0 / np.sqrt((2.0 * np.pi * v) ** q) for v in var])
    cdef double[::1] norm = norm_a
    cdef double d2, diff, eta, s2
    with nogil:
        for s in range(Np):
            for j in range(K):
                s2 = var[j]
                d2 = 0.0
                for k in range(q):
                    diff = P[s, k] - means[j, k]
                    d2 = d2 + diff * diff
                eta = exp(-0.5 * d2 / s2) * norm[j]
                val[s] = val[s] + eta
                for k in range(q):
                    grad[s, k] = grad[s, k] - eta / s2 * (P[s, k] - means[j, k])
    return val_a, grad_a
