# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fuzzy-layer kernels (float64 only).

Same signatures and semantics as ``fame.kernels._reference``.
"""

import numpy as np
from libc.math cimport exp
from libc.stdlib cimport malloc, free

NAME = "cython"


def sfls_forward(const double[:, ::1] z, const double[:, ::1] c, const double[:, ::1] sl,
                 const double[:, ::1] sr, const double[:, ::1] a, const double[:, ::1] a0,
                 double eps):
    cdef Py_ssize_t N = z.shape[0], D = z.shape[1], P = c.shape[1]
    cdef Py_ssize_t n, i, p
    cdef double zz, d, s, mu, num, den
    out = np.empty((N, D))
    cdef double[:, ::1] o = out
    with nogil:
        for n in range(N):
            for i in range(D):
                zz = z[n, i]
                num = 0.0
                den = 0.0
                for p in range(P):
                    d = zz - c[i, p]
                    s = sl[i, p] if d <= 0 else sr[i, p]
                    mu = exp(-(d * d) / (2.0 * s * s))
                    num += mu * (a[i, p] * zz + a0[i, p])
                    den += mu
                o[n, i] = num / (den + eps)
    return out


cdef inline double _spread(const double *y, const double *mu, Py_ssize_t P, Py_ssize_t p,
                           double den, double eps) noexcept nogil:
    """y[p] minus the weighted average, without cancellation against y[p]."""
    cdef Py_ssize_t q
    cdef double acc = eps * y[p]
    for q in range(P):
        acc += mu[q] * (y[p] - y[q])
    return acc / den


def sfls_backward(const double[:, ::1] z, const double[:, ::1] c, const double[:, ::1] sl,
                  const double[:, ::1] sr, const double[:, ::1] a, const double[:, ::1] a0,
                  double eps, const double[:, ::1] dout):
    cdef Py_ssize_t N = z.shape[0], D = z.shape[1], P = c.shape[1]
    cdef Py_ssize_t n, i, p
    cdef double zz, d, s, inv_s2, num, den, w, t, gy, gz
    gz_a = np.zeros((N, D))
    gc_a = np.zeros((D, P))
    gsl_a = np.zeros((D, P))
    gsr_a = np.zeros((D, P))
    ga_a = np.zeros((D, P))
    ga0_a = np.zeros((D, P))
    cdef double[:, ::1] g_z = gz_a
    cdef double[:, ::1] g_c = gc_a
    cdef double[:, ::1] g_sl = gsl_a
    cdef double[:, ::1] g_sr = gsr_a
    cdef double[:, ::1] g_a = ga_a
    cdef double[:, ::1] g_a0 = ga0_a
    cdef double *mu = <double *> malloc(P * sizeof(double))
    cdef double *y = <double *> malloc(P * sizeof(double))
    if mu == NULL or y == NULL:
        free(mu)
        free(y)
        raise MemoryError()
    try:
        with nogil:
            for n in range(N):
                for i in range(D):
                    zz = z[n, i]
                    num = 0.0
                    den = 0.0
                    for p in range(P):
                        d = zz - c[i, p]
                        s = sl[i, p] if d <= 0 else sr[i, p]
                        mu[p] = exp(-(d * d) / (2.0 * s * s))
                        y[p] = a[i, p] * zz + a0[i, p]
                        num += mu[p] * y[p]
                        den += mu[p]
                    den += eps
                    w = dout[n, i] / den
                    gz = 0.0
                    for p in range(P):
                        d = zz - c[i, p]
                        s = sl[i, p] if d <= 0 else sr[i, p]
                        inv_s2 = 1.0 / (s * s)
                        gy = w * mu[p]
                        t = w * _spread(y, mu, P, p, den, eps) * mu[p]
                        g_c[i, p] += t * d * inv_s2
                        if d <= 0:
                            g_sl[i, p] += t * d * d * inv_s2 / s
                        else:
                            g_sr[i, p] += t * d * d * inv_s2 / s
                        g_a[i, p] += gy * zz
                        g_a0[i, p] += gy
                        gz += gy * a[i, p] - t * d * inv_s2
                    g_z[n, i] = gz
    finally:
        free(mu)
        free(y)
    return gz_a, gc_a, gsl_a, gsr_a, ga_a, ga0_a


cdef Py_ssize_t _mfls_row(const double[:, ::1] u, const double[:, ::1] v, Py_ssize_t n,
                          const double[:, ::1] c, const double[:, ::1] sl, const double[:, ::1] sr,
                          const double[:, ::1] A, const double[::1] a0,
                          double *f, double *y) noexcept nogil:
    """Fill shifted firing strengths and consequents of row n; return the top rule."""
    cdef Py_ssize_t P = c.shape[0], da = c.shape[1], dc = A.shape[1]
    cdef Py_ssize_t p, k, top = 0
    cdef double d, s, acc
    for p in range(P):
        acc = 0.0
        for k in range(da):
            d = u[n, k] - c[p, k]
            s = sl[p, k] if d <= 0 else sr[p, k]
            acc += (d * d) / (s * s)
        f[p] = -0.5 * acc
        if f[p] > f[top]:
            top = p
        acc = a0[p]
        for k in range(dc):
            acc += A[p, k] * v[n, k]
        y[p] = acc
    acc = f[top]
    for p in range(P):
        f[p] = exp(f[p] - acc)
    return top


def mfls_forward(const double[:, ::1] u, const double[:, ::1] v, const double[:, ::1] c,
                 const double[:, ::1] sl, const double[:, ::1] sr, const double[:, ::1] A,
                 const double[::1] a0, double eps):
    cdef Py_ssize_t N = u.shape[0], P = c.shape[0]
    cdef Py_ssize_t n, p
    cdef double num, den
    out = np.empty(N)
    cdef double[::1] o = out
    cdef double *f = <double *> malloc(P * sizeof(double))
    cdef double *y = <double *> malloc(P * sizeof(double))
    if f == NULL or y == NULL:
        free(f)
        free(y)
        raise MemoryError()
    try:
        with nogil:
            for n in range(N):
                _mfls_row(u, v, n, c, sl, sr, A, a0, f, y)
                num = 0.0
                den = 0.0
                for p in range(P):
                    num += f[p] * y[p]
                    den += f[p]
                o[n] = num / (den + eps)
    finally:
        free(f)
        free(y)
    return out


def mfls_backward(const double[:, ::1] u, const double[:, ::1] v, const double[:, ::1] c,
                  const double[:, ::1] sl, const double[:, ::1] sr, const double[:, ::1] A,
                  const double[::1] a0, double eps, const double[::1] dout):
    cdef Py_ssize_t N = u.shape[0], P = c.shape[0], da = c.shape[1], dc = A.shape[1]
    cdef Py_ssize_t n, p, k, top
    cdef double den, w, t, gy, d, s, inv_s2
    gu_a = np.zeros((N, da))
    gv_a = np.zeros((N, dc))
    gc_a = np.zeros((P, da))
    gsl_a = np.zeros((P, da))
    gsr_a = np.zeros((P, da))
    gA_a = np.zeros((P, dc))
    ga0_a = np.zeros(P)
    cdef double[:, ::1] g_u = gu_a
    cdef double[:, ::1] g_v = gv_a
    cdef double[:, ::1] g_c = gc_a
    cdef double[:, ::1] g_sl = gsl_a
    cdef double[:, ::1] g_sr = gsr_a
    cdef double[:, ::1] g_A = gA_a
    cdef double[::1] g_a0 = ga0_a
    cdef double *f = <double *> malloc(P * sizeof(double))
    cdef double *y = <double *> malloc(P * sizeof(double))
    cdef double *tb = <double *> malloc(P * sizeof(double))
    if f == NULL or y == NULL or tb == NULL:
        free(f)
        free(y)
        free(tb)
        raise MemoryError()
    try:
        with nogil:
            for n in range(N):
                top = _mfls_row(u, v, n, c, sl, sr, A, a0, f, y)
                den = eps
                for p in range(P):
                    den += f[p]
                w = dout[n] / den
                # dL/dlog f; the top rule's shifted strength is pinned at 1
                t = 0.0
                for p in range(P):
                    if p != top:
                        tb[p] = w * _spread(y, f, P, p, den, eps) * f[p]
                        t += tb[p]
                tb[top] = -t
                for p in range(P):
                    gy = w * f[p]
                    t = tb[p]
                    g_a0[p] += gy
                    for k in range(dc):
                        g_A[p, k] += gy * v[n, k]
                        g_v[n, k] += gy * A[p, k]
                    for k in range(da):
                        d = u[n, k] - c[p, k]
                        s = sl[p, k] if d <= 0 else sr[p, k]
                        inv_s2 = 1.0 / (s * s)
                        g_c[p, k] += t * d * inv_s2
                        if d <= 0:
                            g_sl[p, k] += t * d * d * inv_s2 / s
                        else:
                            g_sr[p, k] += t * d * d * inv_s2 / s
                        g_u[n, k] -= t * d * inv_s2
    finally:
        free(f)
        free(y)
        free(tb)
    return gu_a, gv_a, gc_a, gsl_a, gsr_a, gA_a, ga0_a
