# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the numerical inner loops.

Must stay numerically interchangeable with ``_pykernels``; both are
exercised against each other in ``tests/test_kernels.py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, log1p, INFINITY

cnp.import_array()

# log-ratios in (log 1/2, log 2) are recomputed through log1p for relative precision
cdef double LOG_HALF = -0.6931471805599453
cdef double LOG_TWO = 0.6931471805599453
cdef double EXP_MAX = 700.0


cdef _mixture_lse(x, shifts, log_weights, double sigma, bint centered):
    cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const double[::1] s = np.ascontiguousarray(shifts, dtype=np.float64)
    cdef const double[::1] lw = np.ascontiguousarray(log_weights, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = s.shape[0], i, j
    cdef double inv_var = 1.0 / (sigma * sigma)
    cdef double xi, t, m, acc, d, a, small
    cdef bint finite_a
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef const double[::1] w = np.exp(lw)
    # scratch holds the exponents for one point so they are computed once
    cdef double[::1] e = np.empty(k, dtype=np.float64)
    for i in range(n):
        xi = xv[i]
        m = -INFINITY
        for j in range(k):
            if centered:
                d = xi - s[j]
                t = lw[j] - 0.5 * d * d * inv_var
            else:
                t = lw[j] + s[j] * (xi - 0.5 * s[j]) * inv_var
            e[j] = t
            if t > m:
                m = t
        if m == -INFINITY:
            ov[i] = m
            continue
        acc = 0.0
        for j in range(k):
            acc += exp(e[j] - m)
        t = m + log(acc)
        ov[i] = t
        if centered or not (LOG_HALF < t < LOG_TWO):
            continue
        # recompute a ratio near 1 as log1p(sum_j w_j expm1(a_j))
        small = 0.0
        finite_a = True
        for j in range(k):
            a = s[j] * (xi - 0.5 * s[j]) * inv_var
            if a > EXP_MAX:
                finite_a = False
                break
            small += w[j] * expm1(a)
        if finite_a and -0.5 < small < 1.0:
            ov[i] = log1p(small)
    return out.reshape(np.shape(x))


def mixture_log_ratio(x, shifts, log_weights, double sigma):
    return _mixture_lse(x, shifts, log_weights, sigma, False)


def mixture_log_density(x, shifts, log_weights, double sigma):
    return _mixture_lse(x, shifts, log_weights, sigma, True)


def poisson_binomial_pmf(probs):
    cdef const double[::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t k = p.shape[0], i, j
    out = np.zeros(k + 1, dtype=np.float64)
    cdef double[::1] f = out
    cdef double q, r
    f[0] = 1.0
    for i in range(k):
        r = p[i]
        q = 1.0 - r
        # in-place update from the top so f[j-1] is still the old value
        f[i + 1] = f[i] * r
        for j in range(i, 0, -1):
            f[j] = f[j] * q + f[j - 1] * r
        f[0] = f[0] * q
    return out
