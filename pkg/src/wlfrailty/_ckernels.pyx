# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled risk-set accumulation for the Cox partial likelihood.

One reverse sweep over subjects sorted by ascending time builds the suffix
sums S0 = sum w, S1 = sum w x, S2 = sum w x x' and reads them off at the
first index of each distinct event time's risk set.
"""

import numpy as np
from libc.math cimport log


def risk_set_sums(const double[::1] w, const double[:, ::1] X,
                  const Py_ssize_t[::1] starts, const double[::1] d,
                  bint hessian=True):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t q = starts.shape[0]
    cdef Py_ssize_t i = n - 1, k, a, b
    cdef double s0 = 0.0, wi, dk, logterm = 0.0
    cdef double[::1] s1 = np.zeros(p)
    cdef double[:, ::1] s2 = np.zeros((p, p))
    cdef double[::1] mean = np.zeros(p)
    out_S0 = np.empty(q)
    out_grad = np.zeros(p)
    out_info = np.zeros((p, p))
    cdef double[::1] S0 = out_S0
    cdef double[::1] grad = out_grad
    cdef double[:, ::1] info = out_info

    k = q - 1
    while k >= 0:
        while i >= starts[k]:
            wi = w[i]
            s0 += wi
            for a in range(p):
                s1[a] += wi * X[i, a]
                if hessian:
                    for b in range(a + 1):
                        s2[a, b] += wi * X[i, a] * X[i, b]
            i -= 1
        S0[k] = s0
        dk = d[k]
        logterm += dk * log(s0)
        for a in range(p):
            mean[a] = s1[a] / s0
            grad[a] += dk * mean[a]
        if hessian:
            for a in range(p):
                for b in range(a + 1):
                    info[a, b] += dk * (s2[a, b] / s0 - mean[a] * mean[b])
        k -= 1

    if hessian:
        for a in range(p):
            for b in range(a):
                info[b, a] = info[a, b]
    return logterm, out_S0, out_grad, out_info
