# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled windowed mixture-GLR scan.

Same contract as ``_scan_py.scan_step``. Candidates are visited in
increasing k with the window suffix shrunk by one value per step, so the
whole scan costs O(K * J) with no temporaries.
"""

import numpy as np

from libc.math cimport INFINITY, exp, expm1, log, log1p


def scan_step(
    double[::1] train_sum,
    double[::1] train_sumsq,
    Py_ssize_t m,
    double[::1] run_sum,
    double[::1] run_sumsq,
    double[:, ::1] window_vals,
    Py_ssize_t t,
    Py_ssize_t kmin,
    double p0,
    double[::1] cvals,
    double var_floor,
):
    cdef Py_ssize_t L = window_vals.shape[0]
    cdef Py_ssize_t J = window_vals.shape[1]
    cdef double nT = <double> (m + t)

    work = np.empty((5, J))
    cdef double[:, ::1] w5 = work
    cdef double[::1] tot_sum = w5[0]
    cdef double[::1] tot_ssq = w5[1]
    cdef double[::1] s2 = w5[2]
    cdef double[::1] q2 = w5[3]
    cdef double[::1] log_var_t = w5[4]

    cdef Py_ssize_t i, j, k, row
    cdef double v, var_t
    cdef int clamped = 0

    for j in range(J):
        tot_sum[j] = train_sum[j] + run_sum[j]
        tot_ssq[j] = train_sumsq[j] + run_sumsq[j]
        s2[j] = 0.0
        q2[j] = 0.0
    for i in range(L):
        for j in range(J):
            v = window_vals[i, j]
            s2[j] += v
            q2[j] += v * v
    for j in range(J):
        var_t = (tot_ssq[j] - tot_sum[j] * tot_sum[j] / nT) / nT
        if var_t < var_floor:
            var_t = var_floor
            clamped += 1
        log_var_t[j] = log(var_t)

    cdef double best = -INFINITY
    cdef Py_ssize_t best_k = -1
    cdef double n1, n2, c, lam, sum1, ssq1, var_1, var_2, diff, llr, x
    for k in range(kmin, t - 1):
        n2 = <double> (t - k)
        n1 = nT - n2
        c = cvals[k - kmin]
        lam = 0.0
        for j in range(J):
            sum1 = tot_sum[j] - s2[j]
            ssq1 = tot_ssq[j] - q2[j]
            var_1 = (ssq1 - sum1 * sum1 / n1) / n1
            if var_1 < var_floor:
                var_1 = var_floor
                clamped += 1
            if t - k == 2:
                # exact two-point form avoids the prefix cancellation
                diff = window_vals[L - 1, j] - window_vals[L - 2, j]
                var_2 = 0.25 * diff * diff
            else:
                var_2 = (q2[j] - s2[j] * s2[j] / n2) / n2
            if var_2 < var_floor:
                var_2 = var_floor
                clamped += 1
            llr = 0.5 * (nT * log_var_t[j] - n1 * log(var_1) - n2 * log(var_2))
            x = llr / c
            if x > 0.0:
                lam += x + log(p0 + (1.0 - p0) * exp(-x))
            else:
                lam += log1p(p0 * expm1(x))
        if lam > best:
            best = lam
            best_k = k
        if k < t - 2:
            row = k - kmin  # drop time k+1, the oldest value still in play
            for j in range(J):
                v = window_vals[row, j]
                s2[j] -= v
                q2[j] -= v * v
    return best, <int> best_k, clamped
