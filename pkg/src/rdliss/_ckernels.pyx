# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: IMEX time stepping and nearest-point distance queries.

The pure numpy twin lives in ``_pykernels``; ``_backend`` picks one at import.
Both expose the same two functions with the same contracts.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, isfinite

cnp.import_array()


def imex_run(const double[:, ::1] y0, double dt, double inv_h2, const double[::1] cprime,
             const double[::1] dinv, const double[::1] coeffs, const double[::1] hvec,
             const double[:, ::1] u_steps, Py_ssize_t record_every, double blowup):
    """Advance a batch of states by ``u_steps.shape[1]`` IMEX-Euler steps.

    ``coeffs`` are ascending polynomial coefficients of the reaction term.
    Returns ``(records, fail)`` where ``records[m, j]`` is member ``m`` after
    ``j * record_every`` steps and ``fail[m]`` is the first failing step index
    (``-1`` when the member stayed finite and below ``blowup`` in norm).
    """
    cdef Py_ssize_t M = y0.shape[0], n = y0.shape[1]
    cdef Py_ssize_t nsteps = u_steps.shape[1]
    cdef Py_ssize_t nrec = nsteps // record_every + 1
    cdef Py_ssize_t deg = coeffs.shape[0] - 1
    cdef Py_ssize_t m, k, i, j, r
    cdef double a = -dt * inv_h2
    cdef double uk, yi, gv, ssq, w
    cdef double h = 1.0 / sqrt(inv_h2)
    cdef double lim2 = blowup * blowup
    out = np.empty((M, nrec, n), dtype=np.float64)
    cdef double[:, :, ::1] rec = out
    fail_arr = np.full(M, -1, dtype=np.int64)
    cdef long long[::1] fail = fail_arr
    cdef double[::1] y = np.empty(n, dtype=np.float64)
    cdef double[::1] d = np.empty(n, dtype=np.float64)

    with nogil:
        for m in range(M):
            for i in range(n):
                y[i] = y0[m, i]
                rec[m, 0, i] = y[i]
            r = 1
            for k in range(nsteps):
                uk = u_steps[m, k]
                # right-hand side with explicit reaction and forcing
                for i in range(n):
                    yi = y[i]
                    gv = coeffs[deg]
                    for j in range(deg - 1, -1, -1):
                        gv = gv * yi + coeffs[j]
                    d[i] = yi + dt * (gv + hvec[i] * uk)
                # forward elimination, back substitution
                d[0] = d[0] * dinv[0]
                for i in range(1, n):
                    d[i] = (d[i] - a * d[i - 1]) * dinv[i]
                y[n - 1] = d[n - 1]
                for i in range(n - 2, -1, -1):
                    y[i] = d[i] - cprime[i] * y[i + 1]
                ssq = 0.0
                for i in range(n):
                    ssq += y[i] * y[i]
                w = ssq * h
                if not isfinite(w) or w > lim2:
                    fail[m] = k
                    for j in range(r, nrec):
                        for i in range(n):
                            rec[m, j, i] = y[i]
                    break
                if (k + 1) % record_every == 0:
                    for i in range(n):
                        rec[m, r, i] = y[i]
                    r += 1
    return out, fail_arr


def nearest(const double[:, ::1] cloud, const double[:, ::1] queries, Py_ssize_t start):
    """Nearest cloud row for each query row, Euclidean metric.

    Rows are expected in an orthonormal spectral basis ordered by energy so
    that partial sums grow fast and the scan exits early. Each query starts
    from the previous query's nearest point, which is a good bound when the
    queries follow a trajectory.
    """
    cdef Py_ssize_t N = cloud.shape[0], Q = queries.shape[0], n = cloud.shape[1]
    cdef Py_ssize_t q, p, i, best
    cdef double acc, best2, diff
    dist_arr = np.empty(Q, dtype=np.float64)
    idx_arr = np.empty(Q, dtype=np.int64)
    cdef double[::1] dist = dist_arr
    cdef long long[::1] idx = idx_arr
    best = start if 0 <= start < N else 0

    with nogil:
        for q in range(Q):
            best2 = 0.0
            for i in range(n):
                diff = queries[q, i] - cloud[best, i]
                best2 += diff * diff
            for p in range(N):
                if p == best:
                    continue
                acc = 0.0
                for i in range(n):
                    diff = queries[q, i] - cloud[p, i]
                    acc += diff * diff
                    if acc >= best2:
                        break
                if acc < best2:
                    best2 = acc
                    best = p
            dist[q] = sqrt(best2)
            idx[q] = best
    return dist_arr, idx_arr
