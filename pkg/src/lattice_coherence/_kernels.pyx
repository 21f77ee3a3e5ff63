# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: batched small Lyapunov solves and Euler-Maruyama stepping."""
import numpy as np

from libc.math cimport NAN, hypot


cdef inline double cabs(double complex z) noexcept nogil:
    return hypot(z.real, z.imag)


cdef int _solve_inplace(double complex[:, ::1] M, double complex[::1] x, Py_ssize_t n) noexcept nogil:
    """Gaussian elimination with partial pivoting; returns 0 on success."""
    cdef Py_ssize_t i, j, r, piv
    cdef double best, mag
    cdef double complex f, tmp
    for i in range(n):
        piv = i
        best = cabs(M[i, i])
        for r in range(i + 1, n):
            mag = cabs(M[r, i])
            if mag > best:
                best = mag
                piv = r
        if best == 0.0:
            return 1
        if piv != i:
            for j in range(n):
                tmp = M[i, j]
                M[i, j] = M[piv, j]
                M[piv, j] = tmp
            tmp = x[i]
            x[i] = x[piv]
            x[piv] = tmp
        for r in range(i + 1, n):
            f = M[r, i] / M[i, i]
            if f != 0:
                for j in range(i, n):
                    M[r, j] = M[r, j] - f * M[i, j]
                x[r] = x[r] - f * x[i]
    for i in range(n - 1, -1, -1):
        tmp = x[i]
        for j in range(i + 1, n):
            tmp = tmp - M[i, j] * x[j]
        x[i] = tmp / M[i, i]
    return 0


def lyap_density_batch(a_hat, Py_ssize_t pos, Py_ssize_t dist):
    """Re P[dist, dist] for each stacked symbol, where A^H P + P A = -e_pos e_pos^T."""
    cdef double complex[:, :, ::1] a = np.ascontiguousarray(a_hat, dtype=np.complex128)
    cdef Py_ssize_t K = a.shape[0], m = a.shape[1], mm = m * m
    out_arr = np.empty(K)
    cdef double[::1] out = out_arr
    cdef double complex[:, ::1] M = np.empty((mm, mm), dtype=np.complex128)
    cdef double complex[::1] x = np.empty(mm, dtype=np.complex128)
    cdef Py_ssize_t k, i, j, r, s
    with nogil:
        for k in range(K):
            for i in range(mm):
                x[i] = 0
                for j in range(mm):
                    M[i, j] = 0
            # row j*m + i, column s*m + r, as in the numpy fallback
            for j in range(m):
                for i in range(m):
                    for r in range(m):
                        M[j * m + i, j * m + r] = M[j * m + i, j * m + r] + a[k, r, i].conjugate()
                    for s in range(m):
                        M[j * m + i, s * m + i] = M[j * m + i, s * m + i] + a[k, s, j]
            x[pos * m + pos] = -1.0
            if _solve_inplace(M, x, mm) == 0:
                out[k] = x[dist * m + dist].real
            else:
                out[k] = NAN
    return out_arr


def em_chunk(
    const int[::1] indptr,
    const int[::1] indices,
    const double[::1] data,
    double[:, ::1] X,
    const double[:, :, ::1] noise,
    const Py_ssize_t[::1] noise_rows,
    const Py_ssize_t[::1] pos_rows,
    double dt,
    double scale,
    Py_ssize_t step0,
    Py_ssize_t acc_start,
    double[:, ::1] ysum,
    double[:, ::1] ysq,
    double[:, ::1] rec,
    Py_ssize_t rec_every,
):
    """Advance every trajectory in X (T, n) by noise.shape[0] Euler-Maruyama steps."""
    cdef Py_ssize_t T = X.shape[0], n = X.shape[1], S = noise.shape[0]
    cdef Py_ssize_t nk = noise_rows.shape[0], p = pos_rows.shape[0], R = rec.shape[0]
    cdef Py_ssize_t t, s, i, jj, step, kk
    cdef double acc, mean, y
    drift_arr = np.empty(n)
    cdef double[::1] drift = drift_arr
    with nogil:
        for t in range(T):
            for s in range(S):
                step = step0 + s
                for i in range(n):
                    acc = 0.0
                    for jj in range(indptr[i], indptr[i + 1]):
                        acc = acc + data[jj] * X[t, indices[jj]]
                    drift[i] = acc
                for i in range(n):
                    X[t, i] = X[t, i] + dt * drift[i]
                for i in range(nk):
                    X[t, noise_rows[i]] = X[t, noise_rows[i]] + scale * noise[s, t, i]
                if step >= acc_start:
                    mean = 0.0
                    for i in range(p):
                        mean = mean + X[t, pos_rows[i]]
                    mean = mean / p
                    kk = step - acc_start
                    for i in range(p):
                        y = X[t, pos_rows[i]] - mean
                        ysum[t, i] = ysum[t, i] + y
                        ysq[t, i] = ysq[t, i] + y * y
                        if t == 0 and rec_every > 0 and kk % rec_every == 0 and kk // rec_every < R:
                            rec[kk // rec_every, i] = y
