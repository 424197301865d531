# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels for the conditional-Gaussian filter recursion.

Small dense matrices only (latent dims up to a few hundred); plain C loops
beat BLAS-call overhead in this regime and keep per-step timing dominated
by the O(d_v^3) arithmetic itself.
"""

import numpy as np

from .errors import NumericalError

cimport cython
from libc.math cimport sqrt


cdef int _cholesky(double[:, ::1] a, int n) noexcept nogil:
    """In-place lower Cholesky of a (upper left untouched garbage).

    Returns 0 on success, or the 1-based index of the first non-positive
    pivot.
    """
    cdef int i, j, k
    cdef double s
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if s <= 0.0:
            return j + 1
        a[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] l, double[:, ::1] b, int n, int m) noexcept nogil:
    """Solve (L L^T) X = B in place of B, L lower-triangular from _cholesky."""
    cdef int i, k, c
    cdef double s
    for c in range(m):
        for i in range(n):
            s = b[i, c]
            for k in range(i):
                s -= l[i, k] * b[k, c]
            b[i, c] = s / l[i, i]
        for i in range(n - 1, -1, -1):
            s = b[i, c]
            for k in range(i + 1, n):
                s -= l[k, i] * b[k, c]
            b[i, c] = s / l[i, i]


cdef int _step(double[::1] f1, double[:, ::1] g1, double[::1] f2, double[:, ::1] g2,
               double[::1] r1, double[::1] r2, double[::1] u1_next,
               double[::1] mu, double[:, ::1] sigma,
               double[::1] mu_out, double[:, ::1] sigma_out,
               double[:, ::1] w_gs1, double[:, ::1] w_s, double[:, ::1] w_b,
               double[:, ::1] w_kt, double[::1] w_innov,
               double jitter, int d1, int dv) noexcept nogil:
    """One filter step with workspaces; returns Cholesky pivot or 0."""
    cdef int i, j, k
    cdef double s

    # w_gs1 = G1 Sigma  (d1 x dv); sigma is symmetric, so read it row-wise
    # to keep the inner loop contiguous
    for i in range(d1):
        for j in range(dv):
            s = 0.0
            for k in range(dv):
                s += g1[i, k] * sigma[j, k]
            w_gs1[i, j] = s
    # w_s = G1 Sigma G1^T + diag(r1) + jitter I  (d1 x d1)
    for i in range(d1):
        for j in range(d1):
            s = 0.0
            for k in range(dv):
                s += w_gs1[i, k] * g1[j, k]
            w_s[i, j] = s
        w_s[i, i] += r1[i] + jitter
    # w_b = G2 Sigma G1^T  (dv x d1); use sigma_out as scratch for G2 Sigma
    # (same symmetric row-wise read of sigma)
    for i in range(dv):
        for j in range(dv):
            s = 0.0
            for k in range(dv):
                s += g2[i, k] * sigma[j, k]
            sigma_out[i, j] = s
    for i in range(dv):
        for j in range(d1):
            s = 0.0
            for k in range(dv):
                s += sigma_out[i, k] * g1[j, k]
            w_b[i, j] = s
    # w_kt = S^{-1} B^T  (d1 x dv), i.e. K^T
    for i in range(d1):
        for j in range(dv):
            w_kt[i, j] = w_b[j, i]
    i = _cholesky(w_s, d1)
    if i != 0:
        return i
    _chol_solve(w_s, w_kt, d1, dv)
    # innovation
    for i in range(d1):
        s = u1_next[i] - f1[i]
        for k in range(dv):
            s -= g1[i, k] * mu[k]
        w_innov[i] = s
    # mu' = F2 + G2 mu + K innov
    for i in range(dv):
        s = f2[i]
        for k in range(dv):
            s += g2[i, k] * mu[k]
        for k in range(d1):
            s += w_kt[k, i] * w_innov[k]
        mu_out[i] = s
    # sigma' = (G2 Sigma) G2^T + diag(r2) - K B^T, then symmetrize.
    # sigma_out currently holds G2 Sigma; overwrite column-wise via w_gs1? No:
    # compute into a temporary row buffer using w_b and g2.
    for i in range(dv):
        for j in range(dv):
            s = 0.0
            for k in range(dv):
                s += sigma_out[i, k] * g2[j, k]
            # K B^T term, K = w_kt^T
            for k in range(d1):
                s -= w_kt[k, i] * w_b[j, k]
            sigma[i, j] = s  # stage into sigma (input no longer needed)
    for i in range(dv):
        sigma[i, i] += r2[i]
    for i in range(dv):
        for j in range(dv):
            sigma_out[i, j] = 0.5 * (sigma[i, j] + sigma[j, i])
    return 0


def filter_step(f1, g1, f2, g2, r1, r2, u1_next, mu, sigma, double jitter=1e-10):
    """Single conditional-Gaussian filter step (compiled backend).

    r1, r2 are the diagonals of sigma1 sigma1^T and sigma2 sigma2^T.
    Returns (mu_next, sigma_next); sigma_next is exactly symmetric.
    """
    cdef int d1 = f1.shape[0]
    cdef int dv = f2.shape[0]
    mu_in = np.array(mu, dtype=np.float64)
    sig_in = np.array(sigma, dtype=np.float64)
    mu_out = np.empty(dv)
    sig_out = np.empty((dv, dv))
    w_gs1 = np.empty((max(d1, 1), dv))
    w_s = np.empty((d1, d1))
    w_b = np.empty((dv, d1))
    w_kt = np.empty((d1, dv))
    w_innov = np.empty(d1)
    cdef int info = _step(
        np.ascontiguousarray(f1, dtype=np.float64),
        np.ascontiguousarray(g1, dtype=np.float64),
        np.ascontiguousarray(f2, dtype=np.float64),
        np.ascontiguousarray(g2, dtype=np.float64),
        np.ascontiguousarray(r1, dtype=np.float64),
        np.ascontiguousarray(r2, dtype=np.float64),
        np.ascontiguousarray(u1_next, dtype=np.float64),
        mu_in, sig_in, mu_out, sig_out,
        w_gs1, w_s, w_b, w_kt, w_innov, jitter, d1, dv)
    if info != 0:
        raise NumericalError(
            f"innovation covariance not SPD (pivot {info})", pivot_index=info
        )
    return mu_out, sig_out


def filter_run_const(f1, g1, f2, g2, r1, r2, u1_series, mu0, sigma0,
                     double jitter=1e-10, bint record=True):
    """Run the filter with constant coefficients over a whole series.

    u1_series has shape (N+1, d1); returns (mus (N, dv), sigmas (N, dv, dv))
    when ``record``, else the final (mu, sigma) only.  The entire recursion
    stays in C, which is what the complexity probe times.
    """
    cdef double[::1] f1v = np.ascontiguousarray(f1, dtype=np.float64)
    cdef double[:, ::1] g1v = np.ascontiguousarray(g1, dtype=np.float64)
    cdef double[::1] f2v = np.ascontiguousarray(f2, dtype=np.float64)
    cdef double[:, ::1] g2v = np.ascontiguousarray(g2, dtype=np.float64)
    cdef double[::1] r1v = np.ascontiguousarray(r1, dtype=np.float64)
    cdef double[::1] r2v = np.ascontiguousarray(r2, dtype=np.float64)
    cdef double[:, ::1] u1v = np.ascontiguousarray(u1_series, dtype=np.float64)
    cdef int d1 = f1v.shape[0]
    cdef int dv = f2v.shape[0]
    cdef int n_steps = u1v.shape[0] - 1
    cdef int t = 0
    cdef int info = 0

    mu_a = np.array(mu0, dtype=np.float64)
    sig_a = np.array(sigma0, dtype=np.float64)
    mu_b = np.empty(dv)
    sig_b = np.empty((dv, dv))
    cdef double[::1] mu_cur = mu_a, mu_nxt = mu_b, mu_tmp
    cdef double[:, ::1] sig_cur = sig_a, sig_nxt = sig_b, sig_tmp

    w_gs1 = np.empty((max(d1, 1), dv))
    w_s = np.empty((d1, d1))
    w_b = np.empty((dv, d1))
    w_kt = np.empty((d1, dv))
    w_innov = np.empty(d1)
    cdef double[:, ::1] w_gs1v = w_gs1, w_sv = w_s, w_bv = w_b, w_ktv = w_kt
    cdef double[::1] w_innovv = w_innov

    mus = np.empty((n_steps if record else 0, dv))
    sigs = np.empty((n_steps if record else 0, dv, dv))
    cdef double[:, ::1] mus_v = mus
    cdef double[:, :, ::1] sigs_v = sigs

    with nogil:
        for t in range(n_steps):
            info = _step(f1v, g1v, f2v, g2v, r1v, r2v, u1v[t + 1],
                         mu_cur, sig_cur, mu_nxt, sig_nxt,
                         w_gs1v, w_sv, w_bv, w_ktv, w_innovv, jitter, d1, dv)
            if info != 0:
                break
            if record:
                mus_v[t, :] = mu_nxt
                sigs_v[t, :, :] = sig_nxt
            mu_tmp = mu_cur; mu_cur = mu_nxt; mu_nxt = mu_tmp
            sig_tmp = sig_cur; sig_cur = sig_nxt; sig_nxt = sig_tmp
    if info != 0:
        raise NumericalError(
            f"innovation covariance not SPD at step {t} (pivot {info})",
            pivot_index=info, step_index=t)
    if record:
        return mus, sigs
    return np.asarray(mu_cur).copy(), np.asarray(sig_cur).copy()
