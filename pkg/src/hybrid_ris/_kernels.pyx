# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
from libc.math cimport cos, sin

ctypedef double complex cplx


def chain_messages(pi_in, double lam, double p01, double p10):
    cdef double[:, ::1] pi = np.ascontiguousarray(pi_in, dtype=np.float64)
    cdef Py_ssize_t K = pi.shape[0], C = pi.shape[1], k, c
    lf_arr = np.empty((K, C))
    lb_arr = np.empty((K, C))
    cdef double[:, ::1] lf = lf_arr
    cdef double[:, ::1] lb = lb_arr
    cdef double p00 = 1 - p01, p11 = 1 - p10, q, x
    for c in range(C):
        lf[0, c] = lam
        for k in range(1, K):
            q = pi[k - 1, c]
            x = lf[k - 1, c]
            lf[k, c] = (p01 * (1 - q) * (1 - x) + p11 * q * x) / ((1 - q) * (1 - x) + q * x)
        lb[K - 1, c] = 0.5
        for k in range(K - 2, -1, -1):
            q = pi[k + 1, c]
            x = lb[k + 1, c]
            lb[k, c] = (p10 * (1 - q) * (1 - x) + p11 * q * x) / (
                (p00 + p10) * (1 - q) * (1 - x) + (p11 + p01) * q * x)
    return lf_arr, lb_arr


cdef inline cplx cis(double x) nogil:
    return cos(x) + 1j * sin(x)


cdef inline double abs2(cplx z) nogil:
    return z.real * z.real + z.imag * z.imag


def ris_sweep(cplx[:, ::1] R, cplx[:, ::1] U, double[:, ::1] mask, cplx[:, ::1] E,
              double[::1] t, double k, double[::1] angle, double[::1] curv, double fa, double fc,
              double[::1] lo, double[::1] hi, double cell,
              double armijo=1e-4, double shrink=0.5, int max_halvings=30):
    cdef Py_ssize_t M = R.shape[0], P = R.shape[1], N = E.shape[0], C = U.shape[1]
    cdef Py_ssize_t c, n, p, m, it
    steps_arr = np.zeros(C)
    status_arr = np.zeros(C, dtype=np.int64)
    cdef double[::1] steps = steps_arr
    cdef long long[::1] status = status_arr
    cdef cplx[::1] a = np.empty(N, dtype=np.complex128)
    cdef cplx[::1] b = np.empty(P, dtype=np.complex128)
    cdef cplx[::1] db = np.empty(P, dtype=np.complex128)
    cdef cplx[::1] dB = np.empty(P, dtype=np.complex128)
    cdef cplx[::1] w = np.empty(P, dtype=np.complex128)
    cdef double[::1] dpsi = np.empty(N)
    cdef double uu, g, h, step, gain, dbn, dBn, ang, cv
    cdef cplx acc, an, s
    for n in range(N):
        dpsi[n] = k * (-fa * t[n] + 0.5 * fc * t[n] * t[n])
    with nogil:
        for c in range(C):
            for p in range(P):
                b[p] = 0
                db[p] = 0
                acc = 0
                for m in range(M):
                    acc = acc + (R[m, p].real - 1j * R[m, p].imag) * U[m, c]
                w[p] = acc
            for n in range(N):
                if mask[n, c] == 0:
                    continue
                an = mask[n, c] * cis(k * (-t[n] * angle[c] + 0.5 * t[n] * t[n] * curv[c]))
                a[n] = an
                s = 1j * dpsi[n] * an
                for p in range(P):
                    b[p] = b[p] + an * E[n, p]
                    db[p] = db[p] + s * E[n, p]
            uu = 0
            for m in range(M):
                uu = uu + abs2(U[m, c])
            g = 0
            dbn = 0
            for p in range(P):
                g = g + (w[p] * db[p]).real
                dbn = dbn + abs2(db[p])
            g = 2 * g
            h = 2 * uu * dbn
            if g == 0 or h == 0:
                continue
            step = g / h
            if step > cell:
                step = cell
            elif step < -cell:
                step = -cell
            if step < lo[c]:
                step = lo[c]
            if step > hi[c]:
                step = hi[c]
            if step == 0:
                continue
            status[c] = -1
            for it in range(max_halvings):
                ang = angle[c] + fa * step
                cv = curv[c] + fc * step
                for p in range(P):
                    dB[p] = -b[p]
                for n in range(N):
                    if mask[n, c] == 0:
                        continue
                    an = mask[n, c] * cis(k * (-t[n] * ang + 0.5 * t[n] * t[n] * cv))
                    for p in range(P):
                        dB[p] = dB[p] + an * E[n, p]
                gain = 0
                dBn = 0
                for p in range(P):
                    gain = gain + (w[p] * dB[p]).real
                    dBn = dBn + abs2(dB[p])
                gain = 2 * gain - uu * dBn
                if gain >= armijo * g * step:
                    for m in range(M):
                        for p in range(P):
                            R[m, p] = R[m, p] - U[m, c] * dB[p]
                    angle[c] = angle[c] + fa * step
                    curv[c] = curv[c] + fc * step
                    steps[c] = step
                    status[c] = 1
                    break
                step = step * shrink
    return steps_arr, status_arr


def bs_sweep(cplx[:, ::1] R, cplx[:, ::1] Wrows, double[::1] t, double k, double[::1] angle,
             double[::1] lo, double[::1] hi, double cell,
             double armijo=1e-4, double shrink=0.5, int max_halvings=30):
    cdef Py_ssize_t M = R.shape[0], P = R.shape[1], J = Wrows.shape[0]
    cdef Py_ssize_t j, m, p, it
    steps_arr = np.zeros(J)
    status_arr = np.zeros(J, dtype=np.int64)
    cdef double[::1] steps = steps_arr
    cdef long long[::1] status = status_arr
    cdef cplx[::1] f = np.empty(M, dtype=np.complex128)
    cdef cplx[::1] dF = np.empty(M, dtype=np.complex128)
    cdef cplx[::1] z = np.empty(M, dtype=np.complex128)
    cdef double ww, g, h, step, gain, dfn, dFn
    cdef cplx acc, df
    with nogil:
        for j in range(J):
            ww = 0
            for p in range(P):
                ww = ww + abs2(Wrows[j, p])
            g = 0
            dfn = 0
            for m in range(M):
                acc = 0
                for p in range(P):
                    acc = acc + (R[m, p].real - 1j * R[m, p].imag) * Wrows[j, p]
                z[m] = acc
                f[m] = cis(-k * t[m] * angle[j])
                df = -1j * k * t[m] * f[m]
                g = g + (df * z[m]).real
                dfn = dfn + abs2(df)
            g = 2 * g
            h = 2 * ww * dfn
            if g == 0 or h == 0:
                continue
            step = g / h
            if step > cell:
                step = cell
            elif step < -cell:
                step = -cell
            if step < lo[j]:
                step = lo[j]
            if step > hi[j]:
                step = hi[j]
            if step == 0:
                continue
            status[j] = -1
            for it in range(max_halvings):
                gain = 0
                dFn = 0
                for m in range(M):
                    dF[m] = cis(-k * t[m] * (angle[j] + step)) - f[m]
                    gain = gain + (dF[m] * z[m]).real
                    dFn = dFn + abs2(dF[m])
                gain = 2 * gain - ww * dFn
                if gain >= armijo * g * step:
                    for m in range(M):
                        for p in range(P):
                            R[m, p] = R[m, p] - dF[m] * Wrows[j, p]
                    angle[j] = angle[j] + step
                    steps[j] = step
                    status[j] = 1
                    break
                step = step * shrink
    return steps_arr, status_arr
