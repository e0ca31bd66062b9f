# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled build of the bootstrap-filter kernels.

Same contract as ``gposmc._filter_np.run_filter``; the time loop runs
without the GIL so independent filter passes can share threads.
"""

from libc.math cimport atan, cos, exp, isfinite, log, pow, sin, sqrt, INFINITY, NAN, M_PI

import numpy as np

cimport numpy as cnp

cdef int _MODE_GSV_DENSITY = 0
cdef int _MODE_LGSS_DENSITY = 1
cdef int _MODE_GAUSS_ABC = 2
cdef int _MODE_STABLE_ABC = 3
cdef int _PSI_ARCTAN = 1

MODE_GSV_DENSITY = _MODE_GSV_DENSITY
MODE_LGSS_DENSITY = _MODE_LGSS_DENSITY
MODE_GAUSS_ABC = _MODE_GAUSS_ABC
MODE_STABLE_ABC = _MODE_STABLE_ABC

PSI_IDENTITY = 0
PSI_ARCTAN = _PSI_ARCTAN

cdef double LOG_2PI = log(2.0 * M_PI)


cdef inline void _systematic(double[::1] w, double u, cnp.int64_t[::1] anc, Py_ssize_t n) noexcept nogil:
    # first index whose cumulative weight strictly exceeds the grid point
    cdef Py_ssize_t i, j = 0
    cdef double cum = w[0]
    cdef double pos
    for i in range(n):
        pos = (u + i) / n
        while cum <= pos and j < n - 1:
            j += 1
            cum += w[j]
        anc[i] = j


def run_filter(int mode, int psi_code, double mu, double phi, double sigma_v,
               double extra, double epsilon,
               double[::1] y, double[::1] eta0, double[:, ::1] eta,
               double[:, ::1] aux1, double[:, ::1] aux2, double[::1] u_res,
               double[::1] xhat_out, int record,
               double[:, ::1] particles_out, cnp.int64_t[:, ::1] ancestors_out,
               double[:, ::1] logw_out, double[:, ::1] w_out):
    cdef Py_ssize_t T = y.shape[0]
    cdef Py_ssize_t n = eta0.shape[0]
    cdef Py_ssize_t t, i, s

    x_arr = np.empty(n)
    xnew_arr = np.empty(n)
    w_arr = np.empty(n)
    logw_arr = np.empty(n)
    anc_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] x = x_arr
    cdef double[::1] xnew = xnew_arr
    cdef double[::1] w = w_arr
    cdef double[::1] logw = logw_arr
    cdef cnp.int64_t[::1] anc = anc_arr

    cdef double loglik = 0.0
    cdef double log_n = log(<double> n)
    cdef double init_sd = sigma_v / sqrt(1.0 - phi * phi)
    cdef double yt, max_logw, total, lw, xi, ysim, z, t1, t2, xhat
    cdef double inv_alpha = 0.0
    cdef double exp_frac = 0.0
    cdef Py_ssize_t degenerate = 0

    if mode == _MODE_STABLE_ABC:
        inv_alpha = 1.0 / extra
        exp_frac = (1.0 - extra) / extra

    with nogil:
        for i in range(n):
            x[i] = mu + init_sd * eta0[i]
            w[i] = 1.0 / n
        if record:
            for i in range(n):
                particles_out[0, i] = x[i]

        for t in range(1, T + 1):
            yt = y[t - 1]
            _systematic(w, u_res[t - 1], anc, n)
            for i in range(n):
                xnew[i] = mu + phi * (x[anc[i]] - mu) + sigma_v * eta[t - 1, i]
            for i in range(n):
                x[i] = xnew[i]

            max_logw = -INFINITY
            for i in range(n):
                xi = x[i]
                if mode == _MODE_GSV_DENSITY:
                    lw = -0.5 * (LOG_2PI + xi + yt * yt * exp(-xi))
                elif mode == _MODE_LGSS_DENSITY:
                    z = (yt - xi) / extra
                    lw = -0.5 * (LOG_2PI + z * z) - log(extra)
                else:
                    if mode == _MODE_GAUSS_ABC:
                        ysim = exp(0.5 * xi) * aux1[t - 1, i]
                    else:
                        t1 = sin(extra * aux2[t - 1, i]) / pow(cos(aux2[t - 1, i]), inv_alpha)
                        t2 = pow(cos((extra - 1.0) * aux2[t - 1, i]) / aux1[t - 1, i], exp_frac)
                        ysim = exp(0.5 * xi) * t1 * t2
                    if psi_code == _PSI_ARCTAN:
                        ysim = atan(ysim)
                    z = (yt - ysim) / epsilon
                    lw = -0.5 * (LOG_2PI + z * z) - log(epsilon)
                if not isfinite(lw):
                    lw = -INFINITY
                logw[i] = lw
                if lw > max_logw:
                    max_logw = lw

            if max_logw == -INFINITY:
                degenerate = t
                for s in range(t - 1, T):
                    xhat_out[s] = NAN
                if record:
                    for i in range(n):
                        particles_out[t, i] = x[i]
                        ancestors_out[t - 1, i] = anc[i]
                        logw_out[t - 1, i] = logw[i]
                        w_out[t - 1, i] = 0.0
                loglik = -INFINITY
                break

            total = 0.0
            for i in range(n):
                w[i] = exp(logw[i] - max_logw)
                total += w[i]
            loglik += max_logw + log(total) - log_n

            xhat = 0.0
            for i in range(n):
                w[i] /= total
                xhat += w[i] * x[i]
            xhat_out[t - 1] = xhat

            if record:
                for i in range(n):
                    particles_out[t, i] = x[i]
                    ancestors_out[t - 1, i] = anc[i]
                    logw_out[t - 1, i] = logw[i]
                    w_out[t - 1, i] = w[i]

    return loglik, degenerate
