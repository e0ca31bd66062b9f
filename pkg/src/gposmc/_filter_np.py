"""Pure-numpy bootstrap-filter kernels.

This is the fallback backend for :mod:`gposmc.smc`; ``_filter_cy`` provides
the same kernels compiled with Cython. Both consume identical pre-drawn
random arrays in the same order, so results agree across backends up to
floating-point summation order.

Kernel contract
---------------
``run_filter`` advances ``N`` particles through the shared AR(1)
log-volatility dynamics, resampling systematically at every step, and
weighting by one of four observation channels:

* ``MODE_GSV_DENSITY``  -- exact density ``N(y_t; 0, exp(x_t))``.
* ``MODE_LGSS_DENSITY`` -- exact density ``N(y_t; x_t, extra^2)``.
* ``MODE_GAUSS_ABC``    -- simulate ``exp(x_t/2) z`` and weight with a
  Gaussian tolerance kernel around ``psi`` of the simulated value.
* ``MODE_STABLE_ABC``   -- simulate a stable draw scaled by ``exp(x_t/2)``
  (stability ``extra``) and weight the same way.

For the ABC modes ``y`` must already be the perturbed data. Weights are
handled in log space with max subtraction. A step where every weight
vanishes marks the run degenerate: the log-likelihood is ``-inf`` and the
filtered means from that step on are NaN.
"""

import numpy as np

MODE_GSV_DENSITY = 0
MODE_LGSS_DENSITY = 1
MODE_GAUSS_ABC = 2
MODE_STABLE_ABC = 3

PSI_IDENTITY = 0
PSI_ARCTAN = 1

_LOG_2PI = np.log(2.0 * np.pi)


def systematic_ancestors(weights, u):
    """Ancestor indices from systematic resampling with offset ``u``.

    Grid point ``(u + i) / N`` selects the index whose cumulative-weight
    interval contains it.
    """
    n = weights.shape[0]
    cumulative = np.cumsum(weights)
    positions = (u + np.arange(n)) / n
    ancestors = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(ancestors, n - 1).astype(np.int64)


def run_filter(mode, psi_code, mu, phi, sigma_v, extra, epsilon,
               y, eta0, eta, aux1, aux2, u_res,
               xhat_out, record, particles_out, ancestors_out, logw_out, w_out):
    """Run one bootstrap-filter pass; returns ``(loglik, degenerate_step)``.

    ``degenerate_step`` is the 1-based time index at which all weights
    vanished, or 0 for a clean run. When ``record`` is true the particle
    history, ancestor indices and (log/normalised) weights are written to
    the ``*_out`` arrays.
    """
    T = y.shape[0]
    n = eta0.shape[0]

    x = mu + sigma_v / np.sqrt(1.0 - phi * phi) * eta0
    w = np.full(n, 1.0 / n)
    if record:
        particles_out[0, :] = x

    loglik = 0.0
    log_n = np.log(n)
    for t in range(1, T + 1):
        ancestors = systematic_ancestors(w, u_res[t - 1])
        x = mu + phi * (x[ancestors] - mu) + sigma_v * eta[t - 1]

        # weight overflow (huge z at tiny tolerance, exp(-x) for deep
        # states) is expected and funnels into the -inf guard below
        with np.errstate(over="ignore", invalid="ignore"):
            if mode == MODE_GSV_DENSITY:
                logw = -0.5 * (_LOG_2PI + x + y[t - 1] * y[t - 1] * np.exp(-x))
            elif mode == MODE_LGSS_DENSITY:
                z = (y[t - 1] - x) / extra
                logw = -0.5 * (_LOG_2PI + z * z) - np.log(extra)
            else:
                if mode == MODE_GAUSS_ABC:
                    ysim = np.exp(0.5 * x) * aux1[t - 1]
                else:
                    a = extra
                    t1 = np.sin(a * aux2[t - 1]) / np.cos(aux2[t - 1]) ** (1.0 / a)
                    t2 = (np.cos((a - 1.0) * aux2[t - 1]) / aux1[t - 1]) ** ((1.0 - a) / a)
                    ysim = np.exp(0.5 * x) * t1 * t2
                if psi_code == PSI_ARCTAN:
                    ysim = np.arctan(ysim)
                z = (y[t - 1] - ysim) / epsilon
                logw = -0.5 * (_LOG_2PI + z * z) - np.log(epsilon)

        logw = np.where(np.isfinite(logw), logw, -np.inf)
        max_logw = np.max(logw)
        if not np.isfinite(max_logw):
            xhat_out[t - 1:] = np.nan
            if record:
                particles_out[t, :] = x
                ancestors_out[t - 1, :] = ancestors
                logw_out[t - 1, :] = logw
                w_out[t - 1, :] = 0.0
            return -np.inf, t

        unnorm = np.exp(logw - max_logw)
        total = unnorm.sum()
        loglik += max_logw + np.log(total) - log_n
        w = unnorm / total
        xhat_out[t - 1] = np.dot(w, x)

        if record:
            particles_out[t, :] = x
            ancestors_out[t - 1, :] = ancestors
            logw_out[t - 1, :] = logw
            w_out[t - 1, :] = w

    return loglik, 0
