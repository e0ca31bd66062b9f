"""Time the compiled particle-filter kernel against the numpy fallback.

Both implementations consume identical pre-drawn randomness, so the
benchmark also asserts that their log-likelihoods agree to float
round-off before reporting timings.

Run:  python3 benchmarks/filter_backends.py [T] [N] [reps]
"""

import sys
import time

import numpy as np

from gposmc import _filter_np
from gposmc.models import GSV, ThetaVector, simulate
from gposmc.rng import RngStream

try:
    from gposmc import _filter_cy
except ImportError:
    _filter_cy = None


def _inputs(T, N, seed=1):
    theta = ThetaVector(GSV, (0.20, 0.96, 0.15))
    _, y = simulate(GSV, theta, T, RngStream(seed).child(0).generator())
    rng = RngStream(seed).child(1).generator()
    return {
        "mode": _filter_np.MODE_GSV_DENSITY,
        "psi_code": _filter_np.PSI_IDENTITY,
        "mu": 0.20, "phi": 0.96, "sigma_v": 0.15, "extra": 0.0, "epsilon": 0.0,
        "y": y,
        "eta0": rng.standard_normal(N),
        "eta": rng.standard_normal((T, N)),
        "aux1": rng.standard_normal((T, N)),
        "aux2": np.zeros((T, N)),
        "u_res": rng.random(T),
        "xhat_out": np.empty(T),
        "record": 0,
        "particles_out": np.empty((0, 0)),
        "ancestors_out": np.empty((0, 0), dtype=np.int64),
        "logw_out": np.empty((0, 0)),
        "w_out": np.empty((0, 0)),
    }


def _time(impl, kwargs, reps):
    best = np.inf
    loglik = None
    for _ in range(reps):
        t0 = time.perf_counter()
        loglik, _ = impl.run_filter(**kwargs)
        best = min(best, time.perf_counter() - t0)
    return best, loglik


def main():
    T = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    N = int(sys.argv[2]) if len(sys.argv) > 2 else 2000
    reps = int(sys.argv[3]) if len(sys.argv) > 3 else 5

    kwargs = _inputs(T, N)
    t_np, ll_np = _time(_filter_np, kwargs, reps)
    print(f"T={T} N={N} reps={reps}")
    print(f"numpy   {1e3 * t_np:9.2f} ms/filter   loglik {ll_np:.10f}")
    if _filter_cy is None:
        print("cython  extension not built (pure-python install)")
        return
    t_cy, ll_cy = _time(_filter_cy, kwargs, reps)
    print(f"cython  {1e3 * t_cy:9.2f} ms/filter   loglik {ll_cy:.10f}")
    print(f"speedup {t_np / t_cy:9.2f} x")
    if abs(ll_np - ll_cy) > 1e-8 * max(1.0, abs(ll_np)):
        raise SystemExit(f"backends disagree: {ll_np} vs {ll_cy}")
    print("backends agree")


if __name__ == "__main__":
    main()
