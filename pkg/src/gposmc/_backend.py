"""Filter backend selection.

The compiled extension is preferred when it imported cleanly; otherwise
the numpy build is used. ``GPOSMC_BACKEND=numpy`` forces the fallback
(useful for benchmarking), ``GPOSMC_BACKEND=cython`` insists on the
extension and fails loudly when it is missing.
"""

import os

from . import _filter_np
from .errors import ConfigurationError

try:
    from . import _filter_cy

    HAVE_EXTENSION = True
except ImportError:
    _filter_cy = None
    HAVE_EXTENSION = False

_requested = os.environ.get("GPOSMC_BACKEND", "").strip().lower()
if _requested == "numpy":
    _impl = _filter_np
elif _requested == "cython":
    if not HAVE_EXTENSION:
        raise ConfigurationError(
            "GPOSMC_BACKEND=cython but the compiled extension is not importable"
        )
    _impl = _filter_cy
elif _requested:
    raise ConfigurationError(
        "unknown GPOSMC_BACKEND %r, expected 'numpy' or 'cython'" % _requested
    )
else:
    _impl = _filter_cy if HAVE_EXTENSION else _filter_np

BACKEND = "numpy" if _impl is _filter_np else "cython"

run_filter = _impl.run_filter

MODE_GSV_DENSITY = _filter_np.MODE_GSV_DENSITY
MODE_LGSS_DENSITY = _filter_np.MODE_LGSS_DENSITY
MODE_GAUSS_ABC = _filter_np.MODE_GAUSS_ABC
MODE_STABLE_ABC = _filter_np.MODE_STABLE_ABC
PSI_IDENTITY = _filter_np.PSI_IDENTITY
PSI_ARCTAN = _filter_np.PSI_ARCTAN
