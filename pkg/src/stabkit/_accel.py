"""Backend selection for the compiled kernels.

``STABKIT_BACKEND`` picks the implementation used by :mod:`stabkit._kernels`:

* ``auto`` (default): numba when importable, otherwise numpy
* ``numba``: require numba, fail loudly if missing
* ``numpy``: pure-numpy fallback, never touches numba
"""

import os

_requested = os.environ.get("STABKIT_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ImportError(f"STABKIT_BACKEND must be auto, numba or numpy, got {_requested!r}")

try:
    if _requested == "numpy":
        raise ImportError
    import numba

    HAS_NUMBA = True
except ImportError:
    if _requested == "numba":
        raise
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _requested != "numpy"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` in nopython mode with on-disk caching."""
    if numba is None:
        raise RuntimeError("numba is not available")
    return numba.njit(cache=True, nogil=True)(fn)
