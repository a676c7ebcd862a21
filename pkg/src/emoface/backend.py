"""Kernel backend selection.

Hot numeric loops have two implementations: a numba @njit version and a
pure-numpy fallback. Selection happens once at import time:

  * numba is used when importable, unless EMOFACE_NUMBA=0 is set;
  * EMOFACE_NUMBA=0 forces the numpy path (useful for debugging and for
    the benchmark in benchmarks/bench_kernels.py).
"""

import os


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


HAVE_NUMBA = _numba_available()
USE_NUMBA = HAVE_NUMBA and os.environ.get("EMOFACE_NUMBA", "1") != "0"


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
