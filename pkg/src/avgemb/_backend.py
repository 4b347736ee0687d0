"""Kernel backend selection.

``AVGEMB_BACKEND=numpy`` forces the pure-numpy code paths; the default is
``numba`` whenever numba imports cleanly. The flag is read once at import.
"""

import logging
import os

logger = logging.getLogger(__name__)

BACKEND_ENV = "AVGEMB_BACKEND"
THREADS_ENV = "AVGEMB_THREADS"


def _resolve():
    requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba":
        try:
            import numba  # noqa: F401
        except ImportError:  # pragma: no cover - numba is a declared dependency
            logger.warning("numba unavailable, falling back to numpy kernels")
            return "numpy"
    return requested


BACKEND = _resolve()

if BACKEND == "numba" and "NUMBA_THREADING_LAYER" not in os.environ:
    import numba

    # the bundled TBB is often too old and warns on first parallel call
    numba.config.THREADING_LAYER = "omp"


def use_numba():
    return BACKEND == "numba"


def default_threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1")
    return n


def set_threads(n):
    """Cap kernel parallelism at ``n`` threads; returns the effective count.

    Results never depend on this value, only wall-clock time does.
    """
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if BACKEND != "numba":
        return 1
    import numba

    effective = min(int(n), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(effective)
    return effective


def get_threads():
    if BACKEND != "numba":
        return 1
    import numba

    return numba.get_num_threads()
