"""Backend selection for the hot kernels.

Every kernel in the package exists twice: a numba ``@njit`` version and a
pure-numpy version with identical results.  Numba is used when it imports and
``HULLFORGE_NO_NUMBA`` is unset (or ``0``).  Set ``HULLFORGE_NO_NUMBA=1`` to
force the numpy path, e.g. for debugging or on platforms without LLVM.
"""

import os

_flag = os.environ.get("HULLFORGE_NO_NUMBA", "0").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        try:
            # omp is safe under concurrent calls from Python threads
            from numba.np.ufunc import omppool  # noqa: F401

            numba.config.THREADING_LAYER = "omp"
        except ImportError:
            pass
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _flag in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def deco(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return deco


prange = numba.prange if HAVE_NUMBA else range


def pick(numba_impl, numpy_impl):
    """Return the implementation matching the active backend."""
    return numba_impl if USE_NUMBA else numpy_impl


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def resolve_threads(threads=None):
    """Thread count from the argument, then ``HULLFORGE_THREADS``, then 1."""
    if threads is None:
        env = os.environ.get("HULLFORGE_THREADS")
        threads = int(env) if env else 1
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def set_kernel_threads(threads):
    """Cap numba's parallel kernels at ``threads`` (bounded by what numba allows).

    Returns the count actually in effect.
    """
    if not HAVE_NUMBA:
        return 1
    n = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
