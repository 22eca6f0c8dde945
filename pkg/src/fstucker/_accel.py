"""Backend selection for the compiled kernels.

Numba is used when importable unless the environment variable
``FSTUCKER_DISABLE_NUMBA`` is set to a truthy value, in which case every
kernel dispatches to its pure-numpy counterpart.  The choice can also be
flipped at runtime with :func:`set_backend`, which the benchmark and the
tests use to compare both paths.
"""

import os

# the bundled TBB is too old for numba; skip probing it
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("FSTUCKER_DISABLE_NUMBA", "").strip().lower() not in (
    "",
    "0",
    "false",
    "no",
)

_backend = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


prange = numba.prange if HAVE_NUMBA else range


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for subsequent kernel calls."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def use_numba():
    return _backend == "numba"


def set_threads(n):
    """Cap the number of threads used by parallel numba kernels."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
