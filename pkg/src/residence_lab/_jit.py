"""Optional numba dependency handling.

The hot simulation kernels are compiled with ``numba.njit`` when numba is
importable.  If numba is missing (or fails to initialise), the decorators
below degrade to no-ops so that the same source still runs as plain Python;
the engine dispatcher then prefers the vectorised numpy backend.

The active backend can be forced with the environment variable
``RESIDENCE_LAB_BACKEND`` (``numba`` or ``numpy``).
"""

import os

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - exercised only on broken installs
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return wrap


def default_backend():
    """Return the simulation backend selected by environment/availability."""
    choice = os.environ.get("RESIDENCE_LAB_BACKEND", "").strip().lower()
    if choice in ("numba", "numpy"):
        if choice == "numba" and not HAVE_NUMBA:
            return "numpy"
        return choice
    return "numba" if HAVE_NUMBA else "numpy"
