"""Kernel backend selection.

Two interchangeable kernel sets exist: a numba-compiled one and a pure
numpy one.  The active set is chosen, in order, by an explicit argument
at the call site, the ``CRITTAIL_BACKEND`` environment variable
(``numba`` or ``numpy``), and finally availability: numba when it
imports, numpy otherwise.

Both backends consume random streams identically, so results match to
the last-ulp behaviour of the transcendental functions; integer outputs
(exceedance and occupancy counts from identical inputs) usually agree
exactly, float outputs to ~1e-13 relative.  Byte-for-byte reproducibility
is guaranteed per backend, not across backends.
"""

from __future__ import annotations

import os

try:
    from . import _kernels_nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_nb = None
    HAVE_NUMBA = False

from . import _kernels_np


def backend_name(explicit=None) -> str:
    """Resolve the backend name from argument, environment, availability."""
    name = explicit or os.environ.get("CRITTAIL_BACKEND", "").strip().lower()
    if not name:
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r} (use 'numba' or 'numpy')")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return name


def kernels(explicit=None):
    """Return (name, kernel module) for the active backend."""
    name = backend_name(explicit)
    return name, (_kernels_nb if name == "numba" else _kernels_np)
