"""Hot numeric kernels with a selectable backend.

The numba JIT backend is used when numba imports; set the environment
variable ``TRACTAUG_BACKEND=numpy`` before import to force the pure-numpy
fallback (or ``=numba`` to require the JIT and fail loudly if missing).
Both backends are bit-identical; ``benchmarks/bench_kernels.py`` compares
their speed.
"""

from __future__ import annotations

import os

from . import _numpy

_requested = os.environ.get("TRACTAUG_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "numba"):
    raise ValueError(
        f"TRACTAUG_BACKEND must be 'numpy' or 'numba', got {_requested!r}"
    )

if _requested == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _numpy
        BACKEND = "numpy"

neighborhood_mean_std = _impl.neighborhood_mean_std
gradient_magnitude = _impl.gradient_magnitude
tube_mask = _impl.tube_mask


def active_backend() -> str:
    """Name of the backend selected at import time."""
    return BACKEND


__all__ = [
    "BACKEND",
    "active_backend",
    "gradient_magnitude",
    "neighborhood_mean_std",
    "tube_mask",
]
