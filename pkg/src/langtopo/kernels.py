"""Hot-loop kernels, compiled when available.

``BACKEND`` is ``"cython"`` when the extension imported, else ``"numpy"``.
Set ``LANGTOPO_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

BACKEND = "numpy"
_neighbor_mean = _fallback.neighbor_mean
_neighbor_mean_t = _fallback.neighbor_mean_transpose

if not os.environ.get("LANGTOPO_PURE_PYTHON"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        _neighbor_mean = _kernels.neighbor_mean
        _neighbor_mean_t = _kernels.neighbor_mean_transpose


def _prep(indptr, indices, x):
    return (
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(x, dtype=np.float64),
    )


def neighbor_mean(indptr, indices, h) -> np.ndarray:
    """Row u of the result is the mean of ``h`` over the CSR neighbours of u (zero if none)."""
    return _neighbor_mean(*_prep(indptr, indices, h))


def neighbor_mean_transpose(indptr, indices, g) -> np.ndarray:
    """Adjoint of :func:`neighbor_mean`: scatters ``g[u] / deg(u)`` onto each neighbour of u."""
    return _neighbor_mean_t(*_prep(indptr, indices, g))
