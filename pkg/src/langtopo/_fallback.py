"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np


def _row_ids(indptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def neighbor_mean(indptr: np.ndarray, indices: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = len(indptr) - 1
    deg = np.diff(indptr)
    out = np.zeros((n, h.shape[1]))
    np.add.at(out, _row_ids(indptr), h[indices])
    nz = deg > 0
    out[nz] /= deg[nz, None]
    return out


def neighbor_mean_transpose(indptr: np.ndarray, indices: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = len(indptr) - 1
    deg = np.diff(indptr)
    rows = _row_ids(indptr)
    scaled = g[rows] / deg[rows, None]
    out = np.zeros((n, g.shape[1]))
    np.add.at(out, indices, scaled)
    return out
