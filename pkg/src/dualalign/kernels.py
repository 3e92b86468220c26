"""Hot numeric kernels for surface-distance evaluation.

The directed nearest-neighbor search between boundary point sets is exact
all-pairs (no distance-transform approximation) and O(N*M), which dominates
evaluation time on real-sized volumes. The JIT-compiled version is used by
default; set ``DUALALIGN_NO_NUMBA=1`` to force the pure-numpy path (it is
also used automatically when numba is unavailable).

``benchmarks/surface_distance_bench.py`` compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "DUALALIGN_NO_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "0").strip().lower() in ("", "0", "false")


def nearest_sq_distances_numpy(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """For each row of ``points``, squared distance to the nearest ``targets`` row.

    Chunked broadcasting keeps the (N, M) distance matrix bounded in memory.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    out = np.empty(len(points), dtype=np.float64)
    chunk = max(1, 4_000_000 // max(1, len(targets)))
    for i in range(0, len(points), chunk):
        diff = points[i : i + chunk, None, :] - targets[None, :, :]
        out[i : i + chunk] = np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)
    return out


_nearest_sq_distances_numba = None
if numba_requested():
    try:
        from numba import njit, prange

        @njit(cache=True, parallel=True, fastmath=True)
        def _nearest_sq_distances_numba(points, targets):  # pragma: no cover - jit
            n = points.shape[0]
            m = targets.shape[0]
            out = np.empty(n, dtype=np.float64)
            for i in prange(n):
                px, py, pz = points[i, 0], points[i, 1], points[i, 2]
                best = np.inf
                for j in range(m):
                    dx = px - targets[j, 0]
                    dy = py - targets[j, 1]
                    dz = pz - targets[j, 2]
                    d = dx * dx + dy * dy + dz * dz
                    if d < best:
                        best = d
                out[i] = best
            return out

    except ImportError:
        _nearest_sq_distances_numba = None

USING_NUMBA = _nearest_sq_distances_numba is not None


def nearest_sq_distances(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Dispatch to the JIT kernel when available, else the numpy fallback."""
    if len(points) == 0 or len(targets) == 0:
        raise ValueError("point sets must be non-empty")
    if USING_NUMBA:
        return _nearest_sq_distances_numba(
            np.ascontiguousarray(points, dtype=np.float64),
            np.ascontiguousarray(targets, dtype=np.float64),
        )
    return nearest_sq_distances_numpy(points, targets)
