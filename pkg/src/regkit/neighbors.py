"""Exact neighbor queries: spatial-hash radius pairs and brute-force NN.

The radius query buckets points into a uniform grid with cell edge equal
to the search radius, so candidates only come from the 27 surrounding
cells; results are exact. Nearest-neighbor and k-NN queries use chunked
brute force, which at the toolkit's working sizes (<= a few thousand
points) is exact, vectorized, and free of tie-break ambiguity: ties are
always resolved toward the lower index.
"""

from __future__ import annotations

from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

F64: TypeAlias = np.float64
I64: TypeAlias = np.int64

_KEY_LIMIT = 1 << 20  # grid keys are packed into 21 bits per axis

_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)


def _pack_keys(cells: NDArray[I64]) -> NDArray[I64]:
    k = cells + _KEY_LIMIT
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


def _cell_indices(points: NDArray[F64], cell: float) -> NDArray[I64]:
    cells = np.floor(points / cell).astype(np.int64)
    if np.abs(cells).max(initial=0) >= _KEY_LIMIT - 1:
        raise ValueError("points span too many grid cells for this radius")
    return cells


def radius_pairs(
    a: NDArray[F64], b: NDArray[F64], radius: float
) -> tuple[NDArray[I64], NDArray[I64], NDArray[F64]]:
    """All index pairs (i, j) with ``|a[i] - b[j]| <= radius``.

    Returns (ia, jb, dist) with pairs grouped by query index ``ia`` and
    ordered deterministically. When ``a is b`` the self-pair (i, i) is
    included; callers filter it if unwanted.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), np.empty(0)

    cells_a = _cell_indices(a, radius)
    keys_b = _pack_keys(_cell_indices(b, radius))
    order_b = np.argsort(keys_b, kind="stable")
    sorted_b = keys_b[order_b]
    uniq_b, group_start = np.unique(sorted_b, return_index=True)
    group_count = np.diff(np.append(group_start, len(sorted_b)))

    ia_parts: list[NDArray[I64]] = []
    jb_parts: list[NDArray[I64]] = []
    for offset in _OFFSETS:
        probe = _pack_keys(cells_a + offset)
        slot = np.searchsorted(uniq_b, probe)
        slot = np.minimum(slot, len(uniq_b) - 1)
        hit = uniq_b[slot] == probe
        if not np.any(hit):
            continue
        a_idx = np.nonzero(hit)[0]
        counts = group_count[slot[a_idx]]
        starts = group_start[slot[a_idx]]
        total = int(counts.sum())
        ia = np.repeat(a_idx, counts)
        # Concatenated ranges [start, start+count) for every matched group.
        step = np.arange(total, dtype=np.int64)
        step -= np.repeat(np.cumsum(counts) - counts, counts)
        jb = order_b[starts.repeat(counts) + step]
        ia_parts.append(ia)
        jb_parts.append(jb)

    if not ia_parts:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), np.empty(0)

    ia = np.concatenate(ia_parts)
    jb = np.concatenate(jb_parts)
    dist = np.linalg.norm(a[ia] - b[jb], axis=1)
    keep = dist <= radius
    ia, jb, dist = ia[keep], jb[keep], dist[keep]
    order = np.lexsort((jb, ia))
    return ia[order], jb[order], dist[order]


def nearest_neighbors(
    queries: NDArray[F64], points: NDArray[F64], chunk: int = 256
) -> tuple[NDArray[I64], NDArray[F64]]:
    """Exact nearest neighbor in ``points`` for every query point."""
    queries = np.asarray(queries, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("cannot query an empty point set")
    idx = np.empty(len(queries), dtype=np.int64)
    dist = np.empty(len(queries))
    for lo in range(0, len(queries), chunk):
        q = queries[lo : lo + chunk]
        d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        best = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        idx[lo : lo + len(q)] = best
        dist[lo : lo + len(q)] = np.sqrt(d2[np.arange(len(q)), best])
    return idx, dist


def knn_indices(
    queries: NDArray[F64], points: NDArray[F64], k: int, chunk: int = 256
) -> NDArray[I64]:
    """Indices of the k nearest points per query, ordered by (distance, index)."""
    queries = np.asarray(queries, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= k <= len(points):
        raise ValueError(f"k={k} out of range for {len(points)} points")
    out = np.empty((len(queries), k), dtype=np.int64)
    for lo in range(0, len(queries), chunk):
        q = queries[lo : lo + chunk]
        d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")
        out[lo : lo + len(q)] = order[:, :k]
    return out
