"""Deterministic point-set primitives.

Everything here is a function of the point *set*: inputs are put into
lexicographic (x, y, z) order before any greedy or tie-sensitive step, so
the selected coordinates do not depend on how the caller ordered the
points. Indices returned by the public functions always refer to the
caller's original ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.spatial import cKDTree

Q1_DEFAULT = 2048
Q2_DEFAULT = 256
K_DEFAULT = 10


def lex_order(points: np.ndarray) -> np.ndarray:
    """Indices that sort ``points`` lexicographically by (x, y, z)."""
    points = np.asarray(points)
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


@numba.njit(cache=True)
def _fps_sorted(pts, m):
    # pts is lexicographically sorted, so the first index among equal
    # candidates is the lexicographically smallest one
    n = pts.shape[0]
    cx = 0.0
    cy = 0.0
    cz = 0.0
    for i in range(n):
        cx += pts[i, 0]
        cy += pts[i, 1]
        cz += pts[i, 2]
    cx /= n
    cy /= n
    cz /= n
    best = 0
    best_d = -1.0
    for i in range(n):
        dx = pts[i, 0] - cx
        dy = pts[i, 1] - cy
        dz = pts[i, 2] - cz
        d = dx * dx + dy * dy + dz * dz
        if d > best_d:
            best_d = d
            best = i
    out = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    out[0] = best
    for s in range(1, m):
        last = out[s - 1]
        lx = pts[last, 0]
        ly = pts[last, 1]
        lz = pts[last, 2]
        best = 0
        best_d = -1.0
        for i in range(n):
            dx = pts[i, 0] - lx
            dy = pts[i, 1] - ly
            dz = pts[i, 2] - lz
            d = dx * dx + dy * dy + dz * dz
            if d < mind[i]:
                mind[i] = d
            if mind[i] > best_d:
                best_d = mind[i]
                best = i
        out[s] = best
    return out


def farthest_point_sampling(points, m: int) -> np.ndarray:
    """Greedy max-min subset selection.

    The first pick is the point farthest from the centroid; each later pick
    maximizes the squared distance to the already-selected set. Ties go to
    the lexicographically smallest (x, y, z). Returns ``min(m, N)`` indices
    into ``points`` in selection order.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {points.shape}")
    n = points.shape[0]
    if n == 0:
        raise ValueError("farthest_point_sampling on an empty point set")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    order = lex_order(points)
    picked = _fps_sorted(points[order], min(m, n))
    return order[picked]


def _sorted_neighbors(points, queries, k):
    """k nearest neighbours of each query inside lexsorted ``points``.

    Distances are evaluated as ``(dx*dx + dy*dy) + dz*dz`` in float64 and
    ranked by (distance, position); a k-d tree only proposes candidates.
    """
    n = points.shape[0]
    k = min(k, n)
    nq = queries.shape[0]
    out = np.empty((nq, k), dtype=np.int64)
    extra = min(n, k + 6)
    tree = cKDTree(points)
    _, cand = tree.query(queries, k=extra)
    cand = np.asarray(cand).reshape(nq, extra)
    d = _sqdist(points[cand], queries[:, None, :])
    order = np.lexsort((cand, d), axis=-1)
    cand = np.take_along_axis(cand, order, axis=-1)
    d = np.take_along_axis(d, order, axis=-1)
    out[:] = cand[:, :k]
    if extra < n:
        # k-th distance too close to the candidate horizon: something outside
        # the candidate list might tie, so rank the whole set for that query
        unsure = ~(d[:, k - 1] < d[:, -1] * (1.0 - 1e-9))
        for q in np.flatnonzero(unsure):
            dfull = _sqdist(points, queries[q][None, :])
            out[q] = np.lexsort((np.arange(n), dfull))[:k]
    return out


def _sqdist(a, b):
    diff = a - b
    return (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]) + diff[..., 2] * diff[..., 2]


def knn(points, queries, k: int) -> np.ndarray:
    """Indices (into ``points``) of the ``min(k, N)`` nearest points per query.

    Rows are in canonical order: ascending squared distance, ties by
    lexicographic coordinates.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ValueError("knn on an empty point set")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    order = lex_order(points)
    return order[_sorted_neighbors(points[order], queries, k)]


def group_normalize(points, query_points, table) -> np.ndarray:
    """Gather neighbourhoods and translate each one to its query point.

    ``table`` is a neighbour table as returned by :func:`knn` (canonical
    order is kept). Output shape is ``[Q, K, 3]``.
    """
    points = np.asarray(points)
    query_points = np.asarray(query_points).reshape(-1, 3)
    return points[np.asarray(table)] - query_points[:, None, :]


@dataclass
class Neighborhoods:
    """Parameter-independent geometry for one cloud, ready for the network.

    ``xyz1``: level-1 query coordinates ``[Q1, 3]``.
    ``local1``: level-1 normalized neighbourhoods ``[Q1, K, 3]``.
    ``idx2``: level-2 query positions within the level-1 queries ``[Q2]``.
    ``nbr2``: level-2 neighbour table into the level-1 queries ``[Q2, K]``.
    ``local2``: level-2 normalized neighbourhoods ``[Q2, K, 3]``.
    """

    xyz1: np.ndarray
    local1: np.ndarray
    idx2: np.ndarray
    nbr2: np.ndarray
    local2: np.ndarray

    @property
    def xyz2(self) -> np.ndarray:
        return self.xyz1[self.idx2]


def subsample(points, budget: int) -> np.ndarray:
    """The ``budget`` points nearest the sensor, in lexicographic order.

    Cropping by range keeps the native scan density, which is where sensor
    artifacts are visible; uniform thinning would blur them. Range ties go
    to the lexicographically smaller point, so the result is a set function.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] <= budget:
        return points
    srt = points[lex_order(points)]
    r2 = (srt[:, 0] * srt[:, 0] + srt[:, 1] * srt[:, 1]) + srt[:, 2] * srt[:, 2]
    keep = np.argsort(r2, kind="stable")[:budget]
    keep.sort()
    return srt[keep]


def build_neighborhoods(points, q1: int = Q1_DEFAULT, q2: int = Q2_DEFAULT,
                        k1: int = K_DEFAULT, k2: int = K_DEFAULT,
                        budget: int | None = 16384) -> Neighborhoods:
    """Run both sampling/grouping stages of the feature extractor."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        raise ValueError("cannot build neighbourhoods for an empty cloud")
    if budget is not None:
        points = subsample(points, budget)
    sel1 = farthest_point_sampling(points, q1)
    xyz1 = points[sel1]
    nbr1 = knn(points, xyz1, k1)
    local1 = group_normalize(points, xyz1, nbr1)
    idx2 = farthest_point_sampling(xyz1, q2)
    nbr2 = knn(xyz1, xyz1[idx2], k2)
    local2 = group_normalize(xyz1, xyz1[idx2], nbr2)
    return Neighborhoods(xyz1=xyz1, local1=local1, idx2=idx2, nbr2=nbr2, local2=local2)
