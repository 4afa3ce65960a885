"""Exact k-nearest-neighbour distances and the unit-ball volume."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "NeighborIndex",
    "build_index",
    "kth_distance",
    "brute_force_distances",
    "unit_ball_volume",
]

# extra candidates fetched from the tree so that last-ulp disagreements between
# the tree's internal distance and ours cannot change the k-th order statistic
_SLACK = 4


def _euclidean(diff: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis, accumulated coordinate by coordinate.

    Every distance in this module goes through here so that index queries and
    the brute-force scan agree bit for bit.
    """
    acc = np.zeros(diff.shape[:-1])
    for j in range(diff.shape[-1]):
        acc += diff[..., j] * diff[..., j]
    return np.sqrt(acc)


def _as_points(points) -> np.ndarray:
    arr = getattr(points, "points", points)
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


class NeighborIndex:
    """Immutable exact k-NN index over a reference set of ``M`` points.

    Parameters
    ----------
    points : array_like or SampleSet, shape (M, d)
    brute_force : bool
        Skip the kd-tree and scan every point. Results are identical.
    """

    def __init__(self, points, brute_force: bool = False):
        pts = np.array(_as_points(points), dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("cannot build a neighbour index over an empty point set")
        pts.flags.writeable = False
        self.points = pts
        self.brute_force = brute_force
        self._tree = None if brute_force else cKDTree(pts)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def _check(self, queries, k: int) -> np.ndarray:
        q = np.asarray(queries, dtype=float)
        if q.ndim == 1:
            q = q[None, :] if q.size == self.d else q[:, None]
        if q.ndim != 2 or q.shape[1] != self.d:
            raise ValueError(f"query dimension {q.shape[-1]} does not match index dimension {self.d}")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if k > self.M:
            raise ValueError(f"k={k} exceeds the number of reference points M={self.M}")
        return q

    def query(self, queries, k: int) -> np.ndarray:
        """Sorted distances to the ``k`` nearest points, shape ``(n, k)``.

        Column ``j`` holds the ``(j+1)``-th order statistic of the distances.
        """
        q = self._check(queries, int(k))
        if self._tree is None:
            return brute_force_distances(self.points, q, k)
        kq = min(self.M, int(k) + _SLACK)
        tree_dist, idx = self._tree.query(q, k=kq)
        tree_dist = np.asarray(tree_dist).reshape(q.shape[0], kq)
        idx = np.asarray(idx).reshape(q.shape[0], kq)
        dist = _euclidean(self.points[idx] - q[:, None, :])
        dist.sort(axis=1)
        out = dist[:, :k]
        if kq < self.M:
            # a point outside the candidate list could still tie the k-th distance
            # to within rounding; rescan those rows
            close = tree_dist[:, -1] <= out[:, -1] * (1 + 1e-12)
            if np.any(close):
                out[close] = brute_force_distances(self.points, q[close], k)
        return out

    def kth(self, queries, k: int) -> np.ndarray:
        return self.query(queries, k)[:, k - 1]


def build_index(points, brute_force: bool = False) -> NeighborIndex:
    return NeighborIndex(points, brute_force=brute_force)


def kth_distance(index: NeighborIndex, query, k: int):
    """Distance from ``query`` to its k-th closest stored point.

    A single point (length ``d``) gives a float; an ``(n, d)`` array gives an
    array of ``n`` distances.
    """
    q = np.asarray(query, dtype=float)
    single = q.ndim <= 1 and (q.size == index.d)
    out = index.kth(q, k)
    return float(out[0]) if single else out


def brute_force_distances(points, queries, k: int, block: int = 256) -> np.ndarray:
    """Sort-based k-NN distances by scanning every reference point."""
    pts = _as_points(points)
    q = _as_points(queries)
    if k > pts.shape[0]:
        raise ValueError(f"k={k} exceeds the number of reference points M={pts.shape[0]}")
    out = np.empty((q.shape[0], k))
    for start in range(0, q.shape[0], block):
        dist = _euclidean(pts[None, :, :] - q[start:start + block, None, :])
        dist.sort(axis=1)
        out[start:start + block] = dist[:, :k]
    return out


def unit_ball_volume(d: int) -> float:
    """Volume of the unit Euclidean ball in ``d`` dimensions."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if d <= 300:
        # factorial forms keep small cases exact (d=1 gives 2.0)
        m = d // 2
        if d % 2 == 0:
            return math.pi**m / math.factorial(m)
        return float(Fraction(2**d * math.factorial(m), math.factorial(d))) * math.pi**m
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1))
