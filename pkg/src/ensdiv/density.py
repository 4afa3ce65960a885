"""Pointwise density estimates.

* :class:`KnnDensityEstimator` -- ``k / (M * c_d * rho_k(x)^d)``.
* :class:`TruncatedUniformKernelEstimator` -- uniform ball kernel whose mass is
  renormalised by the volume of the ball that lies inside the support box.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .distributions import Seed, STREAM_KERNEL
from .exceptions import DuplicatePointError
from .spatial import NeighborIndex, build_index, unit_ball_volume

__all__ = [
    "KnnDensityEstimator",
    "knn_density",
    "knn_density_from_radius",
    "TruncatedUniformKernelEstimator",
    "kernel_density",
    "unit_ball_draws",
]


def knn_density_from_radius(k: int, M: int, d: int, rho) -> np.ndarray:
    """Apply the k-NN density formula to precomputed k-th neighbour radii."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        bad = int(np.flatnonzero(np.ravel(rho) <= 0)[0])
        raise DuplicatePointError(
            f"k-th neighbour distance is zero at query {bad} (k={k}): "
            "the query coincides with at least k reference points"
        )
    return k / (M * unit_ball_volume(d) * rho**d)


@dataclass(frozen=True)
class KnnDensityEstimator:
    index: NeighborIndex
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.index.M:
            raise ValueError(f"need 1 <= k <= M, got k={self.k}, M={self.index.M}")

    @classmethod
    def from_points(cls, points, k: int) -> "KnnDensityEstimator":
        return cls(build_index(points), int(k))

    @property
    def M(self) -> int:
        return self.index.M

    @property
    def d(self) -> int:
        return self.index.d

    def __call__(self, x):
        return knn_density(self, x)


def knn_density(est: KnnDensityEstimator, x):
    """k-NN density estimate at one point (float) or at each row of ``x``."""
    q = np.asarray(x, dtype=float)
    single = q.ndim <= 1 and q.size == est.d
    rho = est.index.kth(q, est.k)
    out = knn_density_from_radius(est.k, est.M, est.d, rho)
    return float(out[0]) if single else out


def unit_ball_draws(d: int, n: int, seed: Seed) -> np.ndarray:
    """``n`` uniform points in the d-dimensional unit ball."""
    rng = seed.rng()
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.random((n, 1)) ** (1.0 / d)


@dataclass(frozen=True)
class TruncatedUniformKernelEstimator:
    """Uniform-kernel density estimate with boundary renormalisation.

    Parameters
    ----------
    points : array_like, shape (M, d)
        Reference sample.
    h : float
        Kernel radius.
    box : (lower, upper), optional
        Support box. Without one the kernel is never truncated.
    mc_draws : int
        Number of uniform ball draws used to measure ``vol(ball & box)`` for
        balls that cross the boundary.
    seed : Seed
        Fixes the ball draws, so the estimate is a deterministic function of
        its inputs.
    """

    points: np.ndarray
    h: float
    box: Optional[tuple] = None
    mc_draws: int = 10_000
    seed: Seed = Seed(0, STREAM_KERNEL)
    _tree: cKDTree = field(init=False, repr=False, compare=False)
    _ball_t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(getattr(self.points, "points", self.points), dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] == 0:
            raise ValueError("kernel estimator needs at least one reference point")
        if not self.h > 0:
            raise ValueError(f"bandwidth must be positive, got {self.h}")
        if self.mc_draws < 10_000:
            raise ValueError("boundary volume needs at least 1e4 Monte Carlo draws")
        object.__setattr__(self, "points", pts)
        d = pts.shape[1]
        if self.box is not None:
            lo = np.broadcast_to(np.asarray(self.box[0], dtype=float), (d,))
            hi = np.broadcast_to(np.asarray(self.box[1], dtype=float), (d,))
            object.__setattr__(self, "box", (lo, hi))
        object.__setattr__(self, "_tree", cKDTree(pts))
        # stored axis-major: one contiguous row per coordinate
        object.__setattr__(self, "_ball_t", np.ascontiguousarray(unit_ball_draws(d, self.mc_draws, self.seed).T))

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def window_volume(self, x: np.ndarray) -> np.ndarray:
        """Volume of ``B(x, h)`` intersected with the support box, per row of ``x``."""
        full = unit_ball_volume(self.d) * self.h**self.d
        vol = np.full(x.shape[0], full)
        if self.box is None:
            return vol
        lo, hi = self.box
        # x + h*u lies in the box iff (lo - x)/h <= u <= (hi - x)/h on every axis;
        # only axes where the ball pokes out of the box need checking
        a = (lo - x) / self.h
        b = (hi - x) / self.h
        cuts = (a > -1) | (b < 1)
        ball = self._ball_t
        for i in np.flatnonzero(cuts.any(axis=1)):
            inside = None
            for j in np.flatnonzero(cuts[i]):
                ok = (ball[j] >= a[i, j]) & (ball[j] <= b[i, j])
                inside = ok if inside is None else inside & ok
            vol[i] = full * np.count_nonzero(inside) / ball.shape[1]
        return vol

    def __call__(self, x):
        return kernel_density(self, x)


def kernel_density(est: TruncatedUniformKernelEstimator, x):
    """Kernel estimate ``count(|X - x| <= h) / (M * vol(B(x, h) & box))``."""
    q = np.asarray(x, dtype=float)
    single = q.ndim <= 1 and q.size == est.d
    q = q.reshape(-1, est.d) if single or q.ndim == 2 else q[:, None]
    if q.shape[1] != est.d:
        raise ValueError(f"query dimension {q.shape[1]} does not match estimator dimension {est.d}")
    if est.box is not None:
        lo, hi = est.box
        outside = ~np.all((q >= lo) & (q <= hi), axis=1)
        if np.any(outside):
            raise ValueError(f"{int(outside.sum())} query point(s) lie outside the support box")
    counts = est._tree.query_ball_point(q, r=est.h, return_length=True)
    out = np.asarray(counts, dtype=float) / (est.M * est.window_volume(q))
    return float(out[0]) if single else out
