"""Plug-in estimation of divergence functionals from two samples.

The f2 sample is split into ``N`` evaluation points and ``M2`` reference
points. Both densities are estimated at the evaluation points (f1 from its
own ``M1`` points, f2 from the reference half), and ``G`` is the empirical
mean of ``g`` applied to the estimated likelihood ratio.

Sums over evaluation points use :func:`math.fsum`, so the result does not
depend on row order or on how the work was partitioned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .density import TruncatedUniformKernelEstimator, kernel_density, knn_density_from_radius
from .distributions import STREAM_KERNEL, SampleSet, Seed
from .exceptions import EstimationError
from .functionals import GFunctional, custom, kl, parse_g, renyi
from .spatial import build_index

__all__ = [
    "GFunctional",
    "renyi",
    "kl",
    "custom",
    "parse_g",
    "Estimate",
    "SplitConfig",
    "LikelihoodRatioField",
    "round_half_up",
    "default_k",
    "split_f2",
    "likelihood_ratio",
    "plugin_estimate",
    "plugin_estimates_for_ks",
    "plugin_estimate_kernel",
    "mean_of_g",
]


class Estimate(NamedTuple):
    functional: float
    divergence: float


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_k(M: int) -> int:
    """Baseline neighbour count ``round(sqrt(M))`` clamped to ``[1, M]``."""
    return min(max(round_half_up(math.sqrt(M)), 1), M)


@dataclass(frozen=True)
class SplitConfig:
    """Sample budgets and neighbour counts for one plug-in estimate."""

    T: int
    M1: int
    k1: int
    k2: int
    alpha_frac: float = 0.5

    def __post_init__(self):
        if not 0 < self.alpha_frac < 1:
            raise ValueError(f"alpha_frac must lie in (0, 1), got {self.alpha_frac}")
        if self.N < 1:
            raise ValueError(f"split leaves no evaluation points (T={self.T}, alpha_frac={self.alpha_frac})")
        if not 1 <= self.k2 <= self.M2:
            raise ValueError(f"need 1 <= k2 <= M2, got k2={self.k2}, M2={self.M2}")
        if not 1 <= self.k1 <= self.M1:
            raise ValueError(f"need 1 <= k1 <= M1, got k1={self.k1}, M1={self.M1}")

    @property
    def M2(self) -> int:
        return round_half_up(self.alpha_frac * self.T)

    @property
    def N(self) -> int:
        return self.T - self.M2


def _pts(samples) -> np.ndarray:
    arr = np.asarray(getattr(samples, "points", samples), dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def split_f2(samples, alpha_frac: float = 0.5, seed: Seed = Seed(0)) -> tuple[SampleSet, SampleSet]:
    """Randomly partition the f2 sample into ``(eval_set, ref_set)``.

    ``ref_set`` has ``M2 = round(alpha_frac * T)`` points, ``eval_set`` the
    remaining ``N = T - M2``.
    """
    pts = _pts(samples)
    T = pts.shape[0]
    if T < 2:
        raise ValueError(f"need at least two f2 points to split, got {T}")
    if not 0 < alpha_frac < 1:
        raise ValueError(f"alpha_frac must lie in (0, 1), got {alpha_frac}")
    M2 = round_half_up(alpha_frac * T)
    N = T - M2
    if M2 < 1 or N < 1:
        raise ValueError(f"split of T={T} with alpha_frac={alpha_frac} leaves an empty side")
    perm = seed.rng().permutation(T)
    source = getattr(samples, "source", "")
    return (
        SampleSet(pts[perm[:N]], source=f"{source}:eval", seed=seed),
        SampleSet(pts[perm[N:]], source=f"{source}:ref", seed=seed),
    )


@dataclass(frozen=True)
class LikelihoodRatioField:
    """Estimated ratios ``f1_hat / f2_hat`` at the evaluation points."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)) or np.any(self.values <= 0):
            raise EstimationError("likelihood ratio estimates must be positive and finite")


def _check_dims(*arrays):
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise ValueError(f"inconsistent dimensions across samples: {sorted(dims)}")
    return dims.pop()


def _knn_ratio(rho1, rho2, k1, k2, M1, M2, d):
    f1 = knn_density_from_radius(k1, M1, d, rho1)
    f2 = knn_density_from_radius(k2, M2, d, rho2)
    return f1 / f2


def likelihood_ratio(eval_set, ref_set_f2, samples_f1, k1: int, k2: int) -> LikelihoodRatioField:
    ev, ref, y = _pts(eval_set), _pts(ref_set_f2), _pts(samples_f1)
    d = _check_dims(ev, ref, y)
    rho2 = build_index(ref).kth(ev, k2)
    rho1 = build_index(y).kth(ev, k1)
    return LikelihoodRatioField(ev, _knn_ratio(rho1, rho2, k1, k2, y.shape[0], ref.shape[0], d))


def mean_of_g(g: GFunctional, ratio: np.ndarray) -> float:
    """Order-independent mean of ``g`` over the ratio values."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        vals = np.asarray(g(ratio), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise EstimationError(f"g is not finite at {int(np.sum(~np.isfinite(vals)))} evaluation point(s)")
    return math.fsum(vals.tolist()) / vals.size


def _finish(g: GFunctional, G: float) -> Estimate:
    return Estimate(G, g.post_transform(G))


def plugin_estimate(eval_set, ref_set_f2, samples_f1, k1: int, k2: int, g: GFunctional) -> Estimate:
    """k-NN plug-in estimate of ``G(f1, f2)`` and the matching divergence."""
    field = likelihood_ratio(eval_set, ref_set_f2, samples_f1, k1, k2)
    return _finish(g, mean_of_g(g, field.values))


def plugin_estimates_for_ks(
    eval_set, ref_set_f2, samples_f1, ks: Sequence[int], g: GFunctional
) -> np.ndarray:
    """Functional estimates with ``k1 = k2 = k`` for every ``k`` in ``ks``.

    Neighbour distances are queried once up to ``max(ks)`` and shared, which
    is how the ensemble evaluates all of its members on one data split.
    Each entry equals ``plugin_estimate(..., k, k, g).functional`` exactly.
    """
    ev, ref, y = _pts(eval_set), _pts(ref_set_f2), _pts(samples_f1)
    d = _check_dims(ev, ref, y)
    ks = [int(k) for k in ks]
    kmax = max(ks)
    rho2 = build_index(ref).query(ev, kmax)
    rho1 = build_index(y).query(ev, kmax)
    out = np.empty(len(ks))
    for j, k in enumerate(ks):
        ratio = _knn_ratio(rho1[:, k - 1], rho2[:, k - 1], k, k, y.shape[0], ref.shape[0], d)
        out[j] = mean_of_g(g, ratio)
    return out


def plugin_estimate_kernel(
    eval_set,
    ref_set_f2,
    samples_f1,
    k1: int,
    k2: int,
    g: GFunctional,
    box: Optional[tuple] = None,
    mc_draws: int = 10_000,
    seed: Seed = Seed(0, STREAM_KERNEL),
) -> Estimate:
    """Truncated uniform-kernel plug-in estimate.

    Bandwidths follow ``h_i = (k_i / M_i)^(1/d)``. An empty window gives an
    infinite (f2) or zero (f1) ratio at that point; :class:`EstimationError`
    is raised only if the resulting estimate is not finite, so a bounded g
    still yields a value.
    """
    ev, ref, y = _pts(eval_set), _pts(ref_set_f2), _pts(samples_f1)
    d = _check_dims(ev, ref, y)
    M1, M2 = y.shape[0], ref.shape[0]
    if not 1 <= k1 <= M1 or not 1 <= k2 <= M2:
        raise ValueError(f"need 1 <= k_i <= M_i, got k1={k1}, M1={M1}, k2={k2}, M2={M2}")
    est1 = TruncatedUniformKernelEstimator(y, (k1 / M1) ** (1.0 / d), box, mc_draws, seed)
    est2 = TruncatedUniformKernelEstimator(ref, (k2 / M2) ** (1.0 / d), box, mc_draws, seed)
    f2 = kernel_density(est2, ev)
    f1 = kernel_density(est1, ev)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = f1 / f2
    try:
        G = mean_of_g(g, ratio)
    except EstimationError as exc:
        empty = int(np.sum(f2 <= 0))
        raise EstimationError(f"{exc}; empty f2 kernel window at {empty} evaluation point(s)") from None
    return _finish(g, G)
