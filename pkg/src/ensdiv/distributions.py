"""Ground-truth densities: (truncated) Gaussians, samplers and an MC oracle.

The divergence oracle integrates ``g(f1/f2)`` against ``f2`` with exact
density evaluations, so its only error is Monte Carlo error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .exceptions import OracleError, TruncationError
from .functionals import GFunctional

__all__ = [
    "Seed",
    "SampleSet",
    "GaussianSpec",
    "STREAM_F1",
    "STREAM_F2",
    "STREAM_SPLIT",
    "STREAM_ORACLE",
    "STREAM_KERNEL",
    "sample",
    "density_at",
    "log_density",
    "box_mass",
    "gaussian_renyi_functional",
    "true_divergence",
    "OracleResult",
]

STREAM_F1 = 0
STREAM_F2 = 1
STREAM_SPLIT = 2
STREAM_ORACLE = 3
STREAM_KERNEL = 4

MIN_ACCEPTANCE = 1e-6
_MAX_BATCH = 2_000_000


@dataclass(frozen=True)
class Seed:
    """Reproducible random stream: a 64-bit value plus a stream id.

    ``path`` lets callers derive independent sub-streams (one per trial, say)
    without any bookkeeping: ``Seed(7).child(T, d, trial)``.
    """

    value: int
    stream: int = 0
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.value) < 2**64:
            raise ValueError(f"seed value must be a 64-bit unsigned integer, got {self.value}")

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.value), spawn_key=tuple(int(p) for p in self.path) + (int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "Seed":
        return Seed(self.value, self.stream, self.path + tuple(int(k) for k in keys))

    def with_stream(self, stream: int) -> "Seed":
        return Seed(self.value, stream, self.path)


@dataclass(frozen=True)
class SampleSet:
    """Immutable ``(n, d)`` array of draws with provenance."""

    points: np.ndarray
    source: str = ""
    seed: Optional[Seed] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError(f"sample array must be 2-D, got shape {pts.shape}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


def _as_vector(value, d=None, name="vector"):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if d is not None and arr.size == 1 and d > 1:
        arr = np.full(d, arr[0])
    return arr


@dataclass(frozen=True)
class GaussianSpec:
    """Multivariate normal, optionally truncated to an axis-aligned box.

    Parameters
    ----------
    mean : array_like, shape (d,)
    covariance : array_like, shape (d, d)
        Symmetric positive definite.
    box : pair of array_like, optional
        ``(lower, upper)`` corners of the truncation box.
    """

    mean: np.ndarray
    covariance: np.ndarray
    box: Optional[tuple] = None
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _log_mass: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _as_vector(self.mean, name="mean")
        d = mean.size
        cov = np.array(self.covariance, dtype=float)
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
        if self.box is not None:
            lo = _as_vector(self.box[0], d, "box lower corner")
            hi = _as_vector(self.box[1], d, "box upper corner")
            if lo.shape != (d,) or hi.shape != (d,):
                raise ValueError("box corners must have length d")
            if np.any(hi <= lo):
                raise ValueError("truncation box must have positive volume")
            lo.flags.writeable = False
            hi.flags.writeable = False
            object.__setattr__(self, "box", (lo, hi))
        object.__setattr__(self, "_log_mass", _log_box_mass(self))

    @property
    def d(self) -> int:
        return self.mean.size

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.covariance == np.diag(np.diag(self.covariance))))

    @classmethod
    def isotropic(cls, mean, variance: float, d: int, box=None) -> "GaussianSpec":
        """``N(mean * 1_d, variance * I_d)``; a scalar box means the cube ``[lo, hi]^d``."""
        mu = _as_vector(mean, d, "mean")
        return cls(mu, float(variance) * np.eye(d), box)

    def to_dict(self) -> dict:
        out = {"mean": self.mean.tolist(), "covariance": self.covariance.tolist()}
        out["box"] = None if self.box is None else [self.box[0].tolist(), self.box[1].tolist()]
        return out

    @classmethod
    def from_dict(cls, data: dict, d: Optional[int] = None) -> "GaussianSpec":
        """Build a spec from a config mapping.

        ``mean`` may be a scalar (broadcast over ``d``) or a list.
        ``covariance`` may be a scalar ``s`` (meaning ``s * I``), a list (a
        diagonal) or a nested list (the full matrix). ``box`` may be omitted,
        ``[lo, hi]`` with scalars (a cube) or two corner lists.
        """
        unknown = set(data) - {"mean", "covariance", "box"}
        if unknown:
            raise ValueError(f"unknown Gaussian spec keys: {sorted(unknown)}")
        mean = np.atleast_1d(np.asarray(data["mean"], dtype=float))
        if d is None:
            d = mean.size
            cov_raw = np.asarray(data.get("covariance", 1.0), dtype=float)
            if mean.size == 1 and cov_raw.ndim >= 1:
                d = cov_raw.shape[0]
        mean = _as_vector(mean, d, "mean")
        if mean.size != d:
            raise ValueError(f"mean has length {mean.size}, expected {d}")
        cov = np.asarray(data.get("covariance", 1.0), dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        elif cov.ndim == 1:
            cov = np.diag(_as_vector(cov, d, "covariance diagonal"))
        box = data.get("box")
        if box is not None:
            if len(box) != 2:
                raise ValueError("box must be [lower, upper]")
            box = (box[0], box[1])
        return cls(mean, cov, box)


def _log_box_mass(spec: GaussianSpec) -> float:
    if spec.box is None:
        return 0.0
    lo, hi = spec.box
    if spec.is_diagonal:
        sd = np.sqrt(np.diag(spec.covariance))
        a = (lo - spec.mean) / sd
        b = (hi - spec.mean) / sd
        # per-axis Phi(b) - Phi(a), evaluated in the upper tail when a > 0 to keep precision
        m = np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
        with np.errstate(divide="ignore"):
            logm = np.log(m)
        return float(np.sum(logm))
    # seeded so the quasi-MC integration, and hence every density value, is reproducible
    mvn = stats.multivariate_normal(spec.mean, spec.covariance, seed=0)
    mvn.abseps, mvn.releps = 1e-9, 1e-7
    mass = float(mvn.cdf(hi, lower_limit=lo))
    return float(np.log(mass)) if mass > 0 else -np.inf


def box_mass(spec: GaussianSpec) -> float:
    """Probability the untruncated Gaussian assigns to the truncation box."""
    return float(np.exp(spec._log_mass))


def _in_box(spec: GaussianSpec, x: np.ndarray) -> np.ndarray:
    lo, hi = spec.box
    return np.all((x >= lo) & (x <= hi), axis=1)


def _draw_untruncated(spec: GaussianSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, spec.d))
    return spec.mean + z @ spec._chol.T


def _draw(spec: GaussianSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    if spec.box is None:
        return _draw_untruncated(spec, rng, n)
    mass = box_mass(spec)
    if not mass >= MIN_ACCEPTANCE:
        raise TruncationError(
            f"rejection acceptance rate {mass:.3g} is below {MIN_ACCEPTANCE:g} for {spec!r}"
        )
    chunks, have = [], 0
    while have < n:
        need = n - have
        batch = int(min(_MAX_BATCH, max(64, np.ceil(1.1 * need / mass) + 16)))
        x = _draw_untruncated(spec, rng, batch)
        x = x[_in_box(spec, x)]
        chunks.append(x[:need])
        have += chunks[-1].shape[0]
    return np.concatenate(chunks, axis=0)


def sample(spec: GaussianSpec, n: int, seed: Seed, source: str = "") -> SampleSet:
    """Draw ``n`` i.i.d. points; truncation is by rejection against the box."""
    if n < 1:
        raise ValueError(f"sample size must be >= 1, got {n}")
    return SampleSet(_draw(spec, seed.rng(), int(n)), source=source, seed=seed)


def _points(spec: GaussianSpec, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != spec.d:
        raise ValueError(f"point has dimension {arr.shape[-1]}, density has dimension {spec.d}")
    return arr, single


def log_density(spec: GaussianSpec, x) -> np.ndarray | float:
    """Log of the (renormalised) density; ``-inf`` outside the box."""
    pts, single = _points(spec, x)
    diff = pts - spec.mean
    sol = np.linalg.solve(spec._chol, diff.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(spec._chol)))
    out = -0.5 * (maha + spec.d * np.log(2 * np.pi) + logdet) - spec._log_mass
    if spec.box is not None:
        out = np.where(_in_box(spec, pts), out, -np.inf)
    return float(out[0]) if single else out


def density_at(spec: GaussianSpec, x) -> np.ndarray | float:
    """Density value(s) at ``x`` (a point of length d or an ``(n, d)`` array)."""
    return np.exp(log_density(spec, x))


def gaussian_renyi_functional(f1: GaussianSpec, f2: GaussianSpec, alpha: float) -> float:
    """Closed form of ``int f1^alpha f2^(1-alpha)`` for untruncated Gaussians."""
    if f1.box is not None or f2.box is not None:
        raise ValueError("closed form only holds for untruncated Gaussians")
    s1, s2 = f1.covariance, f2.covariance
    s_a = (1 - alpha) * s1 + alpha * s2
    if np.linalg.eigvalsh(s_a).min() <= 0:
        raise ValueError("mixed covariance is not positive definite for this alpha")
    dm = f1.mean - f2.mean
    quad = dm @ np.linalg.solve(s_a, dm)
    _, ld_a = np.linalg.slogdet(s_a)
    _, ld_1 = np.linalg.slogdet(s1)
    _, ld_2 = np.linalg.slogdet(s2)
    log_g = 0.5 * alpha * (alpha - 1) * quad - 0.5 * (ld_a - (1 - alpha) * ld_1 - alpha * ld_2)
    return float(np.exp(log_g))


@dataclass(frozen=True)
class OracleResult:
    value: float
    std_error: float
    n: int
    closed_form: Optional[float] = None

    def __iter__(self):
        yield self.value
        yield self.std_error


def true_divergence(
    f1: GaussianSpec,
    f2: GaussianSpec,
    g: GFunctional,
    mc_budget: int = 100_000,
    seed: Seed = Seed(0, STREAM_ORACLE),
    chunk: int = 500_000,
) -> OracleResult:
    """Monte Carlo value of ``G(f1, f2) = E_{f2}[g(f1(X)/f2(X))]``.

    Returns an :class:`OracleResult`, which unpacks as ``(value, std_error)``.
    For untruncated Gaussians under a Renyi g the estimate is checked against
    the closed form and a gap above four standard errors raises
    :class:`OracleError`.
    """
    if f1.d != f2.d:
        raise ValueError(f"dimension mismatch: {f1.d} vs {f2.d}")
    if (f1.box is None) != (f2.box is None) or (
        f1.box is not None and not (np.array_equal(f1.box[0], f2.box[0]) and np.array_equal(f1.box[1], f2.box[1]))
    ):
        raise ValueError("f1 and f2 must share the same truncation box")
    if mc_budget < 100_000:
        raise ValueError(f"mc_budget must be >= 1e5, got {mc_budget}")

    rng = seed.rng()
    count, mean, m2 = 0, 0.0, 0.0
    while count < mc_budget:
        m = min(chunk, mc_budget - count)
        x = _draw(f2, rng, m)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            ratio = np.exp(log_density(f1, x) - log_density(f2, x))
            vals = g(ratio)
        if not np.all(np.isfinite(ratio)) or not np.any(ratio > 0):
            raise OracleError("density ratio overflowed or vanished: supports do not overlap")
        if not np.all(np.isfinite(vals)):
            raise OracleError(f"g is not finite on {np.sum(~np.isfinite(vals))} oracle draws")
        # Chan et al. pairwise update of mean and sum of squared deviations
        cm = float(np.mean(vals))
        cm2 = float(np.sum((vals - cm) ** 2))
        delta = cm - mean
        total = count + m
        mean += delta * m / total
        m2 += cm2 + delta * delta * count * m / total
        count = total
    se = float(np.sqrt(m2 / (count - 1) / count))

    closed = None
    if g.kind == "renyi" and f1.box is None:
        closed = gaussian_renyi_functional(f1, f2, g.alpha)
        if abs(mean - closed) > 4 * se:
            raise OracleError(
                f"MC oracle {mean:.6g} +/- {se:.2g} disagrees with closed form {closed:.6g}"
            )
    return OracleResult(float(mean), se, count, closed)
