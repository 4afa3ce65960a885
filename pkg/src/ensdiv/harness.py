"""Monte Carlo experiments: MSE, bias and variance of every estimator.

One *trial* draws ``M1`` points from f1 and ``T`` from f2, splits the f2
sample once and evaluates all requested estimators on that data. The true
functional comes from :func:`ensdiv.distributions.true_divergence`, computed
once per dimension.

Everything is seeded from the config's master seed through ``(T, d, trial)``
keyed sub-streams, so results do not depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .distributions import (
    STREAM_F1,
    STREAM_F2,
    STREAM_KERNEL,
    STREAM_ORACLE,
    STREAM_SPLIT,
    GaussianSpec,
    OracleResult,
    Seed,
    sample,
    true_divergence,
)
from .density import knn_density_from_radius
from .divergence import default_k, mean_of_g, plugin_estimate_kernel, round_half_up, split_f2
from .ensemble import EnsembleSpec, WeightVector, default_l_bar, solve_exact_weights, solve_relaxed_weights
from .exceptions import EnsdivError
from .functionals import GFunctional, parse_g
from .spatial import build_index

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ESTIMATORS",
    "RECORD_HEADER",
    "SUMMARY_HEADER",
    "ExperimentConfig",
    "TrialRecord",
    "SummaryRow",
    "ExperimentResult",
    "load_config",
    "run_experiment",
    "summarize",
    "reference_curve",
    "loglog_slope",
    "write_records_csv",
    "write_summary_csv",
    "records_csv",
    "summary_csv",
]

ESTIMATORS = ("knn_plugin", "kernel_plugin", "ensemble_exact", "ensemble_relaxed")
RECORD_HEADER = [
    "T", "d", "trial", "estimator", "estimate_functional", "estimate_divergence",
    "truth", "sq_error", "failed", "reason", "wall_ms",
]
SUMMARY_HEADER = ["T", "d", "estimator", "n", "mse", "bias", "variance", "mean", "std"]

# estimator failures that become failed records instead of aborting the run
_RECOVERABLE = (EnsdivError, ValueError, ArithmeticError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a Monte Carlo sweep.

    ``f1`` and ``f2`` are Gaussian spec mappings (see
    :meth:`GaussianSpec.from_dict`); scalar entries are broadcast so one
    config can cover a whole ``d_grid``.
    """

    f1: dict
    f2: dict
    g: str = "renyi:0.8"
    estimators: tuple = ESTIMATORS
    T_grid: tuple = (100, 200, 400, 700, 1000, 1500, 2000, 3000)
    d_grid: tuple = (5,)
    trials: int = 100
    seed: int = 0
    alpha_frac: float = 0.5
    m1_frac: float = 1.0
    k_schedule: str = "sqrt"
    l_bar: Optional[tuple] = None
    L: int = 30
    l_min: float = 1.0
    l_max: float = 3.0
    eta: Optional[float] = 2.0
    oracle_budget: int = 10_000_000
    kernel_mc_draws: int = 10_000
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "T_grid", tuple(int(t) for t in self.T_grid))
        object.__setattr__(self, "d_grid", tuple(int(d) for d in self.d_grid))
        if self.l_bar is not None:
            object.__setattr__(self, "l_bar", tuple(float(x) for x in self.l_bar))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.T_grid or not self.d_grid or not self.estimators:
            raise ValueError("T_grid, d_grid and estimators must be nonempty")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        if len(set(self.estimators)) != len(self.estimators):
            raise ValueError("estimators must not repeat")
        if min(self.T_grid) < 2 or min(self.d_grid) < 1:
            raise ValueError("T values must be >= 2 and d values >= 1")
        if not 0 < self.alpha_frac < 1:
            raise ValueError("alpha_frac must lie in (0, 1)")
        if self.m1_frac <= 0:
            raise ValueError("m1_frac must be positive")
        if self.k_schedule != "sqrt" and not str(self.k_schedule).isdigit():
            raise ValueError("k_schedule must be 'sqrt' or a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        parse_g(self.g)
        for d in self.d_grid:
            self.spec_pair(d)

    @property
    def functional(self) -> GFunctional:
        return parse_g(self.g)

    def spec_pair(self, d: int) -> tuple[GaussianSpec, GaussianSpec]:
        return GaussianSpec.from_dict(self.f1, d), GaussianSpec.from_dict(self.f2, d)

    def ensemble_spec(self, d: int) -> EnsembleSpec:
        l_bar = self.l_bar if self.l_bar is not None else default_l_bar(self.L, self.l_min, self.l_max)
        return EnsembleSpec(np.asarray(l_bar, dtype=float), d)

    def baseline_k(self, M2: int) -> int:
        if self.k_schedule == "sqrt":
            return default_k(M2)
        return min(int(self.k_schedule), M2)

    def M1(self, T: int) -> int:
        return max(1, round_half_up(self.m1_frac * T))

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from the nested layout used by config files.

        Top-level keys map to fields; the ``[ensemble]``, ``[oracle]`` and
        ``[kernel]`` sections hold ``l_bar/L/l_min/l_max/eta``, ``budget`` and
        ``mc_draws`` respectively. Unknown keys raise ``ValueError``.
        """
        data = dict(data)
        flat = {}
        sections = {
            "ensemble": {"l_bar": "l_bar", "L": "L", "l_min": "l_min", "l_max": "l_max", "eta": "eta"},
            "oracle": {"budget": "oracle_budget"},
            "kernel": {"mc_draws": "kernel_mc_draws"},
        }
        for section, keys in sections.items():
            sub = data.pop(section, None) or {}
            bad = set(sub) - set(keys)
            if bad:
                raise ValueError(f"unknown keys in [{section}]: {sorted(bad)}")
            for key, target in keys.items():
                if key in sub:
                    flat[target] = sub[key]
        top = set(cls.__dataclass_fields__) - set(flat) - {
            "l_bar", "L", "l_min", "l_max", "eta", "oracle_budget", "kernel_mc_draws"
        }
        bad = set(data) - top
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        flat.update(data)
        if "eta" in flat and flat["eta"] in ("inf", "none", None):
            flat["eta"] = None
        return cls(**flat)


def load_config(path) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from a TOML file."""
    with open(path, "rb") as fh:
        return ExperimentConfig.from_dict(tomllib.load(fh))


@dataclass(frozen=True)
class TrialRecord:
    T: int
    d: int
    trial: int
    estimator: str
    estimate_functional: float
    estimate_divergence: float
    truth: float
    sq_error: float
    failed: bool = False
    reason: str = ""
    wall_ms: Optional[float] = None

    def row(self) -> list:
        return [
            self.T, self.d, self.trial, self.estimator,
            _fmt(self.estimate_functional), _fmt(self.estimate_divergence),
            _fmt(self.truth), _fmt(self.sq_error), int(self.failed), self.reason,
            "" if self.wall_ms is None else f"{self.wall_ms:.3f}",
        ]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def _failed(T, d, trial, name, truth, reason) -> TrialRecord:
    return TrialRecord(T, d, trial, name, math.nan, math.nan, truth, math.nan, True, reason)


def _reason(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    truths: dict = field(default_factory=dict)
    truth_errors: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    weight_errors: dict = field(default_factory=dict)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self.records)

    def summary(self) -> list:
        se = {d: r.std_error for d, r in self.truths.items()}
        g = self.config.functional
        div = {}
        for d, r in self.truths.items():
            try:
                div[d] = g.post_transform(r.value)
            except EnsdivError:
                div[d] = None
        return summarize(self.records, oracle_se=se, truth_divergence=div)

    def diagnostics(self) -> dict:
        cfg = self.config
        g = cfg.functional
        weights = []
        for (T, d, mode), wv in sorted(self.weights.items()):
            weights.append({"T": T, "d": d, **wv.to_dict()})
        for (T, d, mode), msg in sorted(self.weight_errors.items()):
            weights.append({"T": T, "d": d, "mode": mode, "error": msg})
        truths = {}
        for d, r in sorted(self.truths.items()):
            try:
                div = g.post_transform(r.value)
            except EnsdivError:
                div = None
            truths[str(d)] = {"functional": r.value, "std_error": r.std_error, "n": r.n,
                              "closed_form": r.closed_form, "divergence": div}
        for d, msg in sorted(self.truth_errors.items()):
            truths[str(d)] = {"error": msg}
        cells = []
        for row in self.summary():
            cells.append({"T": row.T, "d": row.d, "estimator": row.estimator, "n": row.n,
                          "n_failed": row.n_failed, "valid": row.valid, "note": row.note,
                          "mse_divergence": row.mse_divergence})
        return {"config": cfg.to_dict(), "truth": truths, "weights": weights, "cells": cells}


def _trial(cfg, T, d, trial, f1, f2, g, truth, ens_spec, weight_map) -> list:
    """All estimator records for one (T, d, trial) work unit."""
    names = cfg.estimators
    if truth is None:
        return [_failed(T, d, trial, n, math.nan, "oracle unavailable") for n in names]
    base = Seed(cfg.seed, 0, (T, d, trial))
    M1 = cfg.M1(T)
    try:
        y = sample(f1, M1, base.with_stream(STREAM_F1), "f1")
        x = sample(f2, T, base.with_stream(STREAM_F2), "f2")
        ev, ref = split_f2(x, cfg.alpha_frac, base.with_stream(STREAM_SPLIT))
    except _RECOVERABLE as exc:
        return [_failed(T, d, trial, n, truth, _reason(exc)) for n in names]
    M2 = ref.n
    k0 = cfg.baseline_k(M2)
    out = []

    def record(name, fn):
        t0 = time.perf_counter()
        try:
            G, div = fn()
        except _RECOVERABLE as exc:
            out.append(_failed(T, d, trial, name, truth, _reason(exc)))
            return
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_time else None
        out.append(TrialRecord(T, d, trial, name, G, div, truth, (G - truth) ** 2, False, "", wall))

    ens_wanted = any(n.startswith("ensemble") for n in names)
    ks_raw = ens_spec.k_raw(M2)
    ens_ok = ks_raw.max() <= min(M1, M2)
    ks = ens_spec.k_map(M1, M2)
    cache = {}

    def member_values():
        # one neighbour query up to the largest k serves the baseline and every member
        if not cache:
            need = {k0} | (set(ks.tolist()) if ens_wanted and ens_ok else set())
            kmax = max(need)
            rho2 = build_index(ref).query(ev.points, kmax)
            rho1 = build_index(y).query(ev.points, kmax)
            for k in sorted(need):
                try:
                    f1h = knn_density_from_radius(k, M1, d, rho1[:, k - 1])
                    f2h = knn_density_from_radius(k, M2, d, rho2[:, k - 1])
                    cache[k] = mean_of_g(g, f1h / f2h)
                except _RECOVERABLE as exc:
                    cache[k] = exc
        return cache

    def value(k):
        v = member_values()[k]
        if isinstance(v, BaseException):
            raise v
        return v

    def knn():
        G = value(k0)
        return G, g.post_transform(G)

    def kernel():
        return plugin_estimate_kernel(ev, ref, y, k0, k0, g, f2.box, cfg.kernel_mc_draws,
                                      base.with_stream(STREAM_KERNEL))

    def ens(mode):
        def fn():
            wv = weight_map.get(mode)
            if isinstance(wv, str):
                raise EnsdivError(wv)
            if not ens_ok:
                raise ValueError(f"k(l)={int(ks_raw.max())} exceeds min(M1, M2)={min(M1, M2)}")
            G = math.fsum((wv.weights * np.array([value(int(k)) for k in ks])).tolist())
            return G, g.post_transform(G)
        return fn

    fns = {"knn_plugin": knn, "kernel_plugin": kernel,
           "ensemble_exact": ens("exact"), "ensemble_relaxed": ens("relaxed")}
    for name in names:
        record(name, fns[name])
    return out


def run_experiment(
    config: ExperimentConfig,
    threads: int = 1,
    truth_cache: Optional[dict] = None,
) -> ExperimentResult:
    """Run every (T, d, trial) cell of the sweep.

    Parameters
    ----------
    config : ExperimentConfig
    threads : int
        Worker threads for trials. Output does not depend on it.
    truth_cache : dict, optional
        Shared across calls to avoid recomputing the oracle; keyed by the
        dimension, specs, g, budget and seed.

    Returns
    -------
    ExperimentResult
        Iterates as the ``TrialRecord`` stream, ordered by
        ``(T, d, trial, estimator)``.
    """
    cfg = config
    g = cfg.functional
    result = ExperimentResult(cfg, [])
    cache = truth_cache if truth_cache is not None else {}
    specs = {d: cfg.spec_pair(d) for d in cfg.d_grid}

    for d in cfg.d_grid:
        f1, f2 = specs[d]
        key = (d, json.dumps([f1.to_dict(), f2.to_dict()]), g.name, cfg.oracle_budget, cfg.seed)
        if key not in cache:
            try:
                cache[key] = true_divergence(f1, f2, g, cfg.oracle_budget, Seed(cfg.seed, STREAM_ORACLE, (d,)))
            except _RECOVERABLE as exc:
                cache[key] = _reason(exc)
        if isinstance(cache[key], OracleResult):
            result.truths[d] = cache[key]
        else:
            result.truth_errors[d] = cache[key]

    wanted = [n.split("_", 1)[1] for n in cfg.estimators if n.startswith("ensemble")]
    weight_maps = {}
    for T in cfg.T_grid:
        for d in cfg.d_grid:
            spec = cfg.ensemble_spec(d)
            wm = {}
            for mode in wanted:
                try:
                    wv = solve_exact_weights(spec) if mode == "exact" else solve_relaxed_weights(spec, T, cfg.eta)
                    wm[mode] = wv
                    result.weights[(T, d, mode)] = wv
                except _RECOVERABLE as exc:
                    wm[mode] = _reason(exc)
                    result.weight_errors[(T, d, mode)] = wm[mode]
            weight_maps[(T, d)] = wm

    units = [(T, d, trial) for T in cfg.T_grid for d in cfg.d_grid for trial in range(cfg.trials)]

    def work(unit):
        T, d, trial = unit
        truth = result.truths.get(d)
        f1, f2 = specs[d]
        return _trial(cfg, T, d, trial, f1, f2, g, None if truth is None else truth.value,
                      cfg.ensemble_spec(d), weight_maps[(T, d)])

    if threads <= 1:
        chunks = [work(u) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, units))
    order = {name: i for i, name in enumerate(cfg.estimators)}
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.T, r.d, r.trial, order[r.estimator]))
    result.records = records
    return result


@dataclass(frozen=True)
class SummaryRow:
    T: int
    d: int
    estimator: str
    n: int
    mse: float
    bias: float
    variance: float
    mean: float
    std: float
    n_failed: int = 0
    valid: bool = True
    note: str = ""
    mse_divergence: Optional[float] = None

    def row(self) -> list:
        return [self.T, self.d, self.estimator, self.n, _fmt(self.mse), _fmt(self.bias),
                _fmt(self.variance), _fmt(self.mean), _fmt(self.std)]


def summarize(records: Iterable[TrialRecord], oracle_se: Optional[dict] = None,
              truth_divergence: Optional[dict] = None) -> list:
    """Per-(T, d, estimator) MSE, bias, variance, mean and std.

    Population forms are used, so ``mse == bias**2 + variance`` up to
    rounding. Failed records are excluded and counted. A cell is marked
    invalid when it has no successful record, or when the oracle standard
    error (``oracle_se[d]``) exceeds 5% of the smallest RMSE among the
    estimators at that ``(T, d)``.
    """
    cells: dict = {}
    for r in records:
        cells.setdefault((r.T, r.d, r.estimator), []).append(r)
    rows = []
    for (T, d, name), recs in cells.items():
        ok = [r for r in recs if not r.failed]
        n_failed = len(recs) - len(ok)
        if not ok:
            nan = math.nan
            rows.append(SummaryRow(T, d, name, 0, nan, nan, nan, nan, nan, n_failed, False, "all trials failed"))
            continue
        est = np.array([r.estimate_functional for r in ok])
        truth = ok[0].truth
        n = est.size
        mean = math.fsum(est.tolist()) / n
        mse = math.fsum(((est - truth) ** 2).tolist()) / n
        var = math.fsum(((est - mean) ** 2).tolist()) / n
        div = np.array([r.estimate_divergence for r in ok])
        mse_div = None
        if truth_divergence and d in truth_divergence and truth_divergence[d] is not None:
            mse_div = math.fsum(((div - truth_divergence[d]) ** 2).tolist()) / n
        rows.append(SummaryRow(T, d, name, n, mse, mean - truth, var, mean, math.sqrt(var),
                               n_failed, True, "", mse_div))

    if oracle_se:
        best: dict = {}
        for row in rows:
            if row.n:
                key = (row.T, row.d)
                best[key] = min(best.get(key, math.inf), math.sqrt(row.mse))
        flagged = []
        for row in rows:
            se = oracle_se.get(row.d)
            limit = best.get((row.T, row.d))
            if row.valid and se is not None and limit is not None and se > 0.05 * limit:
                row = SummaryRow(**{**row.__dict__, "valid": False,
                                    "note": f"oracle std error {se:.3g} exceeds 5% of best RMSE {limit:.3g}"})
            flagged.append(row)
        rows = flagged
    rows.sort(key=lambda r: (r.T, r.d, r.estimator))
    return rows


def reference_curve(T_grid: Sequence[int], c: float) -> list:
    """Rows ``(T, c / T)`` of the parametric-rate guide line."""
    if not c > 0:
        raise ValueError(f"scale constant must be positive, got {c}")
    return [(int(T), c / T) for T in T_grid]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def records_csv(records: Iterable[TrialRecord]) -> str:
    return _csv_text(RECORD_HEADER, (r.row() for r in records))


def summary_csv(rows: Iterable[SummaryRow]) -> str:
    return _csv_text(SUMMARY_HEADER, (r.row() for r in rows))


def write_records_csv(records: Iterable[TrialRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(records_csv(records))


def write_summary_csv(rows: Iterable[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(summary_csv(rows))
