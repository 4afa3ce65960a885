"""Optimally weighted ensembles of k-NN plug-in estimators.

Member ``l`` uses ``k(l) = round(l * sqrt(M2))`` neighbours. Its bias expands
in powers ``l^(i/d)``, ``i = 1..d-1``, and the weights are chosen to cancel
those terms:

* :func:`solve_exact_weights` -- minimum-norm ``w`` with ``sum(w) = 1`` and
  ``sum_l w(l) l^(i/d) = 0`` for every ``i``.
* :func:`solve_relaxed_weights` -- minimises the worst scaled residual
  ``max_i |gamma_w(i)| T^((d-i)/(2d))`` subject to ``sum(w) = 1`` and
  ``||w||_2 <= eta``. Trading exact cancellation for a norm bound keeps the
  variance under control at finite sample sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import cvxpy as cp
import mpmath
import numpy as np

from .divergence import Estimate, _finish, _pts, plugin_estimates_for_ks, round_half_up
from .exceptions import InfeasibleWeightsError, SingularConstraintError
from .functionals import GFunctional

__all__ = [
    "EnsembleSpec",
    "WeightVector",
    "default_l_bar",
    "constraint_matrix",
    "exact_residuals",
    "solve_exact_weights",
    "solve_relaxed_weights",
    "ensemble_estimate",
    "SUM_TOL",
    "RESIDUAL_TOL",
]

SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10
_DPS = 60


def default_l_bar(L: int = 30, lo: float = 1.0, hi: float = 3.0) -> np.ndarray:
    return np.linspace(lo, hi, L)


@dataclass(frozen=True)
class EnsembleSpec:
    """Index set ``l_bar`` and dimension ``d`` of a weighted ensemble."""

    l_bar: np.ndarray
    d: int

    def __post_init__(self):
        l_bar = np.array(self.l_bar, dtype=float, copy=True).ravel()
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if l_bar.size == 0 or np.any(l_bar <= 0):
            raise ValueError("ensemble indices must be strictly positive")
        if np.any(np.diff(l_bar) <= 0):
            raise ValueError("ensemble indices must be strictly increasing")
        l_bar.flags.writeable = False
        object.__setattr__(self, "l_bar", l_bar)

    @property
    def L(self) -> int:
        return self.l_bar.size

    @property
    def J(self) -> range:
        return range(1, self.d)

    def k_raw(self, M2: int) -> np.ndarray:
        return np.array([round_half_up(l * math.sqrt(M2)) for l in self.l_bar], dtype=int)

    def k_map(self, M1: int, M2: int) -> np.ndarray:
        """Neighbour count per member, clamped to ``[1, min(M1, M2)]``."""
        return np.clip(self.k_raw(M2), 1, min(M1, M2))

    def to_dict(self) -> dict:
        return {"l_bar": self.l_bar.tolist(), "d": self.d}


def constraint_matrix(spec: EnsembleSpec) -> np.ndarray:
    """Rows: all ones, then ``l^(i/d)`` for ``i`` in ``J``; shape ``(d, L)``."""
    rows = [np.ones(spec.L)] + [spec.l_bar ** (i / spec.d) for i in spec.J]
    return np.vstack(rows)


def _basis_mp(spec: EnsembleSpec):
    ls = [mpmath.mpf(float(l)) for l in spec.l_bar]
    return [[l ** (mpmath.mpf(i) / spec.d) for l in ls] for i in spec.J]


def exact_residuals(spec: EnsembleSpec, w: np.ndarray) -> tuple[float, np.ndarray]:
    """``(sum(w) - 1, gamma_w)`` evaluated without rounding error in the sums."""
    with mpmath.workdps(_DPS):
        wm = [mpmath.mpf(float(x)) for x in w]
        total = mpmath.fsum(wm) - 1
        gam = [mpmath.fsum(a * b for a, b in zip(wm, row)) for row in _basis_mp(spec)]
        return float(total), np.array([float(x) for x in gam])


@dataclass(frozen=True)
class WeightVector:
    """Ensemble weights plus feasibility diagnostics.

    ``objective`` is the worst scaled residual ``max_i |gamma_w(i)| T^((d-i)/(2d))``
    (zero for the exact solver) and ``certified`` the optimum reported by the
    convex solver, when one was used.
    """

    weights: np.ndarray
    residuals: np.ndarray
    sum_error: float
    mode: str = "exact"
    objective: float = 0.0
    certified: Optional[float] = None
    eta: Optional[float] = None
    T: Optional[int] = None
    l_bar: np.ndarray = field(default=None, repr=False)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def __len__(self):
        return self.weights.size

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "l_bar": None if self.l_bar is None else self.l_bar.tolist(),
            "weights": self.weights.tolist(),
            "residuals": self.residuals.tolist(),
            "sum_error": self.sum_error,
            "norm": self.norm,
            "objective": self.objective,
            "certified": self.certified,
            "eta": self.eta,
            "T": self.T,
        }


def _fix_sum(w: np.ndarray) -> np.ndarray:
    """Nudge the smallest-magnitude weight until ``fsum(w) == 1.0`` exactly.

    Adjusting a small entry keeps the correction below its own ulp, so the
    exact sum of the float weights lands within half an ulp of one.
    """
    w = np.array(w, dtype=float)
    j = int(np.argmin(np.abs(w)))
    for _ in range(8):
        err = math.fsum(w.tolist()) - 1.0
        if err == 0.0:
            break
        w[j] -= err
    return w


def _scales(spec: EnsembleSpec, T: float) -> np.ndarray:
    return np.array([float(T) ** ((spec.d - i) / (2 * spec.d)) for i in spec.J])


def solve_exact_weights(spec: EnsembleSpec) -> WeightVector:
    """Minimum-norm weights that sum to one and cancel every bias term.

    The Gram system ``(A A^T) lam = e_1`` is solved at 60 significant digits,
    ``w = A^T lam`` is rounded to float64, and feasibility is then verified
    with exact summation. :class:`SingularConstraintError` is raised when the
    rounded vector cannot meet ``|sum(w) - 1| <= 1e-12`` and
    ``|gamma_w(i)| <= 1e-10``; that happens once the weights grow so large
    that float64 spacing alone exceeds the tolerance.
    """
    d, L = spec.d, spec.L
    if L <= d - 1:
        raise ValueError(f"need L >= d={d} ensemble members so that all {d} constraints can hold, got L={L}")
    with mpmath.workdps(_DPS):
        A = mpmath.matrix([[1] * L] + _basis_mp(spec))
        gram = A * A.T
        rhs = mpmath.matrix([1] + [0] * (d - 1))
        try:
            lam = mpmath.lu_solve(gram, rhs)
        except ZeroDivisionError as exc:
            raise SingularConstraintError("constraint Gram matrix is singular; spread l_bar wider") from exc
        w_mp = A.T * lam
        w = np.array([float(x) for x in w_mp])
    w = _fix_sum(w)
    sum_err, gam = exact_residuals(spec, w)
    if abs(sum_err) > SUM_TOL or (gam.size and np.max(np.abs(gam)) > RESIDUAL_TOL):
        cond = float(np.linalg.cond(constraint_matrix(spec))) ** 2
        raise SingularConstraintError(
            f"exact weights are not representable to tolerance (||w||={np.linalg.norm(w):.3g}, "
            f"max|gamma|={np.max(np.abs(gam)):.3g}, Gram condition ~{cond:.2g}); "
            "use a wider-spread l_bar or the relaxed solver"
        )
    return WeightVector(w, gam, sum_err, "exact", 0.0, None, None, None, spec.l_bar)


def _scaled_objective(spec: EnsembleSpec, w: np.ndarray, T: float) -> tuple[float, float, np.ndarray]:
    sum_err, gam = exact_residuals(spec, w)
    obj = float(np.max(np.abs(gam) * _scales(spec, T))) if gam.size else 0.0
    return obj, sum_err, gam


def solve_relaxed_weights(spec: EnsembleSpec, T: int, eta: Optional[float]) -> WeightVector:
    """Weights minimising the worst scaled bias residual under ``||w||_2 <= eta``.

    ``eta=None`` removes the norm bound. The second-order cone program is
    solved with Clarabel through cvxpy; the returned vector is then polished
    so that ``sum(w) == 1`` and ``||w|| <= eta`` hold to rounding.
    """
    L = spec.L
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    floor = 1.0 / math.sqrt(L)
    if eta is not None:
        if not eta > 0:
            raise ValueError(f"eta must be positive, got {eta}")
        if eta < floor * (1 - 1e-12):
            raise InfeasibleWeightsError(
                f"eta={eta:.6g} is below 1/sqrt(L)={floor:.6g}; no weights summing to one fit"
            )
        if eta <= floor * (1 + 1e-12):
            w = np.full(L, 1.0 / L)
            w = _fix_sum(w)
            obj, sum_err, gam = _scaled_objective(spec, w, T)
            return WeightVector(w, gam, sum_err, "relaxed", obj, obj, eta, int(T), spec.l_bar)

    if L >= spec.d:
        try:
            exact = solve_exact_weights(spec)
        except SingularConstraintError:
            exact = None
        if exact is not None and (eta is None or exact.norm <= eta):
            # zero objective is attainable and the exact solution attains it
            return WeightVector(exact.weights, exact.residuals, exact.sum_error, "relaxed",
                                0.0, 0.0, eta, int(T), spec.l_bar)

    A = constraint_matrix(spec)
    B = A[1:] * _scales(spec, T)[:, None]
    w = cp.Variable(L)
    eps = cp.Variable()
    cons = [cp.sum(w) == 1]
    if B.shape[0]:
        cons += [B @ w <= eps, -B @ w <= eps]
    else:
        cons += [eps >= 0]
    if eta is not None:
        cons.append(cp.norm(w, 2) <= eta)
    prob = cp.Problem(cp.Minimize(eps), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    if prob.status != cp.OPTIMAL or w.value is None:
        raise InfeasibleWeightsError(f"relaxed weight problem did not solve: {prob.status}")
    certified = max(float(prob.value), 0.0)

    wv = _fix_sum(np.asarray(w.value, dtype=float))
    if eta is not None and np.linalg.norm(wv) > eta:
        # pull toward the uniform vector (the minimum-norm point with sum one)
        u = np.full(L, 1.0 / L)
        dev = wv - u
        t = math.sqrt(max(eta**2 - 1.0 / L, 0.0)) / np.linalg.norm(dev) * (1 - 1e-12)
        wv = _fix_sum(u + min(t, 1.0) * dev)
    obj, sum_err, gam = _scaled_objective(spec, wv, T)
    return WeightVector(wv, gam, sum_err, "relaxed", obj, certified, eta, int(T), spec.l_bar)


def ensemble_estimate(
    eval_set,
    ref_set_f2,
    samples_f1,
    spec: EnsembleSpec,
    w: WeightVector | Sequence[float],
    g: GFunctional,
) -> Estimate:
    """Weighted combination of member plug-in estimates on one shared split."""
    weights = np.asarray(getattr(w, "weights", w), dtype=float)
    if weights.size != spec.L:
        raise ValueError(f"{weights.size} weights for {spec.L} ensemble members")
    ev, ref, y = _pts(eval_set), _pts(ref_set_f2), _pts(samples_f1)
    M1, M2 = y.shape[0], ref.shape[0]
    raw = spec.k_raw(M2)
    if raw.max() > min(M1, M2):
        raise ValueError(
            f"k(l)={int(raw.max())} for l={spec.l_bar[-1]:g} exceeds min(M1, M2)={min(M1, M2)}"
        )
    ks = spec.k_map(M1, M2)
    members = plugin_estimates_for_ks(ev, ref, y, ks, g)
    G = math.fsum((weights * members).tolist())
    return _finish(g, G)
