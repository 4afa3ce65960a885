import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, optimize

from ensdiv.distributions import Seed, sample
from ensdiv.divergence import custom, parse_g, plugin_estimate, renyi, split_f2
from ensdiv.ensemble import (
    EnsembleSpec,
    constraint_matrix,
    default_l_bar,
    ensemble_estimate,
    exact_residuals,
    solve_exact_weights,
    solve_relaxed_weights,
)
from ensdiv.exceptions import InfeasibleWeightsError, SingularConstraintError

from conftest import study_pair


def _check_exact(spec, wv):
    assert abs(math.fsum(wv.weights.tolist()) - 1.0) <= 1e-12
    A = constraint_matrix(spec)
    # independent residual evaluation with exact float summation
    for i in range(1, spec.d):
        assert abs(math.fsum((A[i] * wv.weights).tolist())) <= 1e-10 + 1e-15 * np.abs(A[i] * wv.weights).sum()


# --- spec -------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec([1.0, 1.0, 2.0], 2)
    with pytest.raises(ValueError):
        EnsembleSpec([0.0, 1.0], 2)
    with pytest.raises(ValueError):
        EnsembleSpec([2.0, 1.0], 2)


def test_k_map_rounds_and_clamps():
    spec = EnsembleSpec([0.01, 1.0, 2.5, 40.0], 2)
    # sqrt(100) = 10 -> 0.1 rounds to 0, 25 exact, 400 clamps
    np.testing.assert_array_equal(spec.k_raw(100), [0, 10, 25, 400])
    np.testing.assert_array_equal(spec.k_map(300, 100), [1, 10, 25, 100])


def test_default_l_bar():
    lb = default_l_bar()
    assert lb.size == 30 and lb[0] == 1.0 and lb[-1] == 3.0


def test_basis_rows():
    A = constraint_matrix(EnsembleSpec([1.0, 4.0, 9.0], 3))
    np.testing.assert_allclose(A, [[1, 1, 1], [1, 4 ** (1 / 3), 9 ** (1 / 3)], [1, 4 ** (2 / 3), 9 ** (2 / 3)]])


# --- exact solver -----------------------------------------------------------

def test_exact_two_by_two_hand_solution():
    wv = solve_exact_weights(EnsembleSpec([1.0, 4.0], 2))
    np.testing.assert_array_equal(wv.weights, [2.0, -1.0])


def test_exact_matches_lstsq_min_norm():
    spec = EnsembleSpec(np.arange(1.0, 11.0), 3)
    A = constraint_matrix(spec)
    b = np.zeros(3)
    b[0] = 1
    want = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(solve_exact_weights(spec).weights, want, rtol=1e-9, atol=1e-12)


def test_exact_min_norm_against_nullspace_perturbations():
    spec = EnsembleSpec([1.0, 2.0, 3.0, 4.0, 5.0], 3)
    w = solve_exact_weights(spec).weights
    N = linalg.null_space(constraint_matrix(spec))
    rng = np.random.default_rng(0)
    for scale in (1e-6, 1e-2, 1.0, 10.0):
        z = rng.normal(size=(N.shape[1], 2500)) * scale
        norms = np.linalg.norm(w[:, None] + N @ z, axis=0)
        assert np.min(norms - np.linalg.norm(w)) >= -1e-9


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_exact_default_l_bar_is_feasible(d):
    spec = EnsembleSpec(default_l_bar(), d)
    wv = solve_exact_weights(spec)
    _check_exact(spec, wv)
    assert math.fsum(wv.weights.tolist()) == 1.0
    assert abs(wv.sum_error) <= 1e-12
    assert np.max(np.abs(wv.residuals)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_exact_solver_returns_feasible_or_raises(d, extra, seed):
    L = d + extra
    lb = np.sort(np.random.default_rng(seed).uniform(0.5, 5.0, L))
    if np.any(np.diff(lb) <= 0):
        return
    spec = EnsembleSpec(lb, d)
    try:
        wv = solve_exact_weights(spec)
    except SingularConstraintError as exc:
        assert "relaxed" in str(exc)
        return
    _check_exact(spec, wv)
    s, gam = exact_residuals(spec, wv.weights)
    assert abs(s) <= 1e-12 and np.all(np.abs(gam) <= 1e-10)


def test_exact_weights_do_not_depend_on_data():
    spec = EnsembleSpec(default_l_bar(), 4)
    assert solve_exact_weights(spec).weights.tobytes() == solve_exact_weights(spec).weights.tobytes()


def test_exact_too_few_members():
    with pytest.raises(ValueError, match="L >= d"):
        solve_exact_weights(EnsembleSpec([1.0, 2.0], 4))


def test_exact_unrepresentable_weights_raise():
    # only eight tightly clustered members at d=8: the weights run to ~1e13
    lb = 1.0 + 0.05 * np.arange(8)
    with pytest.raises(SingularConstraintError, match="relaxed solver"):
        solve_exact_weights(EnsembleSpec(lb, 8))


# --- relaxed solver ---------------------------------------------------------

def _slsqp_objective(spec, T, eta, starts=4):
    """Independent local solve of min eps over (w, eps)."""
    A = constraint_matrix(spec)
    B = A[1:] * np.array([T ** ((spec.d - i) / (2 * spec.d)) for i in spec.J])[:, None]
    L = spec.L
    cons = [
        {"type": "eq", "fun": lambda v: np.sum(v[:L]) - 1.0},
        {"type": "ineq", "fun": lambda v: v[L] - B @ v[:L]},
        {"type": "ineq", "fun": lambda v: v[L] + B @ v[:L]},
        {"type": "ineq", "fun": lambda v: eta**2 - v[:L] @ v[:L]},
    ]
    rng = np.random.default_rng(0)
    best = math.inf
    for s in range(starts):
        w0 = np.full(L, 1.0 / L) + (0 if s == 0 else 0.1 * rng.normal(size=L))
        w0 /= w0.sum()
        v0 = np.append(w0, np.max(np.abs(B @ w0)))
        res = optimize.minimize(lambda v: v[L], v0, constraints=cons, method="SLSQP",
                                options={"ftol": 1e-14, "maxiter": 2000})
        v = res.x
        feasible = (abs(v[:L].sum() - 1) < 1e-8 and v[:L] @ v[:L] <= eta**2 * (1 + 1e-8)
                    and np.max(np.abs(B @ v[:L])) <= v[L] + 1e-8)
        if feasible:
            best = min(best, float(np.max(np.abs(B @ v[:L]))))
    return best


@pytest.mark.parametrize("T,eta", [(400, 2.0), (3000, 2.0), (1000, 1.0), (3000, 4.0)])
def test_relaxed_against_slsqp_oracle(T, eta):
    spec = EnsembleSpec(default_l_bar(), 5)
    wv = solve_relaxed_weights(spec, T, eta)
    assert abs(math.fsum(wv.weights.tolist()) - 1.0) <= 1e-12
    assert wv.norm <= eta * (1 + 1e-8)
    assert abs(wv.objective - wv.certified) <= 1e-6
    assert wv.objective <= _slsqp_objective(spec, T, eta) + 1e-6
    # a positive optimum means the norm bound is active
    if wv.objective > 1e-9:
        assert wv.norm >= eta * (1 - 1e-6)


def test_relaxed_uniform_at_norm_floor():
    spec = EnsembleSpec(default_l_bar(12), 3)
    wv = solve_relaxed_weights(spec, 1000, 1 / math.sqrt(12))
    np.testing.assert_allclose(wv.weights, np.full(12, 1 / 12), rtol=1e-14)
    assert math.fsum(wv.weights.tolist()) == 1.0


def test_relaxed_infeasible_below_floor():
    spec = EnsembleSpec(default_l_bar(12), 3)
    with pytest.raises(InfeasibleWeightsError):
        solve_relaxed_weights(spec, 1000, 0.99 / math.sqrt(12))


def test_relaxed_unbounded_norm_cancels_bias():
    spec = EnsembleSpec(default_l_bar(), 4)
    wv = solve_relaxed_weights(spec, 500, None)
    assert np.max(np.abs(wv.residuals)) <= 1e-6
    assert wv.objective <= 1e-6


def test_relaxed_generous_eta_reaches_zero_objective():
    spec = EnsembleSpec(np.arange(1.0, 11.0), 5)
    exact = solve_exact_weights(spec)
    wv = solve_relaxed_weights(spec, 3000, 3 * exact.norm)
    assert wv.objective <= 1e-6


def test_relaxed_when_exact_is_unrepresentable():
    lb = 1.0 + 0.05 * np.arange(8)
    wv = solve_relaxed_weights(EnsembleSpec(lb, 8), 3000, 2.0)
    assert wv.norm <= 2.0 * (1 + 1e-8)
    assert abs(wv.objective - wv.certified) <= 1e-6


def test_relaxed_argument_checks():
    spec = EnsembleSpec(default_l_bar(), 3)
    with pytest.raises(ValueError):
        solve_relaxed_weights(spec, 0, 2.0)
    with pytest.raises(ValueError):
        solve_relaxed_weights(spec, 100, -1.0)


def test_weight_vector_json():
    wv = solve_relaxed_weights(EnsembleSpec(default_l_bar(), 5), 1000, 2.0)
    back = json.loads(json.dumps(wv.to_dict()))
    assert back["mode"] == "relaxed" and len(back["weights"]) == 30
    assert back["norm"] == pytest.approx(wv.norm)


# --- weighted estimator -----------------------------------------------------

def _data(seed, d=3, T=600):
    f1, f2 = study_pair(d)
    s = Seed(seed)
    y = sample(f1, T, s.with_stream(0))
    ev, ref = split_f2(sample(f2, T, s.with_stream(1)), 0.5, s.with_stream(2))
    return ev, ref, y


def test_single_member_equals_plugin():
    ev, ref, y = _data(1)
    spec = EnsembleSpec([1.3], 3)
    k = int(spec.k_map(y.n, ref.n)[0])
    assert ensemble_estimate(ev, ref, y, spec, [1.0], renyi(0.8)) == plugin_estimate(ev, ref, y, k, k, renyi(0.8))


@pytest.mark.parametrize("mode", ["exact", "relaxed"])
def test_constant_g_gives_exactly_one(mode):
    ev, ref, y = _data(2)
    spec = EnsembleSpec(default_l_bar(), 3)
    wv = solve_exact_weights(spec) if mode == "exact" else solve_relaxed_weights(spec, 600, 2.0)
    assert ensemble_estimate(ev, ref, y, spec, wv, parse_g("custom:one")) == (1.0, 1.0)


def test_linear_in_weights():
    ev, ref, y = _data(3)
    spec = EnsembleSpec(default_l_bar(), 3)
    w1 = solve_exact_weights(spec).weights
    w2 = solve_relaxed_weights(spec, 600, 1.0).weights
    a = 0.3
    G1 = ensemble_estimate(ev, ref, y, spec, w1, renyi(0.8)).functional
    G2 = ensemble_estimate(ev, ref, y, spec, w2, renyi(0.8)).functional
    G = ensemble_estimate(ev, ref, y, spec, a * w1 + (1 - a) * w2, renyi(0.8)).functional
    assert G == pytest.approx(a * G1 + (1 - a) * G2, rel=1e-12)


def test_member_k_too_large_fails_before_estimating():
    ev, ref, y = _data(4, T=20)

    def boom(x):
        raise AssertionError("estimation should not start")

    spec = EnsembleSpec([1.0, 5.0], 2)
    with pytest.raises(ValueError, match="exceeds"):
        ensemble_estimate(ev, ref, y, spec, [0.5, 0.5], custom(boom))


def test_weight_length_mismatch():
    ev, ref, y = _data(5)
    with pytest.raises(ValueError):
        ensemble_estimate(ev, ref, y, EnsembleSpec([1.0, 2.0], 2), [1.0], renyi(0.8))
