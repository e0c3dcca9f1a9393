import functools

import numpy as np
import pytest

from _oracles import brute_merit_2d
from sfb.core import ContractError, InclusionProblem, SeedSpec, fixed_point_residual
from sfb.ergodic import (ErgodicBoundInputs, ErgodicState, VIProblem, ergodic_bound, merit,
                         merit_many, run_ergodic, theta0, theta1_terms)
from sfb.operators import (AffineOperator, BallNormalCone, BoxNormalCone, LogisticGradient,
                           QuadraticGradient, ZeroOperator)
from sfb.oracles import OracleParams, StochasticOracle
from sfb.solver import Schedule

ROT = [[1.0, -2.0], [2.0, 1.0]]


def identity_box():
    return VIProblem(AffineOperator(np.eye(2)), BoxNormalCone([-1, -1], [1, 1]))


def rotation_ball():
    return VIProblem(AffineOperator(ROT), BallNormalCone([0.0, 0.0], 1.0))


# ---------------------------------------------------------------- problem and state

def test_vi_problem_needs_bounded_set():
    with pytest.raises(ContractError):
        VIProblem(AffineOperator(np.eye(1)), ZeroOperator())
    with pytest.raises(ContractError):
        VIProblem(AffineOperator(np.eye(1)), BoxNormalCone([-np.inf], [1.0]))
    v = rotation_ball()
    assert v.bounded and v.diameter == 2.0 and v.dim == 2


def test_state_average_and_zero_weight_error():
    st = ErgodicState(2)
    with pytest.raises(ContractError):
        st.average
    st.update([1.0, 0.0], 0.0)
    with pytest.raises(ContractError):
        st.average
    st.update([2.0, 2.0], 1.0)
    st.update([4.0, 0.0], 3.0)
    assert np.allclose(st.average, [3.5, 0.5])


# ---------------------------------------------------------------- run_ergodic

def test_constant_iterates_average_is_constant():
    # w* = 0 is a fixed point of the exact iteration
    v = rotation_ball()
    o = StochasticOracle(v.B, "exact")
    _, avg = run_ergodic(v, o, Schedule("constant", c1=0.1), [0.0, 0.0], 20, SeedSpec(0))
    assert np.array_equal(avg, np.zeros((20, 2)))


def test_two_equal_weight_steps():
    v = rotation_ball()
    o = StochasticOracle(v.B, "exact")
    tr, avg = run_ergodic(v, o, Schedule("constant", c1=0.1), [0.5, 0.0], 2, SeedSpec(0))
    assert np.allclose(avg[1], (tr.w[0] + tr.w[1]) / 2, rtol=0, atol=1e-16)


def test_noiseless_rotation_average_converges():
    v = rotation_ball()
    o = StochasticOracle(v.B, "exact")
    # constant step in (0, 2 beta); the weighted average then decays like 1/n
    _, avg = run_ergodic(v, o, Schedule("constant", c1=0.3), [0.6, 0.8], 10_000, SeedSpec(0))
    assert np.linalg.norm(avg[-1]) < 1e-2
    p = InclusionProblem(v.C, v.B)
    assert fixed_point_residual(p, [0.0, 0.0], v.B.beta) == 0.0


def test_iterates_and_averages_stay_in_set():
    v = rotation_ball()
    o = StochasticOracle(v.B, "additive_gaussian", OracleParams(2.0))
    tr, avg = run_ergodic(v, o, Schedule("power_law", c1=0.2, theta=0.6), [3.0, 0.0], 2000,
                          SeedSpec(5))
    assert np.all(np.linalg.norm(tr.w, axis=1) <= 1 + 1e-12)
    assert np.all(np.linalg.norm(avg, axis=1) <= 1 + 1e-12)
    assert np.array_equal(tr.w[0], [1.0, 0.0])
    assert tr.b_sq_norm.shape == (2000,)


def test_zero_weight_prefix_gives_nan():
    v = rotation_ball()
    o = StochasticOracle(v.B, "exact")
    s = Schedule("constant", c1=0.1, lambda_kind="explicit", lambda_value=[0.0, 0.0, 1.0])
    _, avg = run_ergodic(v, o, s, [0.5, 0.5], 3, SeedSpec(0))
    assert np.all(np.isnan(avg[:2])) and np.all(np.isfinite(avg[2]))


# ---------------------------------------------------------------- merit

def test_merit_identity_box_examples():
    v = identity_box()
    assert merit(v, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert merit(v, [2.0, 0.0]) == pytest.approx(1.0, abs=1e-9)
    ref = brute_merit_2d(lambda W: W, lambda W: np.ones(len(W), bool), ((-1, 1), (-1, 1)), [2.0, 0.0])
    assert ref == pytest.approx(1.0, abs=1e-3)


def test_merit_at_solution_small():
    assert merit(rotation_ball(), [0.0, 0.0]) <= 1e-3


def test_merit_rotation_closed_form():
    v = rotation_ball()
    rng = np.random.default_rng(8)
    U = rng.uniform(-0.6, 0.6, size=(30, 2))
    U = U[np.linalg.norm(U, axis=1) <= 2 / np.sqrt(5)]
    # interior maximizer w = M^T u / 2 gives V = 5 ||u||^2 / 4
    assert np.allclose(merit_many(v, U), 1.25 * np.sum(U**2, axis=1), rtol=1e-9, atol=1e-12)
    assert merit(v, [0.6, 0.8]) == pytest.approx(np.sqrt(5) - 1, rel=1e-9)


def test_merit_against_brute_force_nonlinear():
    X = np.array([[1.0, 0.5], [-0.3, 1.2], [0.8, -1.0]])
    B = LogisticGradient(X, [1.0, -1.0, 1.0], reg=0.5)
    v = VIProblem(B, BoxNormalCone([-1.0, -0.5], [2.0, 1.5]))
    for u in ([0.0, 0.0], [1.5, -0.4], [3.0, 2.0]):
        ref = brute_merit_2d(B._apply, lambda W: np.ones(len(W), bool), ((-1, 2), (-0.5, 1.5)), u)
        assert merit(v, u) >= ref - 1e-12
        assert merit(v, u) == pytest.approx(ref, abs=1e-5)


def test_merit_nonnegative():
    v = rotation_ball()
    U = np.random.default_rng(3).normal(scale=2, size=(20, 2))
    assert np.all(merit_many(v, U) >= -1e-3)


def test_merit_high_dimension_affine():
    rng = np.random.default_rng(1)
    d = 4
    S = rng.normal(size=(d, d))
    M = S - S.T + np.eye(d)
    v = VIProblem(AffineOperator(M), BallNormalCone(np.zeros(d), 1.0))
    u = rng.normal(size=d) * 0.2
    w = M.T @ u / 2
    assert np.linalg.norm(w) < 1
    assert merit(v, u) == pytest.approx(float((M @ w) @ (u - w)), rel=1e-9)


def test_merit_high_dimension_nonaffine_rejected():
    X = np.random.default_rng(0).normal(size=(5, 3))
    v = VIProblem(LogisticGradient(X, np.ones(5)), BallNormalCone(np.zeros(3), 1.0))
    with pytest.raises(ContractError):
        merit(v, np.zeros(3))


def test_merit_rejects_bad_input():
    with pytest.raises(ContractError):
        merit(rotation_ball(), [np.nan, 0.0])
    with pytest.raises(ContractError):
        merit(rotation_ball(), [0.0, 0.0, 0.0])


# ---------------------------------------------------------------- bound

def test_bound_simple_examples():
    v = rotation_ball()
    n = np.arange(1, 11)
    inputs = ErgodicBoundInputs(1.0, np.zeros(10), n.astype(float))
    assert np.allclose(ergodic_bound(v, inputs, n), 1.0 / n)
    inputs = ErgodicBoundInputs(0.5, np.full(5, 1.5), np.array([1, 2, 3, 3.5, 4.0]))
    assert ergodic_bound(v, inputs, 5) == 0.5


def test_bound_errors():
    v = rotation_ball()
    with pytest.raises(ContractError):
        ErgodicBoundInputs(1.0, [0.0, 1.0, 0.5], [1, 2, 3])
    inputs = ErgodicBoundInputs(1.0, [0.0, 0.0], [0.0, 1.0])
    with pytest.raises(ContractError):
        ergodic_bound(v, inputs, 1)
    with pytest.raises(ContractError):
        ergodic_bound(v, inputs, 0)


@functools.lru_cache(maxsize=None)
def _rotation_bound_inputs(N=200_000):
    # theta = 0.75, lambda = 1, E||Bw_t||^2 from a noiseless run, so theta_1n converges
    v = rotation_ball()
    o = StochasticOracle(v.B, "exact")
    s = Schedule("power_law", c1=0.2, theta=0.75)
    tr, _ = run_ergodic(v, o, s, [0.6, 0.8], N, SeedSpec(0))
    gam = s.gammas(1, N)
    th1 = np.cumsum(theta1_terms(gam, 1.0, 0.0, 0.5, tr.b_sq_norm))
    return v, ErgodicBoundInputs(theta0(v, [0.6, 0.8]), th1, np.cumsum(gam))


@pytest.mark.parametrize("n", [2000, 10_000, 50_000])
def test_bound_rate_ratio(n):
    v, inputs = _rotation_bound_inputs()
    ratio = ergodic_bound(v, inputs, 2 * n) / ergodic_bound(v, inputs, n)
    assert ratio == pytest.approx(2 ** -0.25, abs=0.02)


@pytest.mark.xfail(strict=True, reason=(
    "sum_{t<=n} t^-0.75 = 4 n^0.25 + zeta(0.75) + o(1) with zeta(0.75) ~ -3.44; the offset "
    "keeps bound(2n)/bound(n) near 0.8175 at n = 1000, 0.023 below 2^-0.25"))
def test_bound_rate_ratio_at_thousand():
    v, inputs = _rotation_bound_inputs(4000)
    ratio = ergodic_bound(v, inputs, 2000) / ergodic_bound(v, inputs, 1000)
    assert ratio == pytest.approx(2 ** -0.25, abs=0.02)


def test_theta1_terms():
    got = theta1_terms(np.array([1.0, 0.5]), np.array([1.0, 0.5]), 2.0, 0.5, np.array([4.0, 1.0]))
    expected = 0.5 * (np.array([1.0, 0.125]) * (1 + 0.25 * 2.0) * np.array([4.0, 1.0])
                      + 0.25 * np.array([1.0, 0.125]))
    assert np.allclose(got, expected, rtol=1e-15)


@pytest.mark.parametrize("C,w1", [
    (BoxNormalCone([-1, 0], [2, 1]), [0.5, 0.25]),
    (BoxNormalCone([-1, 0], [2, 1]), [3.0, -1.0]),
    (BallNormalCone([1.0, -1.0], 0.5), [0.0, 0.0]),
    (BallNormalCone([1.0, -1.0], 0.5), [1.2, -1.1]),
])
def test_theta0_against_grid(C, w1):
    v = VIProblem(AffineOperator(np.eye(2)), C)
    if isinstance(C, BoxNormalCone):
        xs, ys = np.meshgrid(np.linspace(C.lower[0], C.upper[0], 401),
                             np.linspace(C.lower[1], C.upper[1], 401))
        pts = np.column_stack([xs.ravel(), ys.ravel()])
    else:
        t = np.linspace(0, 2 * np.pi, 100_001)
        pts = C.center + C.radius * np.column_stack([np.cos(t), np.sin(t)])
    ref = 0.5 * np.max(np.sum((pts - w1) ** 2, axis=1))
    assert theta0(v, w1) == pytest.approx(ref, rel=1e-8)
