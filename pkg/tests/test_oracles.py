import numpy as np
import pytest

from sfb.core import ConfigError, ContractError, SeedSpec, derive_stream
from sfb.operators import AffineOperator, LeastSquaresGradient, QuadraticGradient
from sfb.oracles import (FiniteSumOperator, OracleParams, StochasticOracle, oracle_from_spec,
                         verify_moments)


def stream(seed=0, rep=0):
    return derive_stream(SeedSpec(seed, rep))


def test_exact_sample_is_bw():
    B = AffineOperator([[2.0, 1.0], [1.0, 3.0]])
    o = StochasticOracle(B, "exact")
    w = np.array([0.3, -1.2])
    assert np.array_equal(o.sample(w, stream()), B.apply(w))


def test_sample_counts():
    o = StochasticOracle(QuadraticGradient([0.0]), "additive_gaussian", OracleParams(1.0))
    s = stream()
    for _ in range(5):
        o.sample([1.0], s)
    assert s.n_samples == 5


def test_additive_mean_within_clt_tolerance():
    d = 3
    B = QuadraticGradient(np.zeros(d))
    o = StochasticOracle(B, "additive_gaussian", OracleParams(1.0))
    w = np.array([1.0, -2.0, 0.5])
    N = 1_000_000
    W = np.broadcast_to(w, (N, d))
    est = o.estimate(W, B._apply(W), o.draw(stream(11), N, d))
    err = est.mean(axis=0) - B.apply(w)
    assert np.sqrt(np.mean(err**2)) <= 0.005 * np.sqrt(d)


def test_finite_sum_exhaustive_expectation():
    comps = [QuadraticGradient([0.0]), QuadraticGradient([2.0])]
    B = FiniteSumOperator(comps)
    for w in (-1.0, 0.0, 3.5):
        mean = np.mean([c.apply([w]) for c in comps], axis=0)
        assert np.allclose(mean, [w - 1.0])
        assert np.allclose(B.apply([w]), [w - 1.0])
    assert B.beta == 1.0


def test_finite_sum_needs_components():
    with pytest.raises(ContractError):
        StochasticOracle(None, "finite_sum_sampling", OracleParams(1.0), components=[])
    with pytest.raises(ContractError):
        FiniteSumOperator([])


def test_finite_sum_draws_every_component():
    comps = [QuadraticGradient([float(c)]) for c in range(4)]
    o = StochasticOracle(None, "finite_sum_sampling", OracleParams(2.0), components=comps)
    s = stream(3)
    draws = {float(o.sample([0.0], s)[0]) for _ in range(200)}
    assert draws == {0.0, -1.0, -2.0, -3.0}


def test_params_validation():
    with pytest.raises(ContractError):
        OracleParams(-1.0)
    with pytest.raises(ContractError):
        OracleParams(1.0, alpha=2.0, alpha_bar=1.0)
    p = OracleParams(1.0, alpha=[0.5, 0.25], alpha_bar=1.0)
    assert list(p.alpha_at([1, 2, 3, 10])) == [0.5, 0.25, 0.25, 0.25]
    assert float(OracleParams(1.0, alpha_bar=0.3).alpha_at(7)) == 0.3


def test_unknown_noise_model():
    with pytest.raises(ContractError):
        StochasticOracle(QuadraticGradient([0.0]), "cauchy")
    with pytest.raises(ConfigError):
        oracle_from_spec({"noise_model": "cauchy"}, QuadraticGradient([0.0]))


def test_spec_round_trip():
    B = QuadraticGradient([0.0, 1.0])
    o = StochasticOracle(B, "relative_gaussian", OracleParams(0.5, alpha_bar=2.0), noise_scale=0.7)
    o2 = oracle_from_spec(o.to_spec(), B)
    assert o2.to_spec() == o.to_spec()
    assert o2.noise_scale == 0.7


def test_exact_oracle_moments():
    o = StochasticOracle(QuadraticGradient([1.0, 2.0]), "exact")
    rep = verify_moments(o, [[0.0, 0.0], [3.0, -1.0]], 10_000, stream())
    assert rep.passed
    for p in rep.points:
        assert p.bias_norm == 0.0 and p.empirical_variance == 0.0


def test_verify_moments_needs_enough_draws():
    o = StochasticOracle(QuadraticGradient([0.0]), "exact")
    with pytest.raises(ContractError):
        verify_moments(o, [[0.0]], 9_999, stream())


def _catalog_oracles():
    X = np.random.default_rng(4).normal(size=(6, 3))
    y = np.random.default_rng(5).normal(size=6)
    comps = [LeastSquaresGradient(X[i:i + 1], y[i:i + 1]) for i in range(6)]
    B3 = QuadraticGradient([1.0, -1.0, 0.5], L=2.0)
    # finite-sum sampling: sigma^2 must dominate the spread of the components;
    # alpha_bar covers the growth with ||w||
    return {
        "exact": StochasticOracle(B3, "exact"),
        "additive": StochasticOracle(B3, "additive_gaussian", OracleParams(0.8)),
        "relative": StochasticOracle(B3, "relative_gaussian", OracleParams(0.8, alpha_bar=1.5)),
        "finite_sum": StochasticOracle(None, "finite_sum_sampling",
                                       OracleParams(FINITE_SUM_SIGMA, alpha_bar=FINITE_SUM_ALPHA),
                                       components=comps),
    }


FINITE_SUM_SIGMA = 6.0
FINITE_SUM_ALPHA = 50.0


@pytest.mark.parametrize("name", ["exact", "additive", "relative", "finite_sum"])
def test_catalog_oracles_pass_moment_check(name):
    o = _catalog_oracles()[name]
    pts = np.random.default_rng(7).normal(size=(5, 3))
    rep = verify_moments(o, pts, 20_000, stream(100))
    assert rep.passed, [(p.bias_norm, p.bias_tol, p.variance_ratio) for p in rep.points]


def test_additive_misdeclared_fails_on_variance():
    B = QuadraticGradient([0.0, 0.0])
    o = StochasticOracle(B, "additive_gaussian", OracleParams(0.5), noise_scale=1.0)
    rep = verify_moments(o, [[1.0, 1.0]], 20_000, stream(9))
    assert not rep.passed
    assert rep.points[0].variance_ratio == pytest.approx(4.0, rel=0.05)


@pytest.mark.parametrize("bw_norm", [0.0, 1.0, 10.0])
def test_relative_noise_tracks_declared_variance(bw_norm):
    B = QuadraticGradient([0.0, 0.0])
    o = StochasticOracle(B, "relative_gaussian", OracleParams(0.5, alpha_bar=2.0))
    w = np.array([bw_norm, 0.0])
    N = 40_000
    rep = verify_moments(o, [w], N, stream(21))
    p = rep.points[0]
    assert p.declared_variance == pytest.approx(0.25 * (1 + 2.0 * bw_norm**2))
    assert abs(p.variance_ratio - 1.0) <= 5.0 / np.sqrt(N) * np.sqrt(2)
    assert rep.passed
