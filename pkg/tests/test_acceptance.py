"""Acceptance suite: ten criteria, each printing one ``PASS``/``FAIL`` line.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Every criterion is a function returning ``(passed, detail)``; the tests only
print the verdict and assert it, so tolerances live in one place.
"""

import functools
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _oracles import chung_sequence, grid_prox, lasso_cd, lasso_optimality_gap  # noqa: E402
from sfb.bounds import ChungParams, RateConstants  # noqa: E402
from sfb.core import InclusionProblem, SeedSpec, derive_stream  # noqa: E402
from sfb.harness import (ExperimentConfig, build, compare_to_bound, fejer_pairs, fit_rate,  # noqa: E402
                         log_grid, run_experiment)
from sfb.operators import (L1Subdifferential, LeastSquaresGradient, QuadraticGradient,  # noqa: E402
                           ScalarPenalty, SeparablePenalty, ZeroOperator, separable_prox_step)
from sfb.oracles import OracleParams, StochasticOracle, verify_moments  # noqa: E402
from sfb.solver import Schedule, check_assumptions, run  # noqa: E402

DIM = 10
CENTER = np.linspace(-1.0, 1.0, DIM).tolist()


def quadratic_config(theta, c1, **over):
    cfg = dict(
        mode="inclusion",
        problem={"A": {"kind": "zero"},
                 "B": {"kind": "gradient_quadratic", "center": CENTER, "L": 1.0},
                 "known_solution": CENTER},
        oracle={"noise_model": "additive_gaussian", "sigma": 1.0},
        schedule={"gamma_kind": "power_law", "c1": c1, "theta": theta, "lambda_value": 1.0},
        w1=[3.0] * DIM, n_steps=10_000, n_replications=200, master_seed=2024, epsilon=1.0,
    )
    cfg.update(over)
    return cfg


# theta = 1 with c1 = 2 and eps = 1 gives c = c1 * mu * eps = 2
EXP1 = quadratic_config(theta=1.0, c1=2.0)
EXP2 = quadratic_config(theta=0.7, c1=1.0)
EXP5 = dict(
    mode="ergodic_vi",
    problem={"B": {"kind": "affine", "M": [[1.0, -2.0], [2.0, 1.0]]},
             "C": {"kind": "normal_cone_ball", "center": [0.0, 0.0], "radius": 1.0}},
    oracle={"noise_model": "additive_gaussian", "sigma": 0.5},
    schedule={"gamma_kind": "power_law", "c1": 0.2, "theta": 0.75, "lambda_value": 1.0},
    w1=[0.6, 0.8], n_steps=10_000, n_replications=200, master_seed=77, epsilon=1.0,
    record_grid=sorted(set(log_grid(10_000, 30).tolist()) | {100}),
)


@functools.lru_cache(maxsize=None)
def exp1_report():
    t0 = time.perf_counter()
    rep = run_experiment(EXP1)
    return rep, time.perf_counter() - t0


# ---------------------------------------------------------------- criteria

def criterion_1():
    rep, seconds = exp1_report()
    slope, hw = fit_rate(rep, (1_000, 10_000))
    k = rep.rate_constants
    verdict = compare_to_bound(rep, k)
    c = RateConstants.from_dict(k).c
    ok = c >= 2 and -1.25 <= slope <= -0.8 and verdict.pass_fraction >= 0.95 and seconds < 60
    return ok, (f"c={c:g} slope={slope:.3f}+-{hw:.3f} in [-1.25,-0.8], "
                f"bound pass {verdict.pass_fraction:.0%} of {len(verdict.points)}, {seconds:.1f}s")


def criterion_2():
    rep = run_experiment(EXP2)
    slope, hw = fit_rate(rep, (1_000, 10_000))
    return -0.95 <= slope <= -0.5, f"slope={slope:.3f}+-{hw:.3f} in [-0.95,-0.5]"


def chung_tuples(count=100, seed=11, n_max=10_000):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        alpha = 1.0 if rng.random() < 0.3 else rng.uniform(0.1, 1.0)
        c = rng.uniform(0.1, 4.0)
        tau = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
        s = rng.uniform(0.0, 10.0)
        p = ChungParams(alpha, c, tau, s)
        if 2 * p.n0 + 2 >= n_max:
            continue
        out.append(p)
    return out


def criterion_3(n_max=10_000):
    violations = 0
    checked = 0
    worst = 0.0
    for p in chung_tuples(n_max=n_max):
        n0 = p.n0
        seq = np.array(chung_sequence(p.alpha, p.c, p.tau, p.s_start, n0, n_max))
        n = np.arange(2 * n0, n_max)        # bound(n) covers s_{n+1}
        s_next = seq[n + 1 - n0]
        b = np.asarray(p.bound(n))
        violations += int(np.sum(s_next > b))
        checked += n.size
        worst = max(worst, float(np.max(s_next / b)))
    return violations == 0, f"{violations} violations over {checked} (tuple, n) pairs, max ratio {worst:.3f}"


def criterion_4():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 5))
    y = X @ np.array([1.5, 0.0, -0.7, 0.0, 0.3]) + 0.2 * rng.normal(size=40)
    weight = 0.1
    ref = lasso_cd(X, y, weight)
    gap = lasso_optimality_gap(X, y, weight, ref)
    B = LeastSquaresGradient(X, y)
    p = InclusionProblem(L1Subdifferential(weight), B, known_solution=ref)
    o = StochasticOracle(B, "exact")
    traj = run(p, o, Schedule("constant", c1=B.beta), np.zeros(5), 4000, SeedSpec(0, 0))
    dist = np.sqrt(traj.sq_dist)
    rises = int(np.sum(np.diff(dist) > 1e-12))
    ok = gap < 1e-12 and dist[-1] <= 1e-6 and rises == 0
    return ok, f"final distance {dist[-1]:.2e}, {rises} increases, oracle gap {gap:.1e}"


def criterion_5():
    rep = run_experiment(EXP5)
    g = list(rep.grid)
    m100, m_end = rep.merit_of_mean[g.index(100)], rep.merit_of_mean[g.index(10_000)]
    fin = np.isfinite(rep.ergodic_bound)
    slack = rep.ergodic_bound[fin] + 5.0 * rep.merit_stderr[fin] - rep.merit_of_mean[fin]
    ok = m_end <= 0.4 * m100 and bool(np.all(slack >= 0))
    return ok, (f"V(n=1e4)/V(n=100)={m_end / m100:.3f} <= 0.4, "
                f"{int(np.sum(slack < 0))} of {int(fin.sum())} points above bound")


def criterion_6(draws=100):
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(draws):
        pens = [ScalarPenalty("abs_weighted", rng.uniform(0, 2)),
                ScalarPenalty("square_weighted", rng.uniform(0, 3)),
                ScalarPenalty("indicator_interval", lower=-rng.uniform(0, 1), upper=rng.uniform(0, 1)),
                ScalarPenalty("zero")]
        nu = rng.uniform(0, 2)
        gamma = rng.uniform(0.05, 3)
        z = rng.normal(scale=3, size=4)
        got = separable_prox_step(SeparablePenalty(pens, nu=nu), gamma, z)
        for k, pen in enumerate(pens):
            def g(v, pen=pen):
                return pen.value(v) + 0.5 * nu * v * v
            lo = hi = None
            if pen.kind == "indicator_interval":
                lo, hi = pen.lower, pen.upper
            worst = max(worst, abs(got[k] - grid_prox(g, z[k], gamma, lo, hi)))
    return worst <= 1e-6, f"max |difference| {worst:.1e} over {draws} draws"


# (beta, sigma, alpha_bar, eps, c1, theta); gamma_1 = c1 is the largest step
A3_TABLE = [
    (1.0, 0.0, 0.0, 1.0, 1.0, 1.0),
    (1.0, 0.0, 0.0, 1.0, 1.01, 1.0),
    (1.0, 1.0, 1.0, 1.0, 0.33, 0.7),
    (1.0, 1.0, 1.0, 1.0, 0.34, 0.7),
    (0.5, 0.5, 2.0, 0.5, 0.37, 0.6),
    (0.5, 0.5, 2.0, 0.5, 0.38, 0.6),
    (2.0, 0.0, 5.0, 1.5, 0.99, 1.0),
    (2.0, 0.0, 5.0, 1.5, 1.01, 1.0),
    (0.2, 2.0, 0.1, 0.1, 0.063, 0.9),
    (0.2, 2.0, 0.1, 0.1, 0.065, 0.9),
    (1.0, 0.3, 10.0, 0.5, 0.43, 0.55),
    (1.0, 0.3, 10.0, 0.5, 0.44, 0.55),
    (4.0, 1.0, 0.0, 1.9, 0.39, 1.0),
    (4.0, 1.0, 0.0, 1.9, 0.41, 1.0),
    (0.1, 0.1, 100.0, 1.0, 0.033, 0.75),
    (0.1, 0.1, 100.0, 1.0, 0.034, 0.75),
    (1.0, 2.0, 0.5, 0.2, 0.36, 0.5),
    (1.0, 2.0, 0.5, 0.2, 0.37, 0.5),
    (3.0, 0.0, 0.0, 0.01, 5.9, 0.8),
    (3.0, 0.0, 0.0, 0.01, 6.0, 0.8),
]


def criterion_7():
    agree = 0
    for beta, sigma, abar, eps, c1, theta in A3_TABLE:
        expected = c1 <= (2.0 - eps) * beta / (1.0 + 2.0 * sigma**2 * abar)
        B = QuadraticGradient([0.0, 0.0], L=1.0 / beta)
        p = InclusionProblem(ZeroOperator(), B, known_solution=[0.0, 0.0])
        o = StochasticOracle(B, "relative_gaussian", OracleParams(sigma, alpha_bar=abar))
        got = check_assumptions(p, o, Schedule("power_law", c1=c1, theta=theta), eps, 1000).a3_ok
        agree += got == expected
    n = len(A3_TABLE)
    return agree == n, f"{agree}/{n} cases agree"


def criterion_8():
    rep, _ = exp1_report()
    st = build(ExperimentConfig.from_dict(EXP1))
    chi = check_assumptions(st.problem, st.oracle, st.schedule, 1.0, EXP1["n_steps"]).chi_sq_seq
    pairs = fejer_pairs(rep, EXP1["oracle"]["sigma"], chi)
    bad = [(a, b) for a, b, lhs, rhs in pairs if lhs > rhs]
    return not bad, f"{len(pairs) - len(bad)}/{len(pairs)} consecutive pairs satisfy the decrease"


def criterion_9():
    X = np.random.default_rng(4).normal(size=(6, 3))
    y = np.random.default_rng(5).normal(size=6)
    comps = [LeastSquaresGradient(X[i:i + 1], y[i:i + 1]) for i in range(6)]
    B3 = QuadraticGradient([1.0, -1.0, 0.5], L=2.0)
    honest = {
        "exact": StochasticOracle(B3, "exact"),
        "additive_gaussian": StochasticOracle(B3, "additive_gaussian", OracleParams(0.8)),
        "relative_gaussian": StochasticOracle(B3, "relative_gaussian",
                                              OracleParams(0.8, alpha_bar=1.5)),
        "finite_sum_sampling": StochasticOracle(None, "finite_sum_sampling",
                                                OracleParams(6.0, alpha_bar=50.0), components=comps),
    }
    # declared sigma is half the sigma actually used to draw noise
    misdeclared = {
        "additive_gaussian": StochasticOracle(B3, "additive_gaussian", OracleParams(0.4),
                                              noise_scale=0.8),
        "relative_gaussian": StochasticOracle(B3, "relative_gaussian",
                                              OracleParams(0.4, alpha_bar=1.5), noise_scale=0.8),
    }
    pts = np.random.default_rng(7).normal(size=(5, 3))
    passed = {k: verify_moments(o, pts, 20_000, derive_stream(SeedSpec(100, i))).passed
              for i, (k, o) in enumerate(honest.items())}
    caught = {k: not verify_moments(o, pts, 20_000, derive_stream(SeedSpec(200, i))).passed
              for i, (k, o) in enumerate(misdeclared.items())}
    ok = all(passed.values()) and all(caught.values())
    return ok, (f"honest passing {sum(passed.values())}/{len(passed)}, "
                f"misdeclared caught {sum(caught.values())}/{len(caught)}")


def criterion_10():
    a = run_experiment(EXP1)
    b = run_experiment(dict(EXP1, workers=2))
    # a fresh rerun: the cached report of criterion 1 carries a fitted slope
    base = run_experiment(EXP1)
    small_vi = dict(EXP5, n_steps=500, n_replications=40, record_grid=None, grid_size=10,
                    batch_size=10)
    v1, v2 = run_experiment(small_vi), run_experiment(dict(small_vi, workers=2))
    same = (a.to_csv() == b.to_csv() == base.to_csv()
            and a.to_json() == base.to_json()
            and v1.merit_csv() == v2.merit_csv())
    return same, "rate CSV, report JSON and merit CSV identical across serial, parallel and rerun"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


def verdict_line(i, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {i}: {detail}"


@pytest.mark.parametrize("i", range(1, 11))
def test_criterion(i, capsys):
    ok, detail = CRITERIA[i - 1]()
    with capsys.disabled():
        print("\n" + verdict_line(i, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    results = []
    for i, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        results.append(ok)
        print(verdict_line(i, ok, detail), flush=True)
    sys.exit(0 if all(results) else 1)
