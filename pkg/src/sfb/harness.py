"""Monte Carlo experiments: configuration, replication runner, rate fits, bound checks.

Replications are split into fixed batches of ``batch_size`` consecutive ids.
Each batch is simulated in lockstep with one random stream per replication,
and only statistics at the record grid are kept. Because batch composition
never depends on the worker count, serial and parallel runs produce the same
bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import __version__
from .bounds import RateConstants, bound_on_s
from .core import ConfigError, ContractError, InclusionProblem, SeedSpec, as_point, derive_stream
from .ergodic import VIProblem, merit_many, theta0, theta1_terms
from .operators import (SeparablePenalty, _ConvexSet, cocoercive_from_spec, resolvent_from_spec)
from .oracles import FiniteSumOperator, StochasticOracle, oracle_from_spec
from .solver import AssumptionReport, Schedule, check_assumptions, iterate, schedule_from_spec

log = logging.getLogger(__name__)

MODES = ("inclusion", "ergodic_vi", "composite_min", "orthobasis_min")
GRADIENT_KINDS = ("gradient_quadratic", "gradient_least_squares", "gradient_logistic",
                  "affine_spd", "affine_psd")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce an experiment; see ``docs/config.md``."""

    mode: str
    problem: dict
    oracle: dict
    schedule: dict
    w1: list
    n_steps: int
    n_replications: int = 1
    master_seed: int = 0
    epsilon: float = 0.5
    record_grid: Optional[list] = None
    grid_size: int = 30
    workers: int = 1
    batch_size: int = 50
    bound: Optional[dict] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
        for name in ("problem", "oracle", "schedule"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(name, "must be an object")
        if not isinstance(self.n_steps, int) or self.n_steps < 1:
            raise ConfigError("n_steps", "must be an integer >= 1")
        if not isinstance(self.n_replications, int) or self.n_replications < 1:
            raise ConfigError("n_replications", "must be an integer >= 1")
        if not isinstance(self.master_seed, int):
            raise ConfigError("master_seed", "must be an integer")
        if not 0 < float(self.epsilon) < 2:
            raise ConfigError("epsilon", "must lie in (0, 2)")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.record_grid is not None:
            grid = [int(n) for n in self.record_grid]
            if not grid or min(grid) < 1 or max(grid) > self.n_steps:
                raise ConfigError("record_grid", f"indices must lie in [1, {self.n_steps}]")
            self.record_grid = sorted(set(grid))
        if self.grid_size < 2:
            raise ConfigError("grid_size", "must be >= 2")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        missing = [f.name for f in fields(cls)
                   if f.default is MISSING and f.default_factory is MISSING and f.name not in data]
        if missing:
            raise ConfigError(missing[0], "required field missing")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# Building the numerical objects


@dataclass
class Setup:
    problem: InclusionProblem
    oracle: StochasticOracle
    schedule: Schedule
    w1: np.ndarray
    grid: np.ndarray
    vi: Optional[VIProblem] = None
    rate_constants: Optional[RateConstants] = None


def build(cfg: ExperimentConfig) -> Setup:
    spec = cfg.problem
    components = None
    if "components" in spec:
        components = [cocoercive_from_spec(c, f"problem.components[{i}]")
                      for i, c in enumerate(spec["components"])]
        if not components:
            raise ConfigError("problem.components", "need at least one component")
        B = FiniteSumOperator(components)
    elif "B" in spec:
        B = cocoercive_from_spec(spec["B"], "problem.B")
    else:
        raise ConfigError("problem.B", "missing cocoercive operator")
    if cfg.oracle.get("noise_model") == "finite_sum_sampling" and components is None:
        raise ConfigError("problem.components", "finite_sum_sampling needs component operators")

    vi = None
    if cfg.mode == "ergodic_vi":
        if "C" not in spec:
            raise ConfigError("problem.C", "ergodic_vi needs a bounded convex set")
        A = resolvent_from_spec(spec["C"], "problem.C")
        if not isinstance(A, _ConvexSet):
            raise ConfigError("problem.C.kind", "must be normal_cone_box or normal_cone_ball")
        vi = VIProblem(B, A)
    else:
        A = resolvent_from_spec(spec.get("A", {"kind": "zero"}), "problem.A")
    if cfg.mode == "composite_min" and B.kind not in GRADIENT_KINDS and not components:
        raise ConfigError("problem.B.kind", "composite_min needs a gradient operator")
    if cfg.mode == "orthobasis_min" and not isinstance(A, SeparablePenalty):
        raise ConfigError("problem.A.kind", "orthobasis_min needs a separable_penalty")

    sm = spec.get("strong_monotonicity")
    if sm is not None:
        sm = (float(sm.get("nu", 0.0)), float(sm.get("mu", 0.0)))
    try:
        problem = InclusionProblem(A=A, B=B, known_solution=spec.get("known_solution"),
                                   strong_monotonicity=sm)
    except ContractError as exc:
        raise ConfigError("problem", str(exc)) from None

    oracle = oracle_from_spec(cfg.oracle, B, components)
    schedule = schedule_from_spec(cfg.schedule)
    if schedule.horizon is not None and schedule.horizon < cfg.n_steps:
        raise ConfigError("schedule", f"explicit sequences shorter than n_steps={cfg.n_steps}")
    try:
        w1 = as_point(cfg.w1, B.dim, name="w1")
    except ContractError as exc:
        raise ConfigError("w1", str(exc)) from None
    if vi is not None:
        w1 = vi.C.project(w1)

    k = rate_constants_for(cfg, problem, oracle, schedule)
    grid = np.array(cfg.record_grid if cfg.record_grid is not None
                    else log_grid(cfg.n_steps, cfg.grid_size), dtype=np.int64)
    if k is not None and k.n0 <= cfg.n_steps:
        grid = np.union1d(grid, [k.n0])
    return Setup(problem, oracle, schedule, w1, grid, vi, k)


def log_grid(n_max: int, size: int = 30) -> np.ndarray:
    """``size`` distinct, roughly log-spaced integers in ``[1, n_max]``."""
    if n_max <= size:
        return np.arange(1, n_max + 1)
    count = size
    while True:
        grid = np.unique(np.round(np.geomspace(1, n_max, count)).astype(np.int64))
        if len(grid) >= size:
            return grid
        count += 1


def rate_constants_for(cfg: ExperimentConfig, problem: InclusionProblem,
                       oracle: StochasticOracle, schedule: Schedule) -> Optional[RateConstants]:
    """Constants of the non-asymptotic bound, when the setting provides them."""
    if problem.known_solution is None or schedule.gamma_kind != "power_law":
        return None
    if problem.strong_monotonicity is not None:
        nu, mu = problem.strong_monotonicity
    else:
        nu, mu = float(problem.A.nu), float(problem.B.mu)
    if nu + mu <= 0:
        return None
    bw = problem.B.apply(problem.known_solution)
    values = dict(
        theta=schedule.theta, c1=schedule.c1, lambda_lower=schedule.lambda_inf,
        nu=nu, mu=mu, epsilon=float(cfg.epsilon), sigma=oracle.params.sigma,
        alpha_bar=oracle.params.alpha_bar, B_at_solution_norm=float(np.linalg.norm(bw)),
    )
    values.update(cfg.bound or {})
    return RateConstants.from_dict(values)


# ---------------------------------------------------------------------------
# Simulation


def _batches(cfg: ExperimentConfig):
    ids = list(range(cfg.n_replications))
    return [ids[i:i + cfg.batch_size] for i in range(0, len(ids), cfg.batch_size)]


def simulate_batch(cfg_dict: dict, rep_ids: Sequence[int]) -> dict:
    """Run one batch of replications; returns per-replication grid statistics."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    st = build(cfg)
    p, o, s = st.problem, st.oracle, st.schedule
    R, d = len(rep_ids), st.w1.size
    grid = st.grid
    G = len(grid)
    slot = {int(n): i for i, n in enumerate(grid)}
    streams = [derive_stream(SeedSpec(cfg.master_seed, r)) for r in rep_ids]
    W1 = np.tile(st.w1, (R, 1))

    ws = p.known_solution
    out = {"ids": list(rep_ids)}
    sq = np.empty((R, G)) if ws is not None else None
    ergodic = st.vi is not None
    if ergodic:
        avg = np.empty((R, G, d))
        th1 = np.empty((R, G))
        wsum = np.empty(G)
        acc = np.zeros((R, d))
        th1_acc = np.zeros(R)
        total = 0.0
        sigma = o.params.sigma
    for stp in iterate(p.A, o, s, W1, cfg.n_steps, streams):
        n = stp.n
        if ergodic:
            weight = stp.gamma * stp.lam
            acc += weight * stp.w
            total += weight
            bsq = np.sum(stp.bw * stp.bw, axis=1)
            th1_acc += theta1_terms(stp.gamma, stp.lam, o.params.alpha_at(n), sigma, bsq)
        i = slot.get(n)
        if i is None:
            continue
        if sq is not None:
            diff = stp.w - ws
            sq[:, i] = np.sum(diff * diff, axis=1)
        if ergodic:
            avg[:, i] = acc / total if total > 0 else np.nan
            th1[:, i] = th1_acc
            wsum[i] = total
    if sq is not None:
        out["sq_dist"] = sq
    if ergodic:
        out.update(avg=avg, theta1=th1, weight_sum=wsum)
    return out


def _merge(parts: list) -> dict:
    """Order-independent merge of batch results keyed by replication id."""
    parts = sorted(parts, key=lambda part: part["ids"][0])
    merged = {"ids": [i for part in parts for i in part["ids"]]}
    for key in ("sq_dist", "avg", "theta1"):
        if key in parts[0]:
            merged[key] = np.concatenate([part[key] for part in parts])
    if "weight_sum" in parts[0]:
        merged["weight_sum"] = parts[0]["weight_sum"]
    return merged


# ---------------------------------------------------------------------------
# Reports


@dataclass
class MonteCarloReport:
    config: dict
    version: str
    grid: np.ndarray
    n_replications: int
    mean_sq_dist: Optional[np.ndarray] = None
    stderr: Optional[np.ndarray] = None
    bound: Optional[np.ndarray] = None
    s_n0: Optional[float] = None
    merit_of_mean: Optional[np.ndarray] = None
    merit_stderr: Optional[np.ndarray] = None
    ergodic_bound: Optional[np.ndarray] = None
    weight_sum: Optional[np.ndarray] = None
    mean_average: Optional[np.ndarray] = None
    assumptions: dict = field(default_factory=dict)
    rate_constants: Optional[dict] = None
    warnings: list = field(default_factory=list)
    slope: Optional[tuple] = None

    def _value(self, arr, i):
        if arr is None or not np.isfinite(arr[i]):
            return ""
        return repr(float(arr[i]))

    def to_csv(self) -> str:
        """Rate report, columns ``n,mean_sq_dist,stderr,bound``."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "mean_sq_dist", "stderr", "bound"])
        for i, n in enumerate(self.grid):
            writer.writerow([int(n), self._value(self.mean_sq_dist, i),
                             self._value(self.stderr, i), self._value(self.bound, i)])
        return buf.getvalue()

    def merit_csv(self) -> str:
        """Ergodic report, columns ``n,merit_of_mean,bound,weight_sum``."""
        if self.merit_of_mean is None:
            raise ContractError("report has no merit values (not an ergodic_vi run)")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "merit_of_mean", "bound", "weight_sum"])
        for i, n in enumerate(self.grid):
            writer.writerow([int(n), self._value(self.merit_of_mean, i),
                             self._value(self.ergodic_bound, i), self._value(self.weight_sum, i)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, np.ndarray):
                return [clean(v) for v in x.tolist()]
            if isinstance(x, list):
                return [clean(v) for v in x]
            if isinstance(x, float) and not math.isfinite(x):
                return None
            return x
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = clean(value) if value is not None else None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def values(self, which: str = "mean_sq_dist") -> np.ndarray:
        arr = getattr(self, which)
        if arr is None:
            raise ContractError(f"report has no {which}")
        return arr


def run_experiment(cfg: Union[ExperimentConfig, Mapping]) -> MonteCarloReport:
    """Run all replications and aggregate at the record grid."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.from_dict(cfg)
    st = build(cfg)
    assumptions = check_assumptions(st.problem, st.oracle, st.schedule,
                                    float(cfg.epsilon), cfg.n_steps)
    warnings_ = []
    if not assumptions.a3_ok:
        warnings_.append(assumptions.notes[0] if assumptions.notes else "step-size condition violated")
    if not assumptions.a4_ok:
        warnings_.append("summability conditions not satisfied by the schedule")
    for w in warnings_:
        log.warning(w)

    cfg_dict = cfg.to_dict()
    batches = _batches(cfg)
    if cfg.workers > 1 and len(batches) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(simulate_batch, [cfg_dict] * len(batches), batches))
    else:
        parts = [simulate_batch(cfg_dict, b) for b in batches]
    data = _merge(parts)

    R = cfg.n_replications
    report = MonteCarloReport(
        config=cfg_dict, version=__version__, grid=st.grid, n_replications=R,
        assumptions=_assumption_summary(assumptions), warnings=warnings_,
        rate_constants=None if st.rate_constants is None else st.rate_constants.to_dict(),
    )
    if "sq_dist" in data:
        sq = data["sq_dist"]
        report.mean_sq_dist = sq.mean(axis=0)
        report.stderr = sq.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros(len(st.grid))
        k = st.rate_constants
        if k is not None and k.n0 in set(st.grid.tolist()):
            s_n0 = float(report.mean_sq_dist[list(st.grid).index(k.n0)])
            report.s_n0 = s_n0
            report.bound = _bound_column(k, s_n0, st.grid)
    if st.vi is not None:
        _ergodic_summary(report, st, data)
    return report


def _assumption_summary(rep: AssumptionReport) -> dict:
    out = rep.to_dict()
    out.pop("chi_sq_seq")
    return out


def _bound_column(k: RateConstants, s_n0: float, grid) -> np.ndarray:
    col = np.full(len(grid), np.nan)
    for i, m in enumerate(grid):
        if m - 1 >= 2 * k.n0:
            col[i] = bound_on_s(k, s_n0, int(m))
    return col


def _ergodic_summary(report: MonteCarloReport, st: Setup, data: dict, groups: int = 20):
    avg = data["avg"]                  # (R, G, d)
    R, G, d = avg.shape
    mean_avg = avg.mean(axis=0)
    report.mean_average = mean_avg
    report.weight_sum = data["weight_sum"]
    th0 = theta0(st.vi, st.w1)
    th1 = data["theta1"].mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        report.ergodic_bound = np.where(report.weight_sum > 0,
                                        (th0 + th1) / report.weight_sum, np.nan)
    # delete-a-group jackknife for the standard error of V(mean)
    g = min(groups, R)
    if g > 1:
        labels = np.arange(R) % g
        loo = np.stack([avg[labels != j].mean(axis=0) for j in range(g)])  # (g, G, d)
        U = np.concatenate([mean_avg, loo.reshape(g * G, d)])
    else:
        U = mean_avg
    finite = np.all(np.isfinite(U), axis=1)
    vals = np.full(len(U), np.nan)
    vals[finite] = merit_many(st.vi, U[finite])
    report.merit_of_mean = vals[:G]
    if g > 1:
        jk = vals[G:].reshape(g, G)
        report.merit_stderr = np.sqrt((g - 1) / g * np.sum((jk - jk.mean(axis=0)) ** 2, axis=0))
    else:
        report.merit_stderr = np.zeros(G)


# ---------------------------------------------------------------------------
# Rate fitting and bound comparison


def fit_loglog(n, values) -> tuple:
    """Least-squares slope of ``log values`` on ``log n`` and its standard error."""
    x = np.log(np.asarray(n, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    if len(x) < 5:
        raise ContractError("need at least 5 points for a rate fit")
    if np.ptp(x) == 0:
        raise ContractError("degenerate window: all indices equal")
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(np.sum((x - x.mean()) ** 2)))
    return float(coef[1]), se


def fit_rate(report: MonteCarloReport, window, which: str = "mean_sq_dist") -> tuple:
    """Log-log slope of ``which`` over grid indices ``window = (a, b)``.

    Returns ``(slope, half_width)`` with the half-width equal to the slope's
    standard error.
    """
    a, b = window
    vals = report.values(which)
    mask = (report.grid >= a) & (report.grid <= b)
    if mask.sum() < 5:
        raise ContractError(f"window [{a}, {b}] holds {int(mask.sum())} grid points, need 5")
    v = vals[mask]
    if not np.all(v > 0):
        raise ContractError("rate fit needs strictly positive values")
    slope, hw = fit_loglog(report.grid[mask], v)
    report.slope = (slope, hw)
    return slope, hw


@dataclass
class PointVerdict:
    n: int
    value: float
    bound: float
    stderr: float

    @property
    def ok(self) -> bool:
        return self.value <= self.bound + 5.0 * self.stderr


@dataclass
class ComparisonVerdict:
    points: list
    s_n0: float
    threshold: float = 0.95

    @property
    def pass_fraction(self) -> float:
        return sum(p.ok for p in self.points) / len(self.points)

    @property
    def passed(self) -> bool:
        return self.pass_fraction >= self.threshold


def compare_to_bound(report: MonteCarloReport, k: Union[RateConstants, Mapping],
                     s_n0_source: str = "empirical", s_n0: Optional[float] = None) -> ComparisonVerdict:
    """Check ``s_hat_n <= bound(n) + 5 stderr`` on every grid point with ``n - 1 >= 2 n0``."""
    if not isinstance(k, RateConstants):
        k = RateConstants.from_dict(k)
    if report.mean_sq_dist is None:
        raise ContractError("report has no mean squared distances")
    grid = list(report.grid)
    if s_n0_source == "empirical":
        if k.n0 not in grid:
            raise ContractError(f"n0 = {k.n0} is not on the record grid")
        s_n0 = float(report.mean_sq_dist[grid.index(k.n0)])
    elif s_n0_source == "supplied":
        if s_n0 is None:
            raise ContractError("s_n0_source='supplied' needs s_n0")
    else:
        raise ContractError("s_n0_source must be 'empirical' or 'supplied'")
    points = []
    for i, m in enumerate(grid):
        if m - 1 >= 2 * k.n0:
            points.append(PointVerdict(int(m), float(report.mean_sq_dist[i]),
                                       float(bound_on_s(k, s_n0, int(m))),
                                       float(report.stderr[i])))
    if not points:
        raise ContractError(f"no grid point at or beyond 2*n0 + 1 = {2 * k.n0 + 1}")
    return ComparisonVerdict(points=points, s_n0=float(s_n0))


def fejer_pairs(report: MonteCarloReport, sigma: float, chi_sq) -> list:
    """Telescoped mean decrease check between consecutive grid points.

    ``chi_sq[t-1]`` is ``chi_t^2``. For grid points ``a < b`` the mean squared
    distance may grow by at most ``2 sigma^2 sum_{a <= t < b} chi_t^2`` plus
    five standard errors of ``s_hat_b``. Returns ``(a, b, lhs, rhs)`` tuples.
    """
    cum = np.concatenate([[0.0], np.cumsum(chi_sq)])
    out = []
    g, s, se = report.grid, report.mean_sq_dist, report.stderr
    for i in range(len(g) - 1):
        a, b = int(g[i]), int(g[i + 1])
        allowance = 2.0 * sigma**2 * (cum[b - 1] - cum[a - 1])
        out.append((a, b, float(s[i + 1]), float(s[i] + allowance + 5.0 * se[i + 1])))
    return out
