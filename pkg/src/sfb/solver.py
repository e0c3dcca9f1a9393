"""Stochastic forward-backward iteration.

For ``n = 1, 2, ...``::

    z_n     = w_n - gamma_n * B_n          (B_n: one oracle sample at w_n)
    y_n     = J_{gamma_n A} z_n
    w_{n+1} = (1 - lambda_n) w_n + lambda_n y_n
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .core import (ConfigError, ContractError, InclusionProblem, RandomStream, SeedSpec,
                   Trajectory, as_point, derive_stream)
from .oracles import StochasticOracle

#: oracle samples pre-drawn per replication at a time
BLOCK = 256
#: relative slack in the step-size check
A3_RTOL = 1e-9
#: partial-sum horizon for classifying explicit sequences
A4_HORIZON = 1_000_000


@dataclass(frozen=True)
class Schedule:
    """Step sizes ``gamma_n`` and relaxations ``lambda_n`` for ``n >= 1``.

    ``gamma_kind`` is ``power_law`` (``c1 * n**-theta``), ``constant``
    (``c1``) or ``explicit`` (``gamma_values``). ``lambda_value`` is a
    constant or an explicit list.
    """

    gamma_kind: str = "power_law"
    c1: float = 1.0
    theta: float = 1.0
    gamma_values: tuple = ()
    lambda_kind: str = "constant"
    lambda_value: object = 1.0
    lambda_lower: Optional[float] = None

    def __post_init__(self):
        if self.gamma_kind not in ("power_law", "constant", "explicit"):
            raise ContractError(f"unknown gamma_kind {self.gamma_kind!r}")
        if self.gamma_kind == "explicit":
            vals = tuple(float(g) for g in self.gamma_values)
            if not vals or min(vals) <= 0:
                raise ContractError("explicit step sizes must be nonempty and positive")
            object.__setattr__(self, "gamma_values", vals)
        elif not self.c1 > 0:
            raise ContractError("c1 must be positive")
        if self.gamma_kind == "power_law" and not 0 < self.theta <= 1:
            raise ContractError("theta must lie in (0, 1]")
        if self.lambda_kind == "constant":
            lams = np.array([float(self.lambda_value)])
        elif self.lambda_kind == "explicit":
            lams = np.asarray(self.lambda_value, dtype=np.float64)
            object.__setattr__(self, "lambda_value", tuple(lams.tolist()))
            if lams.size == 0:
                raise ContractError("explicit relaxations must be nonempty")
        else:
            raise ContractError(f"unknown lambda_kind {self.lambda_kind!r}")
        if np.any(lams < 0) or np.any(lams > 1):
            raise ContractError("every lambda_n must lie in [0, 1]")
        if self.lambda_lower is not None:
            if not 0 < self.lambda_lower <= 1:
                raise ContractError("lambda_lower must lie in (0, 1]")
            if lams.min() < self.lambda_lower:
                raise ContractError("some lambda_n is below the declared lambda_lower")

    @property
    def horizon(self) -> Optional[int]:
        """Last index with a defined step, or ``None`` if unbounded."""
        lens = []
        if self.gamma_kind == "explicit":
            lens.append(len(self.gamma_values))
        if self.lambda_kind == "explicit":
            lens.append(len(self.lambda_value))
        return min(lens) if lens else None

    def gammas(self, start: int, count: int) -> np.ndarray:
        n = np.arange(start, start + count, dtype=np.float64)
        if self.gamma_kind == "power_law":
            return self.c1 * n ** (-self.theta)
        if self.gamma_kind == "constant":
            return np.full(count, float(self.c1))
        self._check_range(start + count - 1, len(self.gamma_values))
        return np.asarray(self.gamma_values[start - 1:start - 1 + count])

    def lambdas(self, start: int, count: int) -> np.ndarray:
        if self.lambda_kind == "constant":
            return np.full(count, float(self.lambda_value))
        self._check_range(start + count - 1, len(self.lambda_value))
        return np.asarray(self.lambda_value[start - 1:start - 1 + count])

    def gamma(self, n: int) -> float:
        return float(self.gammas(n, 1)[0])

    def lam(self, n: int) -> float:
        return float(self.lambdas(n, 1)[0])

    @property
    def lambda_inf(self) -> float:
        if self.lambda_lower is not None:
            return self.lambda_lower
        if self.lambda_kind == "constant":
            return float(self.lambda_value)
        return float(min(self.lambda_value))

    def _check_range(self, n, length):
        if n > length:
            raise ContractError(f"explicit schedule has {length} entries, step {n} requested")

    def to_spec(self) -> dict:
        spec = {"gamma_kind": self.gamma_kind, "lambda_kind": self.lambda_kind,
                "lambda_value": list(self.lambda_value) if self.lambda_kind == "explicit"
                else self.lambda_value}
        if self.gamma_kind == "explicit":
            spec["gamma_values"] = list(self.gamma_values)
        else:
            spec["c1"] = self.c1
            if self.gamma_kind == "power_law":
                spec["theta"] = self.theta
        if self.lambda_lower is not None:
            spec["lambda_lower"] = self.lambda_lower
        return spec


def schedule_from_spec(spec: dict) -> Schedule:
    try:
        return Schedule(
            gamma_kind=spec.get("gamma_kind", "power_law"),
            c1=float(spec.get("c1", 1.0)),
            theta=float(spec.get("theta", 1.0)),
            gamma_values=tuple(spec.get("gamma_values", ())),
            lambda_kind=spec.get("lambda_kind", "constant"),
            lambda_value=spec.get("lambda_value", 1.0),
            lambda_lower=spec.get("lambda_lower"),
        )
    except ContractError as exc:
        raise ConfigError("schedule", str(exc)) from None


# ---------------------------------------------------------------------------
# Iteration


@dataclass
class StepRecord:
    z: np.ndarray
    y: np.ndarray
    gamma: float
    lam: float
    sample: np.ndarray


@dataclass
class BatchStep:
    """State of ``R`` replications around step ``n`` (all arrays ``(R, d)``)."""

    n: int
    w: np.ndarray
    bw: np.ndarray
    z: np.ndarray
    y: np.ndarray
    gamma: float
    lam: float
    w_next: np.ndarray


def iterate(A, oracle: StochasticOracle, schedule: Schedule, w1: np.ndarray,
            n_steps: int, streams: Sequence[RandomStream]) -> Iterator[BatchStep]:
    """Run ``len(streams)`` replications in lockstep, yielding every step.

    ``w1`` is ``(R, d)``. Row ``r`` depends only on ``streams[r]``; noise is
    pre-drawn per replication in blocks of at most :data:`BLOCK` samples,
    never past step ``n_steps``.
    """
    B = oracle.base
    W = np.array(w1, dtype=np.float64)
    R, d = W.shape
    n = 1
    while n <= n_steps:
        k = min(BLOCK, n_steps - n + 1)
        raws = [oracle.draw(s, k, d) for s in streams]
        raw = None if raws[0] is None else np.stack(raws, axis=1)
        gam = schedule.gammas(n, k)
        lam = schedule.lambdas(n, k)
        for j in range(k):
            g, l = float(gam[j]), float(lam[j])
            BW = B._apply(W)
            est = oracle.estimate(W, BW, None if raw is None else raw[j])
            Z = W - g * est
            Y = A._resolvent(g, Z)
            W_next = Y if l == 1.0 else (1.0 - l) * W + l * Y
            yield BatchStep(n, W, BW, Z, Y, g, l, W_next)
            W = W_next
            n += 1


def step(p: InclusionProblem, o: StochasticOracle, w, gamma: float, lam: float,
         stream: RandomStream):
    """One iteration from ``w``; always consumes exactly one oracle sample."""
    if not gamma > 0:
        raise ContractError("gamma must be positive")
    if not 0 <= lam <= 1:
        raise ContractError("lambda must lie in [0, 1]")
    w = as_point(w, o.dim, name="w")
    sample = o.sample(w, stream)
    z = w - gamma * sample
    y = p.A.resolvent(gamma, z)
    w_next = w.copy() if lam == 0 else (1.0 - lam) * w + lam * y
    return w_next, StepRecord(z=z, y=y, gamma=float(gamma), lam=float(lam), sample=sample)


def run(p: InclusionProblem, o: StochasticOracle, s: Schedule, w1, n_steps: int,
        seed: SeedSpec) -> Trajectory:
    """Full trajectory ``w_1 .. w_{n_steps+1}`` for one replication."""
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    w1 = as_point(w1, o.dim, name="w1")
    d = w1.size
    stream = derive_stream(seed)
    W = np.empty((n_steps + 1, d))
    Z = np.empty((n_steps, d))
    Y = np.empty((n_steps, d))
    G = np.empty(n_steps)
    L = np.empty(n_steps)
    W[0] = w1
    for st in iterate(p.A, o, s, w1[None], n_steps, [stream]):
        k = st.n - 1
        Z[k], Y[k], G[k], L[k] = st.z[0], st.y[0], st.gamma, st.lam
        W[k + 1] = st.w_next[0]
    sq = None
    if p.known_solution is not None:
        diff = W - p.known_solution
        sq = np.sum(diff * diff, axis=1)
    return Trajectory(w=W, z=Z, y=Y, gamma=G, lam=L, sq_dist=sq)


# ---------------------------------------------------------------------------
# Assumptions


@dataclass
class AssumptionReport:
    epsilon: float
    horizon: int
    a3_ok: bool
    a3_first_violation: Optional[int]
    a3_bound: float
    chi_sq_seq: Optional[np.ndarray]
    a4_sum_gamma_lambda_diverges: bool
    a4_chi_summable: bool
    notes: list = field(default_factory=list)

    @property
    def a4_ok(self) -> bool:
        return self.a4_sum_gamma_lambda_diverges and self.a4_chi_summable

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "a3_ok": self.a3_ok,
            "a3_first_violation": self.a3_first_violation,
            "a3_bound": self.a3_bound,
            "chi_sq_seq": None if self.chi_sq_seq is None else self.chi_sq_seq.tolist(),
            "a4_sum_gamma_lambda_diverges": self.a4_sum_gamma_lambda_diverges,
            "a4_chi_summable": self.a4_chi_summable,
            "notes": list(self.notes),
        }


def check_assumptions(p: InclusionProblem, o: StochasticOracle, s: Schedule,
                      epsilon: float = 0.5, horizon: int = 1000) -> AssumptionReport:
    """Step-size condition checked pointwise to ``horizon``; summability classified.

    The step-size condition is ``gamma_n <= (2 - eps) beta / (1 + 2 sigma^2 alpha_n)``.
    For power-law steps with constant relaxation the two series are
    classified exactly (``sum lambda gamma`` diverges iff ``theta <= 1``,
    ``sum chi^2`` converges iff ``2 theta > 1``); otherwise the tail exponent
    of the terms up to :data:`A4_HORIZON` decides.
    """
    if not 0 < epsilon < 2:
        raise ContractError("epsilon must lie in (0, 2)")
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    if s.horizon is not None:
        horizon = min(horizon, s.horizon)
    notes = []
    n = np.arange(1, horizon + 1)
    gam = s.gammas(1, horizon)
    lam = s.lambdas(1, horizon)
    alpha = o.params.alpha_at(n)
    sigma2 = o.params.sigma ** 2
    bound = (2.0 - epsilon) * p.beta / (1.0 + 2.0 * sigma2 * alpha)
    # relative slack absorbs round-off in the estimated beta
    bad = np.nonzero(gam > bound * (1.0 + A3_RTOL))[0]
    a3_ok = bad.size == 0
    first = None if a3_ok else int(bad[0]) + 1
    if not a3_ok:
        notes.append(f"step-size condition fails first at n={first}: "
                     f"gamma={gam[bad[0]]:.6g} > {bound[bad[0]]:.6g}")

    bw_sq = None
    chi = None
    if p.known_solution is not None:
        bw = p.B.apply(p.known_solution)
        bw_sq = float(np.dot(bw, bw))
        chi = lam * gam**2 * (1.0 + 2.0 * alpha * bw_sq)
    else:
        notes.append("no known solution: chi^2 sequence not computed")

    analytic = s.gamma_kind == "power_law" and s.lambda_kind == "constant" \
        and isinstance(o.params.alpha, float)
    if analytic and float(s.lambda_value) > 0:
        diverges = s.theta <= 1.0
        summable = 2.0 * s.theta > 1.0
    elif s.gamma_kind == "constant" and s.lambda_kind == "constant":
        diverges = float(s.lambda_value) > 0
        summable = float(s.lambda_value) == 0
    else:
        H = min(A4_HORIZON, s.horizon or A4_HORIZON)
        nn = np.arange(1, H + 1)
        gh, lh = s.gammas(1, H), s.lambdas(1, H)
        # ||Bw||^2 unknown without a solution: the gamma^2 lambda part decides
        chi_h = lh * gh**2 * (1.0 + 2.0 * o.params.alpha_at(nn) * (bw_sq or 0.0))
        diverges = not _series_converges(lh * gh)
        summable = _series_converges(chi_h)
        notes.append(f"summability classified heuristically from {H} terms")
    return AssumptionReport(
        epsilon=float(epsilon), horizon=int(horizon), a3_ok=bool(a3_ok),
        a3_first_violation=first, a3_bound=float(bound.min()), chi_sq_seq=chi,
        a4_sum_gamma_lambda_diverges=bool(diverges), a4_chi_summable=bool(summable),
        notes=notes,
    )


def _series_converges(terms: np.ndarray, margin: float = 0.05) -> bool:
    """Tail test: terms decaying like ``n**-p`` over the last decade with ``p > 1``."""
    terms = np.asarray(terms, dtype=np.float64)
    H = terms.size
    if H < 20:
        return False
    tail = terms[H // 10:]
    if np.all(tail == 0):
        return True
    if np.any(tail <= 0):
        return False
    n = np.arange(H // 10 + 1, H + 1)
    slope = np.polyfit(np.log(n), np.log(tail), 1)[0]
    return bool(-slope > 1.0 + margin)


# ---------------------------------------------------------------------------
# Quasi-Fejer diagnostics


@dataclass
class FejerDiagnostics:
    sq_dist: np.ndarray          # (R, N+1)
    S: np.ndarray                # (R, N) partial sums of lambda gamma <w - w*, Bw - Bw*>
    U: np.ndarray                # (R, N) partial sums of lambda ||w - y||^2
    mean_sq_dist: np.ndarray
    mean_S: np.ndarray
    mean_U: np.ndarray
    s_increase_fraction: float
    u_increase_fraction: float
    s_bounded: bool
    u_bounded: bool
    monotonicity_violations: int
    min_s_term: float


def fejer_diagnostics(trajectories: Sequence[Trajectory], p: InclusionProblem, s: Schedule,
                      oracle: Optional[StochasticOracle] = None,
                      tolerance: float = 0.05) -> FejerDiagnostics:
    """Monte Carlo summaries of the quasi-Fejer inequalities along finished runs.

    Boundedness of the mean partial sums is judged by their increase over
    the last quarter of the iterations (at most ``tolerance`` of the final
    value). A monotonicity violation is a step where the mean squared distance
    grows by more than ``2 sigma^2 chi_n^2`` plus five standard errors of the
    paired increments.
    """
    if p.known_solution is None:
        raise ContractError("fejer_diagnostics needs a known solution")
    if not trajectories:
        raise ContractError("need at least one trajectory")
    ws = p.known_solution
    bws = p.B.apply(ws)
    R = len(trajectories)
    N = len(trajectories[0]) - 1
    sq = np.empty((R, N + 1))
    S = np.empty((R, N))
    U = np.empty((R, N))
    min_term = np.inf
    for r, tr in enumerate(trajectories):
        if tr.y is None or len(tr) != N + 1:
            raise ContractError("trajectories need per-step records and equal length")
        W = tr.w
        diff = W - ws
        sq[r] = np.sum(diff * diff, axis=1)
        bw = p.B._apply(W[:-1])
        terms = np.sum(diff[:-1] * (bw - bws), axis=1)
        min_term = min(min_term, float(terms.min()))
        S[r] = np.cumsum(tr.lam * tr.gamma * terms)
        U[r] = np.cumsum(tr.lam * np.sum((W[:-1] - tr.y) ** 2, axis=1))

    def increase(mean):
        q = int(math.ceil(0.75 * N)) - 1
        total = mean[-1]
        return 0.0 if total <= 0 else float((total - mean[q]) / total)

    mS, mU, msq = S.mean(axis=0), U.mean(axis=0), sq.mean(axis=0)
    s_inc, u_inc = increase(mS), increase(mU)

    n = np.arange(1, N + 1)
    gam, lam = trajectories[0].gamma, trajectories[0].lam
    if oracle is not None:
        alpha = oracle.params.alpha_at(n)
        chi = lam * gam**2 * (1.0 + 2.0 * alpha * float(np.dot(bws, bws)))
        allowance = 2.0 * oracle.params.sigma**2 * chi
    else:
        allowance = np.zeros(N)
    inc = sq[:, 1:] - sq[:, :-1]
    se = inc.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.zeros(N)
    slack = 1e-12 * (1.0 + msq[:-1])
    violations = int(np.sum(inc.mean(axis=0) > allowance + 5.0 * se + slack))
    return FejerDiagnostics(
        sq_dist=sq, S=S, U=U, mean_sq_dist=msq, mean_S=mS, mean_U=mU,
        s_increase_fraction=s_inc, u_increase_fraction=u_inc,
        s_bounded=s_inc <= tolerance, u_bounded=u_inc <= tolerance,
        monotonicity_violations=violations, min_s_term=min_term,
    )
