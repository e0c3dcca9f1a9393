"""Averaged projected iteration for variational inequalities on a bounded set.

The iteration is the forward-backward step with ``J`` replaced by the
projection onto ``C``; alongside it the running average
``wbar_n = sum_t gamma_t lambda_t w_t / sum_t gamma_t lambda_t`` is kept.
Accuracy of a candidate ``u`` is measured by the merit function
``V(u) = sup_{w in C} <Bw, u - w>``.

The bound on ``V(E[wbar_n])`` uses
``theta_1n = 1/2 sum_t (lambda_t gamma_t^2 (1 + sigma^2 alpha_t) E||Bw_t||^2 + sigma^2 lambda_t gamma_t^2)``.
Writing ``(1 + sigma^2 lambda_t alpha_t)`` instead of ``(1 + sigma^2 alpha_t)``
gives a value that is never larger since ``lambda_t <= 1``; the form used
here is the conservative one.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .core import ContractError, SeedSpec, Trajectory, as_point, derive_stream
from .operators import (AffineOperator, BoxNormalCone, CocoerciveOperator,
                        LeastSquaresGradient, QuadraticGradient, _ConvexSet)
from .oracles import StochasticOracle
from .solver import Schedule, iterate

GRID_POINTS = 2000
MULTISTARTS = 16
_CHUNK = 1 << 18


@dataclass(frozen=True)
class VIProblem:
    """Find ``w* in C`` with ``<B w*, w* - w> <= 0`` for all ``w in C``."""

    B: CocoerciveOperator
    C: _ConvexSet

    def __post_init__(self):
        if not isinstance(self.C, _ConvexSet):
            raise ContractError("C must be a box or a ball")
        if not np.isfinite(self.C.diameter):
            raise ContractError("C must be bounded")

    @property
    def bounded(self) -> bool:
        return True

    @property
    def diameter(self) -> float:
        return self.C.diameter

    @property
    def dim(self) -> int:
        return self.C.dim


class ErgodicState:
    """Incremental weighted average of iterates."""

    def __init__(self, dim: int):
        self.weighted_sum = np.zeros(dim)
        self.weight_total = 0.0
        self.n = 0

    def update(self, w, weight: float):
        self.weighted_sum = self.weighted_sum + weight * np.asarray(w)
        self.weight_total += weight
        self.n += 1

    @property
    def average(self) -> np.ndarray:
        if self.weight_total <= 0:
            raise ContractError(f"average undefined: all weights through step {self.n} are zero")
        return self.weighted_sum / self.weight_total


def run_ergodic(v: VIProblem, o: StochasticOracle, s: Schedule, w1, n_steps: int,
                seed: SeedSpec):
    """Run the averaged iteration once.

    Returns ``(trajectory, averages)`` where ``averages[n-1]`` is ``wbar_n``
    (a row of NaN while every weight so far is zero) and the trajectory
    carries ``||B w_t||^2`` per step in ``b_sq_norm``.
    """
    if n_steps < 1:
        raise ContractError("n_steps must be >= 1")
    w1 = v.C.project(as_point(w1, v.dim, name="w1"))
    d = w1.size
    W = np.empty((n_steps + 1, d))
    Z = np.empty((n_steps, d))
    Y = np.empty((n_steps, d))
    G = np.empty(n_steps)
    L = np.empty(n_steps)
    bsq = np.empty(n_steps)
    avgs = np.empty((n_steps, d))
    W[0] = w1
    acc = np.zeros(d)
    total = 0.0
    for st in iterate(v.C, o, s, w1[None], n_steps, [derive_stream(seed)]):
        k = st.n - 1
        Z[k], Y[k], G[k], L[k] = st.z[0], st.y[0], st.gamma, st.lam
        W[k + 1] = st.w_next[0]
        bsq[k] = float(np.dot(st.bw[0], st.bw[0]))
        weight = st.gamma * st.lam
        acc = acc + weight * st.w[0]
        total += weight
        avgs[k] = acc / total if total > 0 else np.nan
    return Trajectory(w=W, z=Z, y=Y, gamma=G, lam=L, b_sq_norm=bsq), avgs


# ---------------------------------------------------------------------------
# Bound


@dataclass
class ErgodicBoundInputs:
    """Arrays indexed by ``n - 1``: cumulative ``theta_1n`` and ``sum gamma lambda``."""

    theta0: float
    theta1_seq: np.ndarray
    weight_partial_sums: np.ndarray

    def __post_init__(self):
        self.theta1_seq = np.asarray(self.theta1_seq, dtype=np.float64)
        self.weight_partial_sums = np.asarray(self.weight_partial_sums, dtype=np.float64)
        if np.any(np.diff(self.theta1_seq) < 0):
            raise ContractError("theta_1n must be nondecreasing")


def theta0(v: VIProblem, w1) -> float:
    """``sup_{u in C} 1/2 ||w1 - u||^2`` for a deterministic start."""
    return 0.5 * v.C.farthest_sq_dist(as_point(w1, v.dim))


def theta1_terms(gamma, lam, alpha, sigma: float, mean_b_sq):
    """Per-step summands of ``theta_1n`` (their cumulative sum is ``theta_1n``)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    s2 = sigma * sigma
    return 0.5 * (lam * gamma**2 * (1.0 + s2 * np.asarray(alpha)) * np.asarray(mean_b_sq)
                  + s2 * lam * gamma**2)


def ergodic_bound(v: VIProblem, inputs: ErgodicBoundInputs, n) -> float:
    """``(theta0 + theta_1n) / sum_{t<=n} lambda_t gamma_t``."""
    idx = np.asarray(n) - 1
    if np.any(idx < 0):
        raise ContractError("n must be >= 1")
    denom = inputs.weight_partial_sums[idx]
    if np.any(denom <= 0):
        raise ContractError("zero weight sum: bound undefined")
    out = (inputs.theta0 + inputs.theta1_seq[idx]) / denom
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Merit function


def merit(v: VIProblem, u) -> float:
    u = as_point(u, v.dim, name="u")
    return float(merit_many(v, u[None])[0])


def merit_many(v: VIProblem, U) -> np.ndarray:
    """``V`` at each row of ``U``.

    In dimension 1 or 2 a grid of spacing ``diameter / 2000`` over ``C`` is
    searched and the best cell refined by projected compass search. In
    higher dimension the objective is concave when ``B`` is affine and is
    maximized by projected gradient ascent from 16 seeded starts; other
    operators are rejected there.
    """
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    if U.shape[1] != v.dim:
        raise ContractError(f"u has dimension {U.shape[1]}, expected {v.dim}")
    if not np.all(np.isfinite(U)):
        raise ContractError("u must be finite")
    if v.dim <= 2:
        return _merit_grid(v, U)
    parts = affine_parts(v.B)
    if parts is None:
        raise ContractError(
            f"merit in dimension {v.dim} is only supported for affine operators, got {v.B.kind}"
        )
    return np.array([_merit_affine(v, u, *parts) for u in U])


def _objective(v, u, w):
    bw = v.B._apply(w)
    return float(np.dot(bw, u - w))


def _grid(v: VIProblem):
    """Axis grids covering the bounding box of ``C`` and their spacing."""
    C = v.C
    h = v.diameter / GRID_POINTS
    if isinstance(C, BoxNormalCone):
        lo, hi = C.lower, C.upper
    else:
        lo, hi = C.center - C.radius, C.center + C.radius
    axes = [np.append(np.arange(l, u, h), u) for l, u in zip(lo, hi)]
    return axes, h


def _iter_grid(v: VIProblem):
    axes, _ = _grid(v)
    if len(axes) == 1:
        yield axes[0][:, None]
        return
    xs, ys = axes
    rows_per_chunk = max(1, _CHUNK // len(ys))
    for i in range(0, len(xs), rows_per_chunk):
        gx, gy = np.meshgrid(xs[i:i + rows_per_chunk], ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        if not isinstance(v.C, BoxNormalCone):
            keep = np.linalg.norm(pts - v.C.center, axis=1) <= v.C.radius
            pts = pts[keep]
        if len(pts):
            yield pts


def _merit_grid(v: VIProblem, U: np.ndarray) -> np.ndarray:
    best = np.full(len(U), -np.inf)
    arg = np.zeros((len(U), v.dim))
    rows = np.arange(len(U))
    for pts in _iter_grid(v):
        bw = v.B._apply(pts)
        q = np.sum(bw * pts, axis=1)
        for lo in range(0, len(U), 64):
            block = slice(lo, lo + 64)
            vals = U[block] @ bw.T
            vals -= q
            i = np.argmax(vals, axis=1)
            top = vals[rows[:vals.shape[0]], i]
            better = top > best[block]
            best[block] = np.where(better, top, best[block])
            arg[block] = np.where(better[:, None], pts[i], arg[block])
    _, h = _grid(v)
    out = np.empty(len(U))
    for k, u in enumerate(U):
        out[k] = max(best[k], _compass_ascent(v, u, arg[k], h))
    return out


def _compass_ascent(v: VIProblem, u, w, h: float, min_step: float = 1e-12) -> float:
    d = v.dim
    dirs = np.vstack([np.eye(d), -np.eye(d)])
    if d == 2:
        diag = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]]) / np.sqrt(2)
        dirs = np.vstack([dirs, diag])
    w = v.C._project(np.asarray(w, dtype=np.float64))
    fw = _objective(v, u, w)
    step = h
    for _ in range(100_000):
        if step < min_step * (1.0 + v.diameter):
            break
        cands = v.C._project(w + step * dirs)
        vals = np.sum(v.B._apply(cands) * (u - cands), axis=1)
        j = int(np.argmax(vals))
        if vals[j] > fw:
            w, fw = cands[j], float(vals[j])
        else:
            step *= 0.5
    return fw


def affine_parts(B: CocoerciveOperator):
    """``(M, b)`` with ``B w = M w + b`` for affine catalog operators, else ``None``."""
    if isinstance(B, AffineOperator):
        return B.M, B.b
    if isinstance(B, QuadraticGradient):
        return B.L * np.eye(B.dim), -B.L * B.center
    if isinstance(B, LeastSquaresGradient):
        m = B.X.shape[0]
        return B.X.T @ B.X / m, -B.X.T @ B.y / m
    return None


def _merit_affine(v: VIProblem, u, M, b, max_iter: int = 20_000, tol: float = 1e-13) -> float:
    # f(w) = <Mw + b, u - w> is concave with gradient M^T u - (M + M^T) w - b
    H = M + M.T
    lip = np.linalg.norm(H, 2)
    step = 1.0 / lip if lip > 0 else 1.0
    rng = np.random.default_rng(0)
    C = v.C
    if isinstance(C, BoxNormalCone):
        starts = rng.uniform(C.lower, C.upper, size=(MULTISTARTS, v.dim))
    else:
        starts = C.center + rng.uniform(-C.radius, C.radius, size=(MULTISTARTS, v.dim))
    W = C._project(starts)
    for _ in range(max_iter):
        grad = u @ M - W @ H.T - b
        W_new = C._project(W + step * grad)
        if np.max(np.abs(W_new - W)) <= tol:
            W = W_new
            break
        W = W_new
    vals = np.sum((W @ M.T + b) * (u - W), axis=1)
    return float(vals.max())
