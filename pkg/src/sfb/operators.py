"""Catalog of monotone operators.

Maximal monotone operators ``A`` are only ever used through their resolvents
``J_{gamma A} = (I + gamma A)^{-1}``; cocoercive operators ``B`` are evaluated
directly and carry a certified cocoercivity constant ``beta``.

Every operator accepts either a single point of shape ``(d,)`` or a batch of
shape ``(R, d)``; the public :meth:`resolvent` / :meth:`apply` methods
validate single points, the underscored variants are the unchecked batch
kernels used by the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConfigError, ContractError, as_point

POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10_000


def operator_norm(M, tol: float = POWER_ITER_TOL, max_iter: int = POWER_ITER_MAX) -> float:
    """Spectral norm of ``M`` by power iteration on ``M^T M``."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    G = M.T @ M
    v = np.random.default_rng(0).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = G @ v
        lam_new = float(v @ u)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = u / nu
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    # Rayleigh quotient converges from below; one more product tightens it
    lam = max(lam, float(v @ G @ v))
    return math.sqrt(lam)


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


# ---------------------------------------------------------------------------
# Resolvent-represented operators


class ResolventOperator:
    """Base class; subclasses implement :meth:`_resolvent` on ``(..., d)`` arrays."""

    kind = "custom"
    #: strong monotonicity modulus of A
    nu = 0.0
    dim: Optional[int] = None

    def resolvent(self, gamma: float, z) -> np.ndarray:
        if not gamma > 0:
            raise ContractError("gamma must be positive")
        z = as_point(z, self.dim, name="z")
        return self._resolvent(float(gamma), z)

    def _resolvent(self, gamma, z):
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError(f"{self.kind} operators cannot be serialized")


class ZeroOperator(ResolventOperator):
    """``A = 0`` (normal cone of the whole space); the resolvent is the identity."""

    kind = "zero"

    def __init__(self, dim: Optional[int] = None):
        self.dim = dim

    def _resolvent(self, gamma, z):
        return np.array(z, dtype=np.float64, copy=True)

    def to_spec(self):
        return {"kind": "zero"}


class _ConvexSet(ResolventOperator):
    """Normal cone of a closed convex set; its resolvent is the projection."""

    def project(self, z) -> np.ndarray:
        return self._project(as_point(z, self.dim, name="z"))

    def _resolvent(self, gamma, z):
        return self._project(z)

    def contains(self, w, tol: float = 1e-12) -> bool:
        w = np.asarray(w, dtype=np.float64)
        return bool(np.all(np.linalg.norm(self._project(w) - w, axis=-1) <= tol))

    @property
    def center(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def farthest_sq_dist(self, w) -> float:
        """``sup_{u in C} ||w - u||^2`` for a fixed point ``w``."""
        raise NotImplementedError


class BoxNormalCone(_ConvexSet):
    kind = "normal_cone_box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        lower, upper = np.broadcast_arrays(lower, upper)
        if np.any(lower > upper):
            raise ContractError("empty box: some lower bound exceeds its upper bound")
        self.lower = lower.copy()
        self.upper = upper.copy()
        self.dim = self.lower.size

    def _project(self, z):
        return np.clip(z, self.lower, self.upper)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def farthest_sq_dist(self, w):
        w = np.asarray(w, dtype=np.float64)
        return float(np.sum(np.maximum((w - self.lower) ** 2, (self.upper - w) ** 2)))

    def to_spec(self):
        return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


class BallNormalCone(_ConvexSet):
    kind = "normal_cone_ball"

    def __init__(self, center, radius: float):
        if not radius > 0:
            raise ContractError("ball radius must be positive")
        self._center = as_point(center, name="center")
        self.radius = float(radius)
        self.dim = self._center.size

    def _project(self, z):
        d = z - self._center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        outside = r > self.radius
        if not np.any(outside):
            return np.array(z, dtype=np.float64, copy=True)
        scale = np.where(outside, self.radius / np.where(r > 0, r, 1.0), 1.0)
        y = np.where(outside, self._center + d * scale, z)
        # round-off can leave y a few ulps outside; pull it in so projecting again is a no-op
        for _ in range(8):
            over = np.linalg.norm(y - self._center, axis=-1, keepdims=True) > self.radius
            if not np.any(over):
                break
            scale = np.where(over, scale * (1.0 - 4.0 * np.finfo(float).eps), scale)
            y = np.where(over, self._center + d * scale, y)
        return y

    @property
    def center(self):
        return self._center

    @property
    def diameter(self):
        return 2.0 * self.radius

    def farthest_sq_dist(self, w):
        return float((np.linalg.norm(np.asarray(w) - self._center) + self.radius) ** 2)

    def to_spec(self):
        return {"kind": self.kind, "center": self._center.tolist(), "radius": self.radius}


class ScaledIdentity(ResolventOperator):
    """``A = a I`` with ``a >= 0``; ``J_{gamma A} z = z / (1 + gamma a)``."""

    kind = "scaled_identity"

    def __init__(self, a: float, dim: Optional[int] = None):
        if a < 0:
            raise ContractError("scaled_identity needs a >= 0")
        self.a = float(a)
        self.nu = self.a
        self.dim = dim

    def _resolvent(self, gamma, z):
        return z / (1.0 + gamma * self.a)

    def to_spec(self):
        return {"kind": self.kind, "a": self.a}


class L1Subdifferential(ResolventOperator):
    """``A = d(weight * ||.||_1)``; the resolvent is soft thresholding."""

    kind = "subdifferential_l1"

    def __init__(self, weight: float, dim: Optional[int] = None):
        if weight < 0:
            raise ContractError("l1 weight must be nonnegative")
        self.weight = float(weight)
        self.dim = dim

    def _resolvent(self, gamma, z):
        return soft_threshold(z, gamma * self.weight)

    def to_spec(self):
        return {"kind": self.kind, "weight": self.weight}


class CustomResolvent(ResolventOperator):
    """Wrap a user resolvent ``fn(gamma, z) -> y`` acting on single points."""

    kind = "custom"

    def __init__(self, fn: Callable, nu: float = 0.0, dim: Optional[int] = None):
        self.fn = fn
        self.nu = float(nu)
        self.dim = dim

    def _resolvent(self, gamma, z):
        if z.ndim == 1:
            return np.asarray(self.fn(gamma, z), dtype=np.float64)
        return np.stack([np.asarray(self.fn(gamma, row), dtype=np.float64) for row in z])


# ---------------------------------------------------------------------------
# Separable penalties  G(w) = sum_k phi_k(w_k) + (nu/2) w_k^2

PENALTY_KINDS = ("zero", "abs_weighted", "square_weighted", "indicator_interval")


@dataclass(frozen=True)
class ScalarPenalty:
    """Convex ``phi`` on the real line with ``phi >= phi(0) = 0``.

    ``abs_weighted``: ``weight * |x|``; ``square_weighted``: ``weight/2 * x^2``;
    ``indicator_interval``: 0 on ``[lower, upper]`` (which must contain 0),
    ``+inf`` elsewhere.
    """

    kind: str = "zero"
    weight: float = 0.0
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ConfigError("penalty.kind", f"unknown penalty kind {self.kind!r}")
        if self.weight < 0:
            raise ConfigError("penalty.weight", "penalty weight must be nonnegative")
        if self.kind == "indicator_interval" and not (self.lower <= 0.0 <= self.upper):
            raise ConfigError("penalty.interval", "interval must contain 0 so that phi(0) = 0 is the minimum")

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "abs_weighted":
            return self.weight * np.abs(x)
        if self.kind == "square_weighted":
            return 0.5 * self.weight * x * x
        return np.where((x >= self.lower) & (x <= self.upper), 0.0, np.inf)

    def prox(self, step, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "zero":
            return x.copy()
        if self.kind == "abs_weighted":
            return soft_threshold(x, step * self.weight)
        if self.kind == "square_weighted":
            return x / (1.0 + step * self.weight)
        return np.clip(x, self.lower, self.upper)

    def to_spec(self):
        spec = {"kind": self.kind}
        if self.kind in ("abs_weighted", "square_weighted"):
            spec["weight"] = self.weight
        if self.kind == "indicator_interval":
            spec["lower"], spec["upper"] = self.lower, self.upper
        return spec


class SeparablePenalty(ResolventOperator):
    """``A = dG`` for ``G(w) = sum_k phi_k(w_k) + (nu/2) w_k^2`` in the standard basis.

    A single penalty is broadcast over all coordinates.
    """

    kind = "separable_penalty"

    def __init__(self, per_coordinate: Sequence[ScalarPenalty], nu: float = 0.0):
        if len(per_coordinate) == 0:
            raise ContractError("need at least one coordinate penalty")
        if nu < 0:
            raise ContractError("quadratic weight nu must be nonnegative")
        self.per_coordinate = tuple(per_coordinate)
        self.nu = float(nu)
        self.dim = len(self.per_coordinate) if len(self.per_coordinate) > 1 else None
        kinds = [PENALTY_KINDS.index(p.kind) for p in self.per_coordinate]
        self._kind = np.array(kinds)
        self._weight = np.array([p.weight for p in self.per_coordinate])
        self._lower = np.array([p.lower for p in self.per_coordinate])
        self._upper = np.array([p.upper for p in self.per_coordinate])

    def value(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        pens = self.per_coordinate * (w.size if len(self.per_coordinate) == 1 else 1)
        return float(sum(p.value(x) for p, x in zip(pens, w)) + 0.5 * self.nu * np.dot(w, w))

    def _resolvent(self, gamma, z):
        return separable_prox_step(self, gamma, z)

    def to_spec(self):
        return {
            "kind": self.kind,
            "nu": self.nu,
            "penalties": [p.to_spec() for p in self.per_coordinate],
        }


def separable_prox_step(P: SeparablePenalty, gamma: float, z) -> np.ndarray:
    """Coordinate-wise ``prox_{gamma/(1+nu gamma) phi_k}(z_k / (1 + nu gamma))``."""
    if not gamma > 0:
        raise ContractError("gamma must be positive")
    z = np.asarray(z, dtype=np.float64)
    scale = 1.0 + P.nu * gamma
    step = gamma / scale
    x = z / scale
    k, wt, lo, hi = P._kind, P._weight, P._lower, P._upper
    out = np.where(k == 1, soft_threshold(x, step * wt), x)
    out = np.where(k == 2, x / (1.0 + step * wt), out)
    out = np.where(k == 3, np.clip(x, lo, hi), out)
    return out


def resolvent(A: ResolventOperator, gamma: float, z) -> np.ndarray:
    return A.resolvent(gamma, z)


def project(C: ResolventOperator, z) -> np.ndarray:
    if not isinstance(C, _ConvexSet):
        raise ContractError(f"project needs a box or ball, got {C.kind}")
    return C.project(z)


# ---------------------------------------------------------------------------
# Cocoercive operators


class CocoerciveOperator:
    """Single-valued ``B`` with ``<w - y, Bw - By> >= beta ||Bw - By||^2``.

    ``mu`` is a strong monotonicity modulus (0 if none is known).
    """

    kind = "custom"
    beta: float
    mu = 0.0
    weakly_continuous = True
    dim: Optional[int] = None

    def apply(self, w) -> np.ndarray:
        w = as_point(w, self.dim, name="w")
        return self._apply(w)

    def _apply(self, w):
        raise NotImplementedError

    def to_spec(self) -> dict:
        raise NotImplementedError(f"{self.kind} operators cannot be serialized")


class AffineOperator(CocoerciveOperator):
    """``B w = M w + b`` for a monotone matrix ``M``.

    Symmetric ``M`` is treated as the Hessian of a convex quadratic
    (``beta = 1/||M||``); otherwise ``beta = lambda_min(sym M) / ||M||^2``,
    which requires a positive definite symmetric part.
    """

    def __init__(self, M, b=None):
        M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        if M.shape[0] != M.shape[1]:
            raise ContractError("affine operator needs a square matrix")
        self.M = M
        self.dim = M.shape[0]
        self.b = np.zeros(self.dim) if b is None else as_point(b, self.dim, name="b")
        sym = 0.5 * (M + M.T)
        lam_min = float(np.linalg.eigvalsh(sym)[0])
        opnorm = operator_norm(M)
        if lam_min < -1e-12 * max(opnorm, 1.0):
            raise ContractError("matrix is not monotone: symmetric part has a negative eigenvalue")
        if opnorm == 0.0:
            raise ContractError("zero matrix has no finite cocoercivity constant")
        if np.array_equal(M, M.T):
            self.kind = "affine_spd" if lam_min > 0 else "affine_psd"
            self.beta = 1.0 / opnorm
        else:
            if lam_min <= 0:
                raise ContractError("non-symmetric matrix with singular symmetric part is not cocoercive")
            self.kind = "affine_monotone"
            self.beta = lam_min / opnorm**2
        self.mu = max(lam_min, 0.0)

    def _apply(self, w):
        return w @ self.M.T + self.b

    def to_spec(self):
        return {"kind": "affine", "M": self.M.tolist(), "b": self.b.tolist()}


class QuadraticGradient(CocoerciveOperator):
    """Gradient of ``(L/2) ||w - center||^2``."""

    kind = "gradient_quadratic"

    def __init__(self, center, L: float = 1.0):
        if not L > 0:
            raise ContractError("smoothness constant L must be positive")
        self.center = as_point(center, name="center")
        self.L = float(L)
        self.dim = self.center.size
        self.beta = 1.0 / self.L
        self.mu = self.L

    def _apply(self, w):
        return self.L * (w - self.center)

    def to_spec(self):
        return {"kind": self.kind, "center": self.center.tolist(), "L": self.L}


class LeastSquaresGradient(CocoerciveOperator):
    """Gradient of ``||X w - y||^2 / (2m)`` for an ``m x d`` design ``X``."""

    kind = "gradient_least_squares"

    def __init__(self, X, y):
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.y = as_point(y, self.X.shape[0], name="targets")
        m, self.dim = self.X.shape
        self.L = operator_norm(self.X) ** 2 / m
        if self.L == 0.0:
            raise ContractError("design matrix is zero")
        self.beta = 1.0 / self.L
        self.mu = max(float(np.linalg.eigvalsh(self.X.T @ self.X / m)[0]), 0.0)

    def _apply(self, w):
        m = self.X.shape[0]
        return ((w @ self.X.T) - self.y) @ self.X / m

    def to_spec(self):
        return {"kind": self.kind, "X": self.X.tolist(), "y": self.y.tolist()}


class LogisticGradient(CocoerciveOperator):
    """Gradient of the mean logistic loss plus ``(reg/2) ||w||^2``; labels in {-1, +1}."""

    kind = "gradient_logistic"

    def __init__(self, X, labels, reg: float = 0.0):
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.labels = as_point(labels, self.X.shape[0], name="labels")
        if not np.all(np.abs(self.labels) == 1.0):
            raise ContractError("logistic labels must be +1 or -1")
        m, self.dim = self.X.shape
        self.reg = float(reg)
        self.L = operator_norm(self.X) ** 2 / (4.0 * m) + self.reg
        self.beta = 1.0 / self.L
        self.mu = self.reg

    def _apply(self, w):
        m = self.X.shape[0]
        margins = (w @ self.X.T) * self.labels
        weights = -self.labels * _sigmoid(-margins)
        return weights @ self.X / m + self.reg * w

    def to_spec(self):
        return {"kind": self.kind, "X": self.X.tolist(), "labels": self.labels.tolist(), "reg": self.reg}


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class CustomCocoercive(CocoerciveOperator):
    """User operator; ``fn`` maps a single point to a point."""

    kind = "custom"

    def __init__(self, fn: Callable, beta: float, mu: float = 0.0, dim: Optional[int] = None,
                 weakly_continuous: bool = True):
        if not beta > 0:
            raise ContractError("beta must be positive")
        self.fn = fn
        self.beta = float(beta)
        self.mu = float(mu)
        self.dim = dim
        self.weakly_continuous = weakly_continuous

    def _apply(self, w):
        if w.ndim == 1:
            return np.asarray(self.fn(w), dtype=np.float64)
        return np.stack([np.asarray(self.fn(row), dtype=np.float64) for row in w])


def apply(B: CocoerciveOperator, w) -> np.ndarray:
    return B.apply(w)


def beta_of(B: CocoerciveOperator) -> float:
    return B.beta


# ---------------------------------------------------------------------------
# Construction from JSON-style specs


def resolvent_from_spec(spec: dict, field: str = "A") -> ResolventOperator:
    kind = _kind(spec, field)
    try:
        if kind == "zero":
            return ZeroOperator()
        if kind == "normal_cone_box":
            return BoxNormalCone(spec["lower"], spec["upper"])
        if kind == "normal_cone_ball":
            return BallNormalCone(spec["center"], spec.get("radius", 1.0))
        if kind == "scaled_identity":
            return ScaledIdentity(spec["a"])
        if kind == "subdifferential_l1":
            return L1Subdifferential(spec["weight"])
        if kind == "separable_penalty":
            pens = [ScalarPenalty(**p) for p in spec["penalties"]]
            return SeparablePenalty(pens, spec.get("nu", 0.0))
    except KeyError as exc:
        raise ConfigError(f"{field}.{exc.args[0]}", "missing parameter") from None
    except ContractError as exc:
        raise ConfigError(field, str(exc)) from None
    raise ConfigError(f"{field}.kind", f"unsupported resolvent kind {kind!r}")


def cocoercive_from_spec(spec: dict, field: str = "B") -> CocoerciveOperator:
    kind = _kind(spec, field)
    try:
        if kind in ("affine", "affine_spd", "affine_monotone"):
            return AffineOperator(spec["M"], spec.get("b"))
        if kind == "gradient_quadratic":
            return QuadraticGradient(spec["center"], spec.get("L", 1.0))
        if kind == "gradient_least_squares":
            return LeastSquaresGradient(spec["X"], spec["y"])
        if kind == "gradient_logistic":
            return LogisticGradient(spec["X"], spec["labels"], spec.get("reg", 0.0))
    except KeyError as exc:
        raise ConfigError(f"{field}.{exc.args[0]}", "missing parameter") from None
    except ContractError as exc:
        raise ConfigError(field, str(exc)) from None
    raise ConfigError(f"{field}.kind", f"unsupported cocoercive kind {kind!r}")


def _kind(spec, field):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{field}.kind", "operator spec needs a 'kind'")
    return spec["kind"]
