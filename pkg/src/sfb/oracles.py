"""Stochastic estimates of ``B w`` with declared moment parameters.

An oracle splits each sample into a raw random draw that does not depend on
``w`` (:meth:`StochasticOracle.draw`) and a deterministic map from that draw
to the estimate (:meth:`StochasticOracle.estimate`). Solvers pre-draw blocks
of raw noise per replication; because Philox block draws match one-at-a-time
draws, a run of ``n`` steps leaves the stream exactly where ``n`` calls to
:meth:`StochasticOracle.sample` would.

Gaussian noise is normalized so that ``E||noise||^2`` equals the declared
variance in any dimension: additive noise has ``E||B_n - Bw||^2 = s^2`` and
relative noise ``s^2 (1 + alpha_bar ||Bw||^2)``, where ``s`` is the true
noise scale (by default the declared ``sigma``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ConfigError, ContractError, RandomStream, as_point
from .operators import CocoerciveOperator

NOISE_MODELS = ("exact", "additive_gaussian", "relative_gaussian", "finite_sum_sampling")


@dataclass(frozen=True)
class OracleParams:
    """Declared constants: ``sigma`` and the sequence ``alpha_n <= alpha_bar``.

    ``alpha`` is either a constant or an explicit list indexed from ``n = 1``;
    past the end of a list the last value is repeated.
    """

    sigma: float
    alpha: object = None
    alpha_bar: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ContractError("sigma must be nonnegative")
        alpha = self.alpha_bar if self.alpha is None else self.alpha
        if np.ndim(alpha) == 0:
            alpha = float(alpha)
            if alpha < 0:
                raise ContractError("alpha must be nonnegative")
        else:
            alpha = tuple(float(a) for a in alpha)
            if len(alpha) == 0 or min(alpha) < 0:
                raise ContractError("alpha sequence must be nonempty and nonnegative")
        object.__setattr__(self, "alpha", alpha)
        if max(np.atleast_1d(alpha)) > self.alpha_bar:
            raise ContractError("every alpha_n must be <= alpha_bar")

    def alpha_at(self, n) -> np.ndarray:
        """``alpha_n`` for integer index (or array of indices) ``n >= 1``."""
        n = np.asarray(n)
        if isinstance(self.alpha, float):
            return np.full(n.shape, self.alpha)
        seq = np.asarray(self.alpha)
        return seq[np.minimum(n, len(seq)) - 1]


class StochasticOracle:
    """Unbiased random estimate of ``B w`` under one of :data:`NOISE_MODELS`.

    Parameters
    ----------
    base : CocoerciveOperator
        The operator being estimated.
    noise_model : str
        ``exact`` returns ``Bw``; ``additive_gaussian`` adds isotropic noise;
        ``relative_gaussian`` scales that noise by ``sqrt(1 + alpha_bar ||Bw||^2)``;
        ``finite_sum_sampling`` returns one uniformly drawn component
        ``b_i(w)`` with ``B = mean_i b_i``.
    params : OracleParams
        Declared ``(sigma, alpha)``; these feed assumption checks and bounds.
    noise_scale : float, optional
        True noise level. Defaults to ``params.sigma``; set it differently to
        build a misdeclared oracle.
    components : sequence of CocoerciveOperator, optional
        Required for ``finite_sum_sampling``; ``base`` is then their mean.
    """

    def __init__(self, base: Optional[CocoerciveOperator], noise_model: str = "exact",
                 params: Optional[OracleParams] = None, noise_scale: Optional[float] = None,
                 components: Optional[Sequence[CocoerciveOperator]] = None):
        if noise_model not in NOISE_MODELS:
            raise ContractError(f"unknown noise model {noise_model!r}")
        self.noise_model = noise_model
        self.params = params if params is not None else OracleParams(sigma=0.0)
        self.noise_scale = self.params.sigma if noise_scale is None else float(noise_scale)
        if noise_model == "finite_sum_sampling":
            if not components:
                raise ContractError("finite_sum_sampling needs at least one component")
            self.components = tuple(components)
            base = FiniteSumOperator(self.components) if base is None else base
        else:
            self.components = ()
        if base is None:
            raise ContractError("oracle needs a base operator")
        self.base = base
        self.dim = base.dim

    @property
    def sigma(self) -> float:
        return self.params.sigma

    def draw(self, stream: RandomStream, n: int, dim: int) -> Optional[np.ndarray]:
        """Raw randomness for ``n`` consecutive samples."""
        stream.n_samples += n
        if self.noise_model == "exact":
            return None
        if self.noise_model == "finite_sum_sampling":
            return stream.integers(len(self.components), size=n)
        return stream.normal((n, dim))

    def estimate(self, w: np.ndarray, bw: np.ndarray, raw) -> np.ndarray:
        """Map raw draws to estimates; ``w``/``bw`` are ``(R, d)``, ``raw`` matches."""
        if self.noise_model == "exact":
            return bw
        if self.noise_model == "finite_sum_sampling":
            out = np.empty_like(bw)
            for i, comp in enumerate(self.components):
                rows = raw == i
                if np.any(rows):
                    out[rows] = comp._apply(w[rows])
            return out
        scale = self.noise_scale / np.sqrt(bw.shape[-1])
        if self.noise_model == "relative_gaussian":
            sq = np.sum(bw * bw, axis=-1, keepdims=True)
            scale = scale * np.sqrt(1.0 + self.params.alpha_bar * sq)
        return bw + scale * raw

    def sample(self, w, stream: RandomStream) -> np.ndarray:
        w = as_point(w, self.dim, name="w")
        bw = self.base._apply(w)
        raw = self.draw(stream, 1, w.size)
        raw = None if raw is None else raw[0:1]
        return self.estimate(w[None], bw[None], raw)[0]

    def declared_variance(self, bw, n: int = 1) -> np.ndarray:
        """Right-hand side of the second-moment condition at ``Bw``."""
        bw = np.asarray(bw, dtype=np.float64)
        sq = np.sum(bw * bw, axis=-1)
        return self.params.sigma**2 * (1.0 + self.params.alpha_at(n) * sq)

    def to_spec(self) -> dict:
        spec = {"noise_model": self.noise_model, "sigma": self.params.sigma,
                "alpha_bar": self.params.alpha_bar}
        if isinstance(self.params.alpha, tuple):
            spec["alpha"] = list(self.params.alpha)
        if self.noise_scale != self.params.sigma:
            spec["noise_scale"] = self.noise_scale
        return spec


class FiniteSumOperator(CocoerciveOperator):
    """``B w = mean_i b_i(w)``; cocoercive with the smallest component constant."""

    kind = "finite_sum"

    def __init__(self, components: Sequence[CocoerciveOperator]):
        if not components:
            raise ContractError("finite sum needs at least one component")
        self.components = tuple(components)
        self.dim = self.components[0].dim
        # mean of beta_i-cocoercive maps is (min beta_i)-cocoercive
        self.beta = min(c.beta for c in self.components)
        self.mu = min(c.mu for c in self.components)

    def _apply(self, w):
        return sum(c._apply(w) for c in self.components) / len(self.components)


def oracle_from_spec(spec: dict, base: CocoerciveOperator, components=None) -> StochasticOracle:
    model = spec.get("noise_model", "exact")
    if model not in NOISE_MODELS:
        raise ConfigError("oracle.noise_model", f"unknown noise model {model!r}")
    try:
        params = OracleParams(
            sigma=float(spec.get("sigma", 0.0)),
            alpha=spec.get("alpha"),
            alpha_bar=float(spec.get("alpha_bar", 0.0)),
        )
        return StochasticOracle(base, model, params, spec.get("noise_scale"), components)
    except ContractError as exc:
        raise ConfigError("oracle", str(exc)) from None


# ---------------------------------------------------------------------------
# Moment verification


@dataclass
class PointMoments:
    w: np.ndarray
    bias_norm: float
    bias_tol: float
    empirical_variance: float
    declared_variance: float
    variance_ratio: float
    ratio_tol: float

    @property
    def passed(self) -> bool:
        return self.bias_norm <= self.bias_tol and self.variance_ratio <= self.ratio_tol


@dataclass
class MomentReport:
    n_draws: int
    points: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)


def verify_moments(o: StochasticOracle, test_points, n_draws: int, stream: RandomStream) -> MomentReport:
    """Empirical check of unbiasedness and the declared second-moment bound.

    At each point the bias norm must stay below ``5 sigma (1 + ||Bw||) / sqrt(N)``
    and the ratio of empirical to declared variance below ``1 + 5 / sqrt(N)``.
    """
    if n_draws < 10_000:
        raise ContractError("verify_moments needs n_draws >= 10^4")
    report = MomentReport(n_draws=n_draws)
    root = np.sqrt(n_draws)
    for w in test_points:
        w = as_point(w, o.dim)
        bw = o.base._apply(w)
        W = np.broadcast_to(w, (n_draws, w.size))
        BW = np.broadcast_to(bw, (n_draws, w.size))
        est = o.estimate(W, BW, o.draw(stream, n_draws, w.size))
        err = est - bw
        bias = float(np.linalg.norm(err.mean(axis=0)))
        emp = float(np.mean(np.sum(err * err, axis=-1)))
        decl = float(o.declared_variance(bw))
        if emp == 0.0:
            ratio = 0.0
        elif decl == 0.0:
            ratio = np.inf
        else:
            ratio = emp / decl
        bw_norm = float(np.linalg.norm(bw))
        report.points.append(PointMoments(
            w=w, bias_norm=bias, bias_tol=5.0 * o.sigma * (1.0 + bw_norm) / root,
            empirical_variance=emp, declared_variance=decl,
            variance_ratio=ratio, ratio_tol=1.0 + 5.0 / root,
        ))
    return report
