"""Non-asymptotic bounds on ``s_n = E||w_n - w*||^2`` for strongly monotone problems.

With ``eta_n = c n**-theta`` the mean squared error obeys, for ``n >= n0``,
``s_{n+1} <= (1 - eta_n) s_n + tau eta_n**2``. :func:`est1` (``theta < 1``)
and :func:`est11` (``theta = 1``) are closed-form solutions of that
recursion valid for ``n >= 2 n0``; :func:`chung_oracle` iterates it with
equality, which is the worst sequence the recursion admits.

All functions accept scalar or array ``n``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .core import ConfigError, ContractError

RATE_CLASSES = ("n_pow_neg_theta", "n_pow_neg_c", "n_inv_log", "n_inv")


def phi(c: float, t):
    """``(t**c - 1)/c``, or ``log t`` at ``c = 0``."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0):
        raise ContractError("phi is defined for t > 0 only")
    log_t = np.log(t_arr)
    x = c * log_t
    # log t * expm1(x)/x stays accurate for tiny or subnormal c
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(x == 0, log_t, log_t * (np.expm1(x) / np.where(x == 0, 1.0, x)))
    return float(out) if out.ndim == 0 else out


def first_index(rate: float, theta: float) -> int:
    """Smallest integer ``n0 >= 2`` with ``rate * n**-theta <= 1`` for all ``n >= n0``."""
    n0 = max(2, math.ceil(rate ** (1.0 / theta) - 1e-9))
    while rate * n0 ** (-theta) > 1.0:
        n0 += 1
    while n0 > 2 and rate * (n0 - 1) ** (-theta) <= 1.0:
        n0 -= 1
    return n0


def _check_range(n, n0):
    if np.any(np.asarray(n) < 2 * n0):
        raise ContractError(f"bound is only valid for n >= 2*n0 = {2 * n0}")


def est1(theta: float, c: float, tau: float, n0: int, s_n0: float, n):
    """Bound on ``s_{n+1}`` for ``0 < theta < 1`` and ``n >= 2 n0``.

    The two exponentials are merged in log space so that large ``n0`` does
    not overflow; an underflowing exponential contributes 0.
    """
    if not 0 < theta < 1:
        raise ContractError("est1 needs theta in (0, 1)")
    if s_n0 < 0:
        raise ContractError("s_n0 must be nonnegative")
    _check_range(n, n0)
    n = np.asarray(n, dtype=np.float64)
    t = 1.0 - 2.0 ** (theta - 1.0)
    p = 1.0 - theta
    decay = -c * t * (n + 1.0) ** p / p
    noise = tau * c * c * phi(1.0 - 2.0 * theta, n) * np.exp(decay)
    with np.errstate(over="ignore"):
        # for theta near 1 the start term can exceed the float range; +inf is still a bound
        start = 0.0 if s_n0 == 0 else s_n0 * np.exp(c * n0**p / p + decay)
    tail = tau * 2.0**theta * c / (n - 2.0) ** theta
    out = noise + start + tail
    return float(out) if out.ndim == 0 else out


def est11(c: float, tau: float, n0: int, s_n0: float, n):
    """Bound on ``s_{n+1}`` for ``theta = 1`` and ``n >= 2 n0``."""
    if s_n0 < 0:
        raise ContractError("s_n0 must be nonnegative")
    _check_range(n, n0)
    n = np.asarray(n, dtype=np.float64)
    out = s_n0 * (n0 / (n + 1.0)) ** c \
        + tau * c * c * (1.0 + 1.0 / n0) ** c * phi(c - 1.0, n) / (n + 1.0) ** c
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RateConstants:
    """Problem and schedule constants entering the bounds.

    ``c_variant`` selects the contraction constant: ``"two_nu"`` uses
    ``2 nu + mu eps`` and ``"one_nu"`` uses ``nu + mu eps``.
    ``tau_norm_power`` is the power of ``||B w*||`` inside ``tau`` (2 by
    default, matching the chi-squared sequence; 1 reproduces the other printed
    form).
    """

    theta: float
    c1: float
    lambda_lower: float
    nu: float
    mu: float
    epsilon: float
    sigma: float
    alpha_bar: float = 0.0
    B_at_solution_norm: float = 0.0
    c_variant: str = "two_nu"
    tau_norm_power: int = 2

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ContractError("theta must lie in (0, 1]")
        if not self.c1 > 0:
            raise ContractError("c1 must be positive")
        if not 0 < self.lambda_lower <= 1:
            raise ContractError("lambda_lower must lie in (0, 1]")
        if self.nu < 0 or self.mu < 0 or self.nu + self.mu <= 0:
            raise ContractError("need nu, mu >= 0 with nu + mu > 0")
        if not 0 < self.epsilon < 2:
            raise ContractError("epsilon must lie in (0, 2)")
        if self.sigma < 0 or self.alpha_bar < 0 or self.B_at_solution_norm < 0:
            raise ContractError("sigma, alpha_bar and ||Bw*|| must be nonnegative")
        if self.c_variant not in ("two_nu", "one_nu"):
            raise ContractError("c_variant must be 'two_nu' or 'one_nu'")
        if self.tau_norm_power not in (1, 2):
            raise ContractError("tau_norm_power must be 1 or 2")

    @classmethod
    def from_dict(cls, data: Mapping) -> "RateConstants":
        names = [f.name for f in fields(cls)]
        required = ["theta", "c1", "lambda_lower", "nu", "mu", "epsilon", "sigma"]
        missing = [n for n in required if n not in data]
        if missing:
            raise ConfigError("constants", "missing " + ", ".join(missing))
        unknown = sorted(set(data) - set(names) - {"s_n0"})
        if unknown:
            raise ConfigError("constants", "unknown " + ", ".join(unknown))
        try:
            return cls(**{k: v for k, v in data.items() if k in names})
        except ContractError as exc:
            raise ConfigError("constants", str(exc)) from None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def t(self) -> float:
        return 1.0 - 2.0 ** (self.theta - 1.0)

    @property
    def c(self) -> float:
        strong = (2.0 if self.c_variant == "two_nu" else 1.0) * self.nu + self.mu * self.epsilon
        return self.c1 * self.lambda_lower * strong / (1.0 + self.nu) ** 2

    @property
    def tau(self) -> float:
        b = self.B_at_solution_norm ** self.tau_norm_power
        return 2.0 * self.sigma**2 * self.c1**2 * (1.0 + self.alpha_bar * b) / self.c**2

    @property
    def n0(self) -> int:
        return first_index(max(self.c, self.c1), self.theta)


def est1_bound(k: RateConstants, s_n0: float, n):
    if k.theta >= 1:
        raise ContractError("est1_bound needs theta < 1")
    return est1(k.theta, k.c, k.tau, k.n0, s_n0, n)


def est11_bound(k: RateConstants, s_n0: float, n):
    if k.theta != 1:
        raise ContractError("est11_bound needs theta = 1")
    return est11(k.c, k.tau, k.n0, s_n0, n)


def bound_on_s(k: RateConstants, s_n0: float, m):
    """Bound on ``s_m`` itself, i.e. the closed form evaluated at ``n = m - 1``."""
    n = np.asarray(m) - 1
    if k.theta < 1:
        return est1_bound(k, s_n0, n)
    return est11_bound(k, s_n0, n)


def asymptotic_class(k: RateConstants) -> str:
    if k.theta < 1:
        return "n_pow_neg_theta"
    c = k.c
    if math.isclose(c, 1.0, rel_tol=1e-12):
        return "n_inv_log"
    return "n_pow_neg_c" if c < 1 else "n_inv"


@dataclass(frozen=True)
class ChungParams:
    alpha: float
    c: float
    tau: float
    s_start: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ContractError("alpha must lie in (0, 1]")
        if not self.c > 0 or self.tau < 0 or self.s_start < 0:
            raise ContractError("need c > 0, tau >= 0, s_start >= 0")

    @property
    def n0(self) -> int:
        return first_index(self.c, self.alpha)

    def bound(self, n):
        """Closed-form bound on ``s_{n+1}`` for ``n >= 2 n0``."""
        if self.alpha < 1:
            return est1(self.alpha, self.c, self.tau, self.n0, self.s_start, n)
        return est11(self.c, self.tau, self.n0, self.s_start, n)


def chung_oracle(p: ChungParams, n_max: int) -> np.ndarray:
    """``s_n`` for ``n = n0 .. n_max`` from the recursion taken with equality.

    Entry ``k`` of the result is ``s_{n0 + k}``.
    """
    n0 = p.n0
    if n_max < n0:
        raise ContractError(f"n_max must be >= n0 = {n0}")
    s = np.empty(n_max - n0 + 1)
    s[0] = p.s_start
    val = p.s_start
    for k in range(1, s.size):
        n = n0 + k - 1
        eta = p.c * n ** (-p.alpha)
        val = (1.0 - eta) * val + p.tau * eta * eta
        s[k] = val
    return s


def bound_curve_csv(k: RateConstants, s_n0: float, grid) -> str:
    """CSV ``n,bound`` of the bound on ``s_n`` over grid indices ``n > 2 n0``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "bound"])
    for m in grid:
        if m - 1 >= 2 * k.n0:
            writer.writerow([int(m), repr(float(bound_on_s(k, s_n0, m)))])
    return buf.getvalue()


def monotonicity_violations(k: RateConstants, s_n0: float, grid) -> list:
    """Grid indices ``m`` (with ``m - 1 >= 2 n0``) where the bound on ``s_m`` rises.

    The closed forms need not decrease right after ``2 n0``; this reports
    where they do not instead of asserting it.
    """
    grid = [int(m) for m in grid if m - 1 >= 2 * k.n0]
    vals = np.asarray(bound_on_s(k, s_n0, np.array(grid)))
    return [grid[i + 1] for i in np.nonzero(np.diff(vals) > 0)[0]]
