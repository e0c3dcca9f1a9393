"""Ambient-space helpers, problem records, trajectories and seeded randomness.

Points are plain 1-D ``float64`` numpy arrays. Public entry points validate
them with :func:`as_point`; internal batched code works on ``(R, d)`` arrays
and skips the checks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ContractError(ValueError):
    """Raised when a documented precondition is violated."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def as_point(x, dim: Optional[int] = None, name: str = "point") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array, optionally of length ``dim``."""
    arr = np.array(x, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractError(f"{name} must be a non-empty vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise ContractError(f"{name} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite coordinates")
    return arr


def dot(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def norm(a) -> float:
    return float(np.sqrt(dot(a, a)))


@dataclass(frozen=True)
class InclusionProblem:
    """Find ``w`` with ``0 in A w + B w``.

    ``A`` is any resolvent-representable operator from :mod:`sfb.operators`
    and ``B`` a cocoercive one. A supplied ``known_solution`` is checked
    through the fixed-point residual at ``gamma = beta`` and rejected when the
    residual exceeds ``solution_tol``.
    """

    A: object
    B: object
    beta: Optional[float] = None
    known_solution: Optional[np.ndarray] = None
    strong_monotonicity: Optional[tuple] = None
    solution_tol: float = 1e-9

    def __post_init__(self):
        beta = self.B.beta if self.beta is None else float(self.beta)
        if not beta > 0:
            raise ContractError(f"beta must be positive, got {beta}")
        object.__setattr__(self, "beta", beta)
        if self.strong_monotonicity is not None:
            nu, mu = (float(v) for v in self.strong_monotonicity)
            if nu < 0 or mu < 0 or nu + mu <= 0:
                raise ContractError("strong monotonicity needs nu, mu >= 0 and nu + mu > 0")
            object.__setattr__(self, "strong_monotonicity", (nu, mu))
        if self.known_solution is not None:
            w = as_point(self.known_solution, name="known_solution")
            w.setflags(write=False)
            object.__setattr__(self, "known_solution", w)
            res = fixed_point_residual(self, w, beta)
            if res > self.solution_tol:
                raise ContractError(
                    f"known_solution is not a zero of A + B (fixed-point residual {res:.3e})"
                )

    @property
    def dim(self) -> Optional[int]:
        if self.known_solution is not None:
            return self.known_solution.size
        return getattr(self.B, "dim", None)


def fixed_point_residual(p: InclusionProblem, w, gamma: float) -> float:
    """``||w - J_{gamma A}(w - gamma B w)||``; zero exactly on ``zer(A + B)``."""
    if not gamma > 0:
        raise ContractError("gamma must be positive")
    w = as_point(w)
    y = p.A.resolvent(gamma, w - gamma * p.B.apply(w))
    return norm(w - y)


@dataclass
class Trajectory:
    """Iterates ``w_1 .. w_{N+1}`` of one run plus optional per-step records.

    ``w[k]`` holds ``w_{k+1}``; per-step arrays (``z``, ``y``, ``gamma``,
    ``lam``, ``b_sq_norm``) have one entry per step ``n = 1 .. N``.
    """

    w: np.ndarray
    z: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    sq_dist: Optional[np.ndarray] = None
    b_sq_norm: Optional[np.ndarray] = None

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.ndim != 2:
            raise ContractError("iterates must be a (N+1, d) array")
        if self.sq_dist is not None:
            self.sq_dist = np.asarray(self.sq_dist, dtype=np.float64)
            if self.sq_dist.shape != (len(self.w),) or np.any(self.sq_dist < 0):
                raise ContractError("sq_dist must be nonnegative with one entry per iterate")

    @property
    def n(self) -> np.ndarray:
        return np.arange(1, len(self.w) + 1)

    def __len__(self):
        return len(self.w)

    def to_csv(self) -> str:
        """CSV with columns ``n,sq_dist,gamma,lambda``; blanks where undefined."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "sq_dist", "gamma", "lambda"])
        steps = 0 if self.gamma is None else len(self.gamma)
        for k in range(len(self.w)):
            writer.writerow([
                k + 1,
                _fmt(self.sq_dist[k]) if self.sq_dist is not None else "",
                _fmt(self.gamma[k]) if k < steps else "",
                _fmt(self.lam[k]) if self.lam is not None and k < steps else "",
            ])
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {}
        for name in ("w", "z", "y", "gamma", "lam", "sq_dist", "b_sq_norm"):
            value = getattr(self, name)
            if value is not None:
                out[name] = np.asarray(value).tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        kwargs = {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replication_id: int = 0

    def __post_init__(self):
        if self.replication_id < 0:
            raise ContractError("replication_id must be nonnegative")


class RandomStream:
    """Per-replication random source.

    Backed by the counter-based Philox generator keyed on
    ``(master_seed, replication_id)``, so any replication can be regenerated
    on its own, in any order or process. ``n_samples`` counts oracle samples
    drawn so far.
    """

    def __init__(self, seed: SeedSpec):
        self.seed = seed
        key = np.random.SeedSequence([int(seed.master_seed) & (2**64 - 1), int(seed.replication_id)])
        self.rng = np.random.Generator(np.random.Philox(key))
        self.n_samples = 0

    def normal(self, size=None):
        return self.rng.standard_normal(size)

    def uniform(self, size=None):
        return self.rng.random(size)

    def integers(self, high: int, size=None):
        # floor(u * high) keeps block and one-at-a-time draws aligned
        u = self.rng.random(size)
        return np.minimum((u * high).astype(np.int64), high - 1)

    def position(self) -> tuple:
        state = self.rng.bit_generator.state
        return (
            tuple(state["state"]["counter"].tolist()),
            tuple(state["state"]["key"].tolist()),
            state["buffer_pos"],
        )


def derive_stream(seed: SeedSpec) -> RandomStream:
    return RandomStream(seed)
