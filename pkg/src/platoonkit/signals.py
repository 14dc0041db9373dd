"""Vector norms, the block composite norm, and time signals.

The composite norm splits a vector into consecutive blocks of length ``r``
(the last block takes the remainder), takes the infinity norm of each block
and combines the block norms with a diagonally weighted Euclidean norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_SUP_STEP = 1e-3


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def norm_inf(a) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise DimensionError("norm of an empty vector")
    return float(np.max(np.abs(a)))


@dataclass(frozen=True)
class BlockPartition:
    """Split of ``n`` coordinates into ``ceil(n / r)`` consecutive blocks."""

    n: int
    r: int

    def __post_init__(self):
        if self.n < 1:
            raise DimensionError(f"n must be positive, got {self.n}")
        if not 1 <= self.r <= self.n:
            raise DimensionError(f"r must lie in 1..{self.n}, got {self.r}")

    @property
    def m(self) -> int:
        return -(-self.n // self.r)

    @property
    def block_sizes(self) -> tuple[int, ...]:
        sizes = [self.r] * (self.m - 1)
        sizes.append(self.n - (self.m - 1) * self.r)
        return tuple(sizes)

    @property
    def slices(self) -> tuple[slice, ...]:
        return tuple(slice(b * self.r, min((b + 1) * self.r, self.n)) for b in range(self.m))

    def block_of(self, i: int) -> int:
        """Block index of the (0-based) coordinate ``i``."""
        return i // self.r


@dataclass(frozen=True)
class WeightedNormSpec:
    partition: BlockPartition
    D: tuple[float, ...] = field(default=())

    def __post_init__(self):
        D = tuple(float(q) for q in self.D) if len(self.D) else (1.0,) * self.partition.m
        if len(D) != self.partition.m:
            raise DimensionError(f"expected {self.partition.m} weights, got {len(D)}")
        if not all(q > 0 and math.isfinite(q) for q in D):
            raise ValueError(f"weights must be finite and strictly positive, got {D}")
        object.__setattr__(self, "D", D)

    @classmethod
    def uniform(cls, n: int, r: int) -> "WeightedNormSpec":
        return cls(BlockPartition(n, r))

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.D)


def block_inf_norms(a, partition: BlockPartition) -> np.ndarray:
    """Infinity norm of every block; works on ``(..., n)`` arrays."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != partition.n:
        raise DimensionError(f"vector length {a.shape[-1]} does not match n={partition.n}")
    return np.stack([np.max(np.abs(a[..., s]), axis=-1) for s in partition.slices], axis=-1)


def norm_star(a, spec: WeightedNormSpec):
    """Composite block norm. Vectorised over leading axes of ``a``."""
    blocks = block_inf_norms(a, spec.partition)
    val = np.sqrt(np.sum((spec.weights * blocks) ** 2, axis=-1))
    return float(val) if np.ndim(val) == 0 else val


class Signal:
    """Real vector function of time on ``[0, T)``.

    ``fn`` maps a time to a vector of length ``dim``. When ``vectorized`` is
    true it must also accept a 1-D array of times and return ``(len(t), dim)``.
    """

    def __init__(self, fn: Callable, dim: int, T: float = math.inf, vectorized: bool = False):
        if dim < 1:
            raise DimensionError("signal dimension must be positive")
        if not T > 0:
            raise DomainError(f"domain end must be positive, got {T}")
        self._fn = fn
        self.dim = int(dim)
        self.T = float(T)
        self.vectorized = vectorized

    def in_domain(self, t) -> bool:
        return bool(np.all((np.asarray(t) >= 0) & (np.asarray(t) < self.T)))

    def __call__(self, t: float) -> np.ndarray:
        if not self.in_domain(t):
            raise DomainError(f"t={t} outside [0, {self.T})")
        val = np.asarray(self._fn(float(t)), dtype=float).reshape(-1)
        if val.size != self.dim:
            raise DimensionError(f"signal returned {val.size} values, expected {self.dim}")
        return val

    def sample(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float).reshape(-1)
        if not self.in_domain(ts):
            raise DomainError(f"sample times leave [0, {self.T})")
        if self.vectorized:
            out = np.asarray(self._fn(ts), dtype=float)
            return out.reshape(len(ts), self.dim)
        return np.array([self(t) for t in ts]).reshape(len(ts), self.dim)

    @classmethod
    def constant(cls, value: Sequence[float], T: float = math.inf) -> "Signal":
        value = np.asarray(value, dtype=float).reshape(-1)
        return cls(lambda t: np.broadcast_to(value, np.shape(t) + value.shape).copy(), len(value), T, True)

    @classmethod
    def zero(cls, dim: int, T: float = math.inf) -> "Signal":
        return cls.constant(np.zeros(dim), T)


def _masked(u: Signal, keep: Callable[[np.ndarray], np.ndarray]) -> Signal:
    def fn(t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return u._fn(float(t)) * float(keep(t))
        vals = u.sample(t) if not u.vectorized else np.asarray(u._fn(t), dtype=float).reshape(len(t), u.dim)
        return vals * keep(t)[:, None]

    return Signal(fn, u.dim, u.T, vectorized=True)


def truncate_below(u: Signal, tau: float) -> Signal:
    """Keep ``u`` on ``[0, tau]`` and zero it afterwards."""
    if not u.in_domain(tau):
        raise DomainError(f"tau={tau} outside [0, {u.T})")
    return _masked(u, lambda t: (t <= tau).astype(float))


def truncate_above(u: Signal, tau: float) -> Signal:
    """Zero ``u`` on ``[0, tau)`` and keep it afterwards."""
    if not u.in_domain(tau):
        raise DomainError(f"tau={tau} outside [0, {u.T})")
    return _masked(u, lambda t: (t >= tau).astype(float))


def signal_sup_norm(u: Signal, norm: Callable = norm_inf, horizon: float | None = None,
                    step: float = DEFAULT_SUP_STEP) -> float:
    """Grid approximation of the essential supremum of ``norm(u(t))`` on ``[0, horizon]``.

    The grid always contains both end points. For an infinite domain a finite
    ``horizon`` is required.
    """
    if horizon is None:
        horizon = u.T
    if not math.isfinite(horizon):
        raise DomainError("an infinite horizon cannot be sampled")
    if horizon < 0 or horizon > u.T:
        raise DomainError(f"horizon {horizon} outside [0, {u.T}]")
    num = max(int(math.ceil(horizon / step)), 1) + 1
    ts = np.linspace(0.0, horizon, num)
    if horizon == u.T:
        ts[-1] = np.nextafter(u.T, 0.0)
    vals = u.sample(ts)
    if norm is norm_inf:
        return float(np.max(np.abs(vals)))
    return float(max(norm(v) for v in vals))
