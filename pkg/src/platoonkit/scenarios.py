"""Reference scenario: leader speed profile, decaying oscillatory forces, initial states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DisturbanceSpec
from .formation import FormationLaw
from .signals import Signal

# (start time, intercept, slope) of each piece of the reference leader speed in m/s
REFERENCE_LEADER_PIECES = (
    (0.0, 15.0, 0.0),
    (5.0, 5.0, 2.0),
    (15.0, 35.0, 0.0),
    (25.0, 85.0, -2.0),
    (35.0, 15.0, 0.0),
    (45.0, 82.5, -1.5),
    (55.0, 0.0, 0.0),
    (65.0, -97.5, 1.5),
    (75.0, 15.0, 0.0),
)
DISTURBANCE_AMPLITUDE = 3.0
DISTURBANCE_DECAY = 0.02
REFERENCE_SEED = 0


class PiecewiseLinearProfile:
    """Speed ``intercept_k + slope_k * t`` on ``[start_k, start_{k+1})``.

    ``slope`` is right-continuous at the breakpoints.
    """

    def __init__(self, pieces):
        pieces = sorted((float(s), float(a), float(b)) for s, a, b in pieces)
        if not pieces or pieces[0][0] != 0.0:
            raise ValueError("the first piece must start at t = 0")
        self.starts = np.array([p[0] for p in pieces])
        self.intercepts = np.array([p[1] for p in pieces])
        self.slopes = np.array([p[2] for p in pieces])

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.starts[1:].tolist())

    def _piece(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("profile is defined for t >= 0")
        return np.searchsorted(self.starts, t, side="right") - 1

    def value(self, t):
        k = self._piece(t)
        out = self.intercepts[k] + self.slopes[k] * np.asarray(t, dtype=float)
        return float(out) if np.ndim(out) == 0 else out

    def slope(self, t):
        out = self.slopes[self._piece(t)]
        return float(out) if np.ndim(out) == 0 else out

    def __call__(self, t):
        return self.value(t), self.slope(t)

    def junction_mismatch(self) -> float:
        """Largest jump of the speed across a breakpoint."""
        s = self.starts[1:]
        left = self.intercepts[:-1] + self.slopes[:-1] * s
        right = self.intercepts[1:] + self.slopes[1:] * s
        return float(np.max(np.abs(left - right))) if s.size else 0.0

    def max_abs_slope(self) -> float:
        return float(np.max(np.abs(self.slopes)))

    def as_signal(self) -> Signal:
        return Signal(lambda t: np.reshape(self.value(t), np.shape(t) + (1,)), 1, vectorized=True)


def reference_leader_profile() -> PiecewiseLinearProfile:
    return PiecewiseLinearProfile(REFERENCE_LEADER_PIECES)


def reference_leader(t):
    """``(v0, dv0/dt)`` of the reference leader at time ``t``."""
    return reference_leader_profile()(t)


class DecayingOscillation:
    """``c_i exp(-decay t) sin(t)`` or ``... cos(t)`` per vehicle."""

    def __init__(self, amplitudes, use_cos, decay: float = DISTURBANCE_DECAY):
        self.amplitudes = np.asarray(amplitudes, dtype=float)
        self.use_cos = np.asarray(use_cos, dtype=bool)
        if self.amplitudes.shape != self.use_cos.shape:
            raise ValueError("amplitudes and phase selectors must have the same length")
        self.decay = float(decay)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tt = t[..., None]
        wave = np.where(self.use_cos, np.cos(tt), np.sin(tt))
        return self.amplitudes * np.exp(-self.decay * tt) * wave

    def as_signal(self) -> Signal:
        return Signal(self, len(self.amplitudes), vectorized=True)

    def bound(self) -> float:
        return float(np.max(np.abs(self.amplitudes))) if self.amplitudes.size else 0.0


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def reference_forces(seed: int, n: int, amplitude: float = DISTURBANCE_AMPLITUDE,
                     decay: float = DISTURBANCE_DECAY) -> DecayingOscillation:
    rng = _rng(seed, 0)
    amps = rng.uniform(-amplitude, amplitude, size=n)
    use_cos = rng.integers(0, 2, size=n).astype(bool)
    return DecayingOscillation(amps, use_cos, decay)


def reference_disturbance(seed: int, n: int, amplitude: float = DISTURBANCE_AMPLITUDE,
                          decay: float = DISTURBANCE_DECAY, leader=None,
                          scale: float = 1.0) -> DisturbanceSpec:
    """Seeded reference disturbance; identical seeds give identical signals."""
    forces = reference_forces(seed, n, amplitude, decay)
    return DisturbanceSpec(forces.as_signal(), leader or reference_leader_profile(), scale)


def quiet_disturbance(n: int, speed: float = 15.0) -> DisturbanceSpec:
    """Constant leader speed and no external forces."""
    return DisturbanceSpec(Signal.zero(n), PiecewiseLinearProfile([(0.0, speed, 0.0)]))


def disturbance_bound(dist: DisturbanceSpec) -> float:
    """A priori bound on ``|w|_inf`` that does not depend on the platoon length."""
    forces = getattr(dist.force_per_mass._fn, "bound", None)
    if forces is None:
        raise TypeError("force signal does not expose an amplitude bound")
    return dist.scale * (forces() + dist.leader.max_abs_slope())


@dataclass(frozen=True)
class InitialCondition:
    x0: np.ndarray
    v: np.ndarray


def equilibrium_start(law: FormationLaw, v0: float) -> InitialCondition:
    return InitialCondition(law.e.copy(), np.full(law.n, float(v0)))


def perturbed_start(law: FormationLaw, v0: float, seed: int, spread: float = 1.0) -> InitialCondition:
    """Spacings ``e_i + U[-spread, spread]`` from the seed, every follower at the leader speed."""
    dx = _rng(seed, 1).uniform(-spread, spread, size=law.n)
    return InitialCondition(law.e + dx, np.full(law.n, float(v0)))


def initial_condition(preset: str, law: FormationLaw, v0: float, seed: int) -> InitialCondition:
    if preset == "equilibrium":
        return equilibrium_start(law, v0)
    if preset == "perturbed":
        return perturbed_start(law, v0, seed)
    raise ValueError(f"unknown initial-condition preset {preset!r}")


def reference_law_parameters() -> dict:
    return {"ell": 0.5, "lp": 0.18, "lf": 0.18, "b": 0.1, "e": 10.0, "k": 5.0, "n": 10}
