"""Formation mappings that turn spacing errors into desired relative velocities.

Vehicle ``i`` (1-based) receives ``d_i(x_i, x_{i+1})``; the last vehicle only
sees its own spacing. Every law is evaluated for whole spacing vectors and
vectorised over leading axes, so ``x`` may have shape ``(..., n)``.

Two families ship:

* :class:`LinearLaw`  ``d_i = lp_i (x_i - e_i) - lf_i (x_{i+1} - e_{i+1})``
* :class:`TanhAffineLaw`  ``d_i = l_i tanh(lp_i dx_i - lf_i dx_{i+1}) + b_i dx_i``

A new family subclasses :class:`FormationLaw` and supplies ``evaluate``,
``partials``, ``partial_bounds``, ``sum_bounds`` and ``sign_violations``.
The bounds are closed-form suprema/infima over all ``x``; they feed the
contraction constants and the interval majorant of the fast subsystem.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConditionViolation(ValueError):
    """A formation law fails a uniform-in-x condition."""

    def __init__(self, index: int, condition: str, message: str):
        self.index = index
        self.condition = condition
        super().__init__(f"vehicle {index}: {condition}: {message}")


@dataclass(frozen=True)
class ContractionConstants:
    eta1: float
    c: float


def _vec(v, n: int, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or have length {n}, got shape {arr.shape}")
    return arr


class FormationLaw:
    kind = "abstract"

    def __init__(self, e):
        self.e = np.asarray(e, dtype=float).reshape(-1)
        if self.e.size == 0:
            raise ValueError("at least one follower is required")
        if np.any(self.e <= 0):
            raise ValueError("desired spacings must be strictly positive")
        self.n = self.e.size

    def _deviations(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"spacing vector has length {x.shape[-1]}, expected {self.n}")
        dx = x - self.e
        dnext = np.zeros_like(dx)
        dnext[..., :-1] = dx[..., 1:]
        return dx, dnext

    def evaluate(self, x) -> np.ndarray:
        raise NotImplementedError

    def partials(self, x) -> tuple[np.ndarray, np.ndarray]:
        """``(dd_i/dx_i, dd_i/dx_{i+1})``; the second entry is 0 for the last vehicle."""
        raise NotImplementedError

    def partial_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Closures ``(p_lo, p_hi, f_lo, f_hi)`` of the ranges of both partials over all x."""
        raise NotImplementedError

    def sum_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Closure of the range of ``dd_i/dx_i + dd_i/dx_{i+1}`` over all x."""
        raise NotImplementedError

    def sign_violations(self) -> list[tuple[int, str]]:
        raise NotImplementedError

    def kernel_coefficients(self) -> np.ndarray | None:
        """Rows ``(L, P, Q, B, C)`` of ``d = L tanh(P dx - Q dx') + B dx - C dx'``.

        Laws outside this family return ``None`` and are integrated through the
        generic Python path.
        """
        return None


class LinearLaw(FormationLaw):
    kind = "linear"

    def __init__(self, lp, lf, e):
        super().__init__(e)
        self.lp = _vec(lp, self.n, "lp")
        self.lf = _vec(lf, self.n, "lf")

    def evaluate(self, x):
        dx, dnext = self._deviations(x)
        return self.lp * dx - self.lf * dnext

    def partials(self, x):
        x = np.asarray(x, dtype=float)
        p = np.broadcast_to(self.lp, x.shape).copy()
        f = np.broadcast_to(-self.lf, x.shape).copy()
        f[..., -1] = 0.0
        return p, f

    def partial_bounds(self):
        f = -self.lf.copy()
        f[-1] = 0.0
        return self.lp.copy(), self.lp.copy(), f, f.copy()

    def sum_bounds(self):
        s = self.lp - self.lf
        s[-1] = self.lp[-1]
        return s, s.copy()

    def sign_violations(self):
        out = [(i + 1, "dd_i/dx_i > 0") for i in np.flatnonzero(self.lp <= 0)]
        out += [(i + 1, "dd_i/dx_{i+1} < 0") for i in np.flatnonzero(self.lf[:-1] <= 0)]
        return sorted(out)

    def kernel_coefficients(self):
        z = np.zeros(self.n)
        return np.ascontiguousarray(np.vstack([z, z, z, self.lp, self.lf]))


class TanhAffineLaw(FormationLaw):
    kind = "tanh_affine"

    def __init__(self, ell, lp, lf, b, e):
        super().__init__(e)
        self.ell = _vec(ell, self.n, "ell")
        self.lp = _vec(lp, self.n, "lp")
        self.lf = _vec(lf, self.n, "lf")
        self.b = _vec(b, self.n, "b")
        # the last vehicle has no follower spacing in its argument
        self._lf_eff = self.lf.copy()
        self._lf_eff[-1] = 0.0

    def _arg(self, x):
        dx, dnext = self._deviations(x)
        return dx, self.lp * dx - self._lf_eff * dnext

    def evaluate(self, x):
        dx, arg = self._arg(x)
        return self.ell * np.tanh(arg) + self.b * dx

    def partials(self, x):
        _, arg = self._arg(x)
        s = 1.0 / np.cosh(arg) ** 2
        return self.ell * self.lp * s + self.b, -self.ell * self._lf_eff * s

    def partial_bounds(self):
        # sech^2 ranges over (0, 1]; both partials are monotone in it
        p_lo, p_hi = self.b.copy(), self.ell * self.lp + self.b
        f_lo, f_hi = -self.ell * self._lf_eff, np.zeros(self.n)
        return p_lo, p_hi, f_lo, f_hi

    def sum_bounds(self):
        slope = self.ell * (self.lp - self._lf_eff)
        lo = self.b + np.minimum(slope, 0.0)
        hi = self.b + np.maximum(slope, 0.0)
        return lo, hi

    def sign_violations(self):
        out = []
        for i in range(self.n):
            if self.b[i] < 0 or (self.b[i] == 0 and self.ell[i] * self.lp[i] <= 0):
                out.append((i + 1, "dd_i/dx_i > 0"))
            if i < self.n - 1 and self.ell[i] * self.lf[i] <= 0:
                out.append((i + 1, "dd_i/dx_{i+1} < 0"))
        return out

    def kernel_coefficients(self):
        return np.ascontiguousarray(np.vstack([self.ell, self.lp, self._lf_eff, self.b, np.zeros(self.n)]))


def eval_d(law: FormationLaw, i: int, x) -> float:
    """``d_i(x)`` for a 1-based vehicle index."""
    if not 1 <= i <= law.n:
        raise IndexError(f"vehicle index {i} outside 1..{law.n}")
    return float(law.evaluate(x)[i - 1])


def partials_d(law: FormationLaw, i: int, x) -> tuple[float, float]:
    if not 1 <= i <= law.n:
        raise IndexError(f"vehicle index {i} outside 1..{law.n}")
    p, f = law.partials(x)
    return float(p[i - 1]), float(f[i - 1])


def contraction_constants(law: FormationLaw) -> ContractionConstants:
    """Tightest ``eta1`` (lower bound on partial sums) and ``c`` (bound on partials).

    Raises :class:`ConditionViolation` for the first vehicle whose partials
    have the wrong sign or whose partial sum is not bounded away from zero.
    """
    for idx, cond in law.sign_violations():
        raise ConditionViolation(idx, cond, "sign condition fails")
    s_lo, _ = law.sum_bounds()
    bad = np.flatnonzero(s_lo <= 0)
    if bad.size:
        i = int(bad[0])
        raise ConditionViolation(i + 1, "sum of partials >= eta1 > 0", f"infimum is {s_lo[i]:.6g}")
    p_lo, p_hi, f_lo, f_hi = law.partial_bounds()
    c = float(np.max(np.maximum.reduce([np.abs(p_lo), np.abs(p_hi), np.abs(f_lo), np.abs(f_hi)])))
    return ContractionConstants(eta1=float(np.min(s_lo)), c=c)


def string_stability_margin(law: FormationLaw) -> float:
    """Largest ``eta`` such that the first partial sum is >= eta and each
    subsequent partial sum exceeds its predecessor by at least eta, for all x.

    The worst case pairs the infimum of the later sum with the supremum of the
    earlier one. Raises :class:`ConditionViolation` when no positive eta exists.
    """
    for idx, cond in law.sign_violations():
        raise ConditionViolation(idx, cond, "sign condition fails")
    s_lo, s_hi = law.sum_bounds()
    if s_lo[0] <= 0:
        raise ConditionViolation(1, "first partial sum >= eta > 0", f"infimum is {s_lo[0]:.6g}")
    gaps = s_lo[1:] - s_hi[:-1]
    bad = np.flatnonzero(gaps <= 0)
    if bad.size:
        i = int(bad[0])
        raise ConditionViolation(
            i + 1, "partial sums strictly increasing along the string",
            f"sum_{i + 1} <= {s_hi[i]:.6g} is not below sum_{i + 2} >= {s_lo[i + 1]:.6g}",
        )
    return float(min(s_lo[0], gaps.min())) if gaps.size else float(s_lo[0])


def desired_velocity(law: FormationLaw, x, v0) -> np.ndarray:
    return law.evaluate(x) + np.asarray(v0, dtype=float)[..., None]


def steady_state_h(law: FormationLaw, x) -> np.ndarray:
    """``h_i = d_1 + ... + d_{i-1}``, the fast equilibrium of the tracking errors."""
    d = law.evaluate(x)
    h = np.zeros_like(d)
    h[..., 1:] = np.cumsum(d[..., :-1], axis=-1)
    return h


def steady_state_jacobian(law: FormationLaw, x) -> np.ndarray:
    """``dh/dx`` for a single spacing vector."""
    x = np.asarray(x, dtype=float)
    p, f = law.partials(x)
    n = law.n
    grad_d = np.zeros((n, n))
    grad_d[np.arange(n), np.arange(n)] = p
    grad_d[np.arange(n - 1), np.arange(1, n)] = f[:-1]
    H = np.zeros((n, n))
    H[1:] = np.cumsum(grad_d[:-1], axis=0)
    return H
