"""Fixed-step RK4 (and optional adaptive) integration with breakpoint splitting.

The span is cut at every breakpoint of the inputs. Inside a segment ``[a, b]``
the right-hand side is never evaluated at ``b`` itself but at the float just
below it, so piecewise inputs contribute their left limit to the last stage
and their right-continuous value to the first stage of the next segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

RK4_STABILITY_LIMIT = 2.78


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float | None = None, state=None):
        self.t = t
        self.state = None if state is None else np.array(state, copy=True)
        if state is not None:
            message = f"{message}\n  t = {t!r}\n  state = {np.array2string(self.state, precision=6)}"
        super().__init__(message)


@dataclass(frozen=True)
class StepControl:
    """``step`` for fixed-step RK4; ``method='adaptive'`` switches to DOP853."""

    step: float = 1e-3
    output_interval: float | None = None
    method: str = "rk4"
    rtol: float = 1e-10
    atol: float = 1e-12

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.step > 0:
            raise ValueError("step must be positive")


def plan_grid(t0: float, t1: float, step: float, output_interval: float | None, breakpoints=()):
    """Segments ``(a, b, nsteps, h, stride)`` covering ``[t0, t1]``.

    The step is shrunk so an integer number of steps fits every output
    interval and every segment.
    """
    if not t1 > t0:
        raise ValueError(f"empty time span [{t0}, {t1}]")
    if output_interval is None:
        output_interval = step
    stride = max(1, math.ceil(output_interval / step - 1e-9))
    h_nom = output_interval / stride
    cuts = sorted({t0, t1, *(float(b) for b in breakpoints if t0 < b < t1)})
    plan = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        nsteps = max(1, round((b - a) / h_nom))
        plan.append((a, b, nsteps, (b - a) / nsteps, stride))
    return plan


def stage_times(a: float, b: float, h: float, k0: int, k1: int) -> np.ndarray:
    """``(k1 - k0, 3)`` stage times for steps ``k0..k1-1`` of a segment, end clipped below ``b``."""
    k = np.arange(k0, k1, dtype=float)
    start = a + k * h
    ts = np.stack([start, start + 0.5 * h, a + (k + 1) * h], axis=1)
    return np.minimum(ts, np.nextafter(b, a))


def _check(y, t):
    if not np.all(np.isfinite(y)):
        raise IntegrationError("state became non-finite; reduce the step size", t, y)


def integrate(rhs, t_span, y0, control: StepControl | None = None, breakpoints=()):
    """Integrate ``y' = rhs(t, y)`` and return ``(t, Y)`` sampled on the output grid.

    The first sample is the initial state. Samples fall every
    ``control.output_interval`` inside each segment and at every segment end.
    """
    control = control or StepControl()
    y = np.array(y0, dtype=float)
    t0, t1 = map(float, t_span)
    plan = plan_grid(t0, t1, control.step, control.output_interval, breakpoints)
    ts, ys = [t0], [y.copy()]
    for a, b, nsteps, h, stride in plan:
        if control.method == "adaptive":
            t_eval = [a + j * h for j in range(stride, nsteps, stride)] + [b]
            clip = np.nextafter(b, a)
            sol = solve_ivp(lambda t, s: rhs(min(t, clip), s), (a, b), y, method="DOP853",
                            t_eval=t_eval, rtol=control.rtol, atol=control.atol)
            if not sol.success:
                raise IntegrationError(f"adaptive solver failed: {sol.message}", a, y)
            ts.extend(sol.t.tolist())
            ys.extend(sol.y.T)
            y = sol.y[:, -1].copy()
            _check(y, b)
            continue
        st = stage_times(a, b, h, 0, nsteps)
        for k in range(nsteps):
            t_a, t_m, t_b = st[k]
            k1 = rhs(t_a, y)
            k2 = rhs(t_m, y + 0.5 * h * k1)
            k3 = rhs(t_m, y + 0.5 * h * k2)
            k4 = rhs(t_b, y + h * k3)
            y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            _check(y, a + (k + 1) * h)
            if (k + 1) % stride == 0 or k + 1 == nsteps:
                ts.append(b if k + 1 == nsteps else a + (k + 1) * h)
                ys.append(y.copy())
    return np.asarray(ts), np.asarray(ys)
