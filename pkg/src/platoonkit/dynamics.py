"""Closed-loop platoon dynamics in position/velocity and spacing/error coordinates.

Vehicles are indexed 1..n behind the leader (index 0). Arrays are 0-based, so
``x[i]`` is the spacing in front of vehicle ``i + 1``. Quantities with
nonpositive vehicle index follow the leader conventions: zero formation term,
zero tracking error and velocity ``v0``.

Coordinates:

* PV  positions ``p_0..p_n`` and velocities ``v_0..v_n``
* XZ  spacings ``x_i = p_{i-1} - p_i`` and tracking errors ``z_i = v_i - d_i - v_0``
* XY  spacings and ``y = z - h(x)``
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .formation import FormationLaw, steady_state_h, steady_state_jacobian
from .integrate import IntegrationError, RK4_STABILITY_LIMIT, StepControl, integrate, plan_grid, stage_times
from .signals import Signal

RANGE = "range"
STRING = "string"
CONTROLLERS = (RANGE, STRING)
CHUNK_STEPS = 20000


@dataclass(frozen=True)
class PlatoonConfig:
    law: FormationLaw
    r: int
    gains: np.ndarray
    masses: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.law.n
        gains = np.asarray(self.gains, dtype=float)
        if gains.ndim == 0:
            gains = np.full(n, float(gains))
        if gains.shape != (n,) or np.any(gains <= 0):
            raise ValueError(f"need {n} strictly positive gains")
        masses = np.full(n, 1500.0) if self.masses is None else np.asarray(self.masses, dtype=float)
        if masses.ndim == 0:
            masses = np.full(n, float(masses))
        if masses.shape != (n,) or np.any(masses <= 0):
            raise ValueError(f"need {n} strictly positive masses")
        if not 1 <= int(self.r) <= n:
            raise ValueError(f"communication range must lie in 1..{n}, got {self.r}")
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "r", int(self.r))

    @property
    def n(self) -> int:
        return self.law.n

    @property
    def k_min(self) -> float:
        return float(self.gains.min())

    @property
    def kbar(self) -> np.ndarray:
        return self.gains / self.k_min

    @property
    def eps(self) -> float:
        return 1.0 / self.k_min

    def with_epsilon(self, eps: float) -> "PlatoonConfig":
        """Same relative gains, rescaled so that ``1 / k_min == eps``."""
        if not eps > 0:
            raise ValueError("eps must be positive")
        return replace(self, gains=self.kbar / eps)

    def with_range(self, r: int) -> "PlatoonConfig":
        return replace(self, r=r)


@dataclass(frozen=True)
class DisturbanceSpec:
    """Per-unit-mass external forces and the leader velocity profile.

    ``leader`` needs ``value(t)``, ``slope(t)`` (right-continuous) and a
    ``breakpoints`` tuple. ``scale`` multiplies the forces and the leader's
    excursion from its initial speed, so the lumped disturbance scales by it.
    """

    force_per_mass: Signal
    leader: object
    scale: float = 1.0

    def scaled(self, s: float) -> "DisturbanceSpec":
        return replace(self, scale=self.scale * s)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(self.leader.breakpoints)

    def v0(self, t):
        base = self.leader.value(0.0)
        return base + self.scale * (np.asarray(self.leader.value(t)) - base)

    def v0_dot(self, t):
        return self.scale * np.asarray(self.leader.slope(t))

    def theta_over_m(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self.scale * self.force_per_mass(float(t))
        return self.scale * self.force_per_mass.sample(t.reshape(-1)).reshape(t.shape + (-1,))

    def w(self, t) -> np.ndarray:
        """Lumped disturbance ``theta_i / m_i - dv0/dt``."""
        return self.theta_over_m(t) - np.asarray(self.v0_dot(t))[..., None]


def matrix_G(n: int) -> np.ndarray:
    return -np.eye(n) + np.eye(n, k=-1)


def matrix_A(cfg: PlatoonConfig) -> np.ndarray:
    n, r, kbar = cfg.n, cfg.r, cfg.kbar
    A = -np.diag(kbar)
    rows = np.arange(r, n)
    A[rows, rows - r] = kbar[rows]
    return A


def matrix_F(cfg: PlatoonConfig, x, eps: float | None = None) -> np.ndarray:
    """``-eps (dh/dx) G``: lower triangular, diagonal ``eps dd_{i-1}/dx_i``."""
    eps = cfg.eps if eps is None else eps
    return -eps * steady_state_jacobian(cfg.law, x) @ matrix_G(cfg.n)


def jacobian_slow(law: FormationLaw, x) -> np.ndarray:
    """Jacobian of ``x' = -d(x)`` (tracking errors frozen)."""
    p, f = law.partials(x)
    n = law.n
    J = np.zeros((n, n))
    J[np.arange(n), np.arange(n)] = -p
    J[np.arange(n - 1), np.arange(1, n)] = -f[:-1]
    return J


def jacobian_fast(cfg: PlatoonConfig, x, eps: float | None = None) -> np.ndarray:
    """Jacobian of the fast subsystem in fast time, ``A + F(x)``."""
    return matrix_A(cfg) + matrix_F(cfg, x, eps)


def jacobian_string(law: FormationLaw, x) -> np.ndarray:
    """Jacobian of ``x' = G d(x)``, the slow part under the leader-velocity controller."""
    return -matrix_G(law.n) @ jacobian_slow(law, x)


# -- controllers -------------------------------------------------------------

def _unpack_pv(positions, velocities, n):
    p = np.asarray(positions, dtype=float)
    v = np.asarray(velocities, dtype=float)
    if p.shape != (n + 1,) or v.shape != (n + 1,):
        raise ValueError(f"expected positions and velocities of length {n + 1} (leader first)")
    return p, v


def control_range_r(cfg: PlatoonConfig, positions, velocities) -> np.ndarray:
    """Commanded acceleration ``u_i / m_i`` of the range-r protocol.

    ``positions`` and ``velocities`` include the leader at index 0.
    """
    n, r, law = cfg.n, cfg.r, cfg.law
    p, v = _unpack_pv(positions, velocities, n)
    x = p[:-1] - p[1:]
    d = law.evaluate(x)
    dp, df = law.partials(x)
    u = np.zeros(n)
    for i in range(1, n + 1):
        dsum = sum(d[i - j - 1] for j in range(r) if i - j >= 1)
        v_lag = v[i - r] if i - r >= 0 else v[0]
        u[i - 1] = -cfg.gains[i - 1] * (v[i] - dsum - v_lag) + dp[i - 1] * (v[i - 1] - v[i])
        if i < n:
            u[i - 1] += df[i - 1] * (v[i] - v[i + 1])
    return u


def control_string_stable(cfg: PlatoonConfig, positions, velocities) -> np.ndarray:
    """Commanded acceleration of the predecessor/follower + leader-velocity controller."""
    n, law = cfg.n, cfg.law
    p, v = _unpack_pv(positions, velocities, n)
    x = p[:-1] - p[1:]
    d = law.evaluate(x)
    dp, df = law.partials(x)
    vnext = np.append(v[2:], v[-1])
    return -cfg.gains * (v[1:] - d - v[0]) + dp * (v[:-1] - v[1:]) + df * (v[1:] - vnext)


# -- reference right-hand sides ---------------------------------------------

def rhs_xy(cfg: PlatoonConfig, dist: DisturbanceSpec | None, t: float, x, y, eps: float | None = None):
    """Real-time derivatives ``(x', y')`` of the spacing/error system."""
    eps = cfg.eps if eps is None else eps
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = cfg.n
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    G = matrix_G(n)
    xdot = -cfg.law.evaluate(x) + G @ y
    w = np.zeros(n) if dist is None else dist.w(t)
    ydot = (matrix_A(cfg) @ y) / eps - steady_state_jacobian(cfg.law, x) @ xdot + w
    return xdot, ydot


def rhs_pv(cfg: PlatoonConfig, dist: DisturbanceSpec, t: float, positions, follower_velocities,
           controller: str = RANGE):
    """Derivatives of ``(p_0..p_n, v_1..v_n)`` under the chosen controller."""
    v0 = float(dist.v0(t))
    vel = np.concatenate(([v0], np.asarray(follower_velocities, dtype=float)))
    ctrl = control_range_r if controller == RANGE else control_string_stable
    acc = ctrl(cfg, positions, vel) + dist.theta_over_m(t)
    return vel, acc


# -- coordinate changes ------------------------------------------------------

def pv_to_x(positions) -> np.ndarray:
    p = np.asarray(positions, dtype=float)
    return p[..., :-1] - p[..., 1:]


def tracking_error(law: FormationLaw, x, follower_velocities, v0) -> np.ndarray:
    return np.asarray(follower_velocities) - law.evaluate(x) - np.asarray(v0, dtype=float)[..., None]


def xy_to_z(law: FormationLaw, x, y) -> np.ndarray:
    return np.asarray(y) + steady_state_h(law, x)


def z_to_y(law: FormationLaw, x, z) -> np.ndarray:
    return np.asarray(z) - steady_state_h(law, x)


def x_to_positions(x, p0: float = 0.0) -> np.ndarray:
    return p0 - np.concatenate(([0.0], np.cumsum(x)))


# -- trajectories ------------------------------------------------------------

@dataclass
class Trajectory:
    """Samples of the platoon state in every coordinate system plus the disturbance."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    v0: np.ndarray
    e: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def spacing_error(self) -> np.ndarray:
        return self.x - self.e

    def max_overshoot(self) -> float:
        return float(np.max(np.abs(self.spacing_error)))

    def header(self) -> list[str]:
        cols = ["t"]
        for name in "xyzw":
            cols += [f"{name}_{i}" for i in range(1, self.n + 1)]
        return cols + ["v0"]

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.x, self.y, self.z, self.w, self.v0])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for row in data:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, e) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader])
        n = (len(header) - 2) // 4
        blocks = [data[:, 1 + k * n: 1 + (k + 1) * n] for k in range(4)]
        return cls(data[:, 0], *blocks, data[:, -1], np.asarray(e, dtype=float))


# -- simulation --------------------------------------------------------------

def default_step(eps: float) -> float:
    return min(1e-3, eps / 20.0)


def _stability_hint(cfg: PlatoonConfig, h: float) -> str:
    stiff = h * cfg.gains.max()
    if stiff > RK4_STABILITY_LIMIT:
        return (f"step {h:g} s times the largest gain {cfg.gains.max():g} is {stiff:.3g}, beyond "
                f"the RK4 stability limit {RK4_STABILITY_LIMIT}; use a step below "
                f"{RK4_STABILITY_LIMIT / cfg.gains.max():.3g} s")
    return "state diverged; try a smaller step"


def simulate(cfg: PlatoonConfig, dist: DisturbanceSpec, x0, v_init, t_final: float, *,
             frame: str = "xy", controller: str = RANGE, step: float | None = None,
             output_interval: float = 0.01, backend: str | None = None) -> Trajectory:
    """Integrate the closed loop from spacings ``x0`` and follower velocities ``v_init``.

    ``frame`` picks the integrated coordinates (``"xy"`` or ``"pv"``); all
    coordinates are reconstructed on the output grid. The leader-velocity
    controller is only available in the ``"pv"`` frame.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}")
    if frame not in ("xy", "pv"):
        raise ValueError("frame must be 'xy' or 'pv'")
    if frame == "xy" and controller != RANGE:
        raise ValueError("the leader-velocity controller is simulated in the 'pv' frame")
    law, n = cfg.law, cfg.n
    x0 = np.asarray(x0, dtype=float)
    v_init = np.asarray(v_init, dtype=float)
    if x0.shape != (n,) or v_init.shape != (n,):
        raise ValueError(f"initial spacings and velocities must have length {n}")
    h_req = default_step(cfg.eps) if step is None else float(step)
    plan = plan_grid(0.0, float(t_final), h_req, output_interval, dist.breakpoints)
    coef = law.kernel_coefficients()
    impl = kernels.impl if backend is None else kernels.load(backend)

    v00 = float(dist.v0(0.0))
    if frame == "xy":
        z0 = tracking_error(law, x0, v_init, v00)
        state = [x0.copy(), z_to_y(law, x0, z0)]
    else:
        state = [x_to_positions(x0), v_init.copy()]
    times, samples = [0.0], [[s.copy() for s in state]]

    if coef is None:
        times, samples = _simulate_generic(cfg, dist, state, plan, frame, controller, t_final, h_req,
                                           output_interval)
    else:
        for a, b, nsteps, h, stride in plan:
            k0 = 0
            while k0 < nsteps:
                k1 = min(nsteps, k0 + max(stride, CHUNK_STEPS // stride * stride))
                st = stage_times(a, b, h, k0, k1)
                nout = (k1 - k0) // stride
                if frame == "xy":
                    w = np.ascontiguousarray(dist.w(st))
                    out = [np.zeros((nout, n)), np.zeros((nout, n))]
                    status = impl.rk4_xy(state[0], state[1], coef, law.e, cfg.kbar, 1.0 / cfg.eps,
                                         cfg.r, w, h, stride, out[0], out[1])
                else:
                    v0s = np.ascontiguousarray(dist.v0(st), dtype=float)
                    acc = np.ascontiguousarray(dist.theta_over_m(st))
                    out = [np.zeros((nout, n + 1)), np.zeros((nout, n))]
                    status = impl.rk4_pv(state[0], state[1], coef, law.e, cfg.gains, cfg.r,
                                         0 if controller == RANGE else 1, v0s, acc, h, stride,
                                         out[0], out[1])
                if status:
                    raise IntegrationError(_stability_hint(cfg, h), a + (k0 + status) * h,
                                           np.concatenate(state))
                for j in range(nout):
                    times.append(a + (k0 + (j + 1) * stride) * h)
                    samples.append([out[0][j], out[1][j]])
                k0 = k1
            if nsteps % stride:
                times.append(b)
                samples.append([s.copy() for s in state])
            elif times:
                times[-1] = b
    return _build_trajectory(cfg, dist, np.asarray(times), samples, frame, controller)


def _simulate_generic(cfg, dist, state, plan, frame, controller, t_final, h_req, output_interval):
    n = cfg.n
    if frame == "xy":
        def rhs(t, s):
            return np.concatenate(rhs_xy(cfg, dist, t, s[:n], s[n:]))
    else:
        def rhs(t, s):
            return np.concatenate(rhs_pv(cfg, dist, t, s[:n + 1], s[n + 1:], controller))
    ts, Y = integrate(rhs, (0.0, t_final), np.concatenate(state),
                      StepControl(step=h_req, output_interval=output_interval), dist.breakpoints)
    split = n if frame == "xy" else n + 1
    return list(ts), [[row[:split], row[split:]] for row in Y]


def _build_trajectory(cfg, dist, t, samples, frame, controller) -> Trajectory:
    law = cfg.law
    first = np.array([s[0] for s in samples])
    second = np.array([s[1] for s in samples])
    v0 = np.asarray(dist.v0(t), dtype=float)
    if frame == "xy":
        x, y = first, second
        z = xy_to_z(law, x, y)
    else:
        x = pv_to_x(first)
        z = tracking_error(law, x, second, v0)
        y = z_to_y(law, x, z) if controller == RANGE else z.copy()
    meta = {"frame": frame, "controller": controller, "r": cfg.r, "eps": cfg.eps}
    return Trajectory(t=t, x=x, y=y, z=z, w=dist.w(t), v0=v0, e=law.e.copy(), meta=meta)


def simulate_slow(law: FormationLaw, x0, t_final: float, *, step: float = 1e-3,
                  output_interval: float = 0.01, input_samples=None, backend: str | None = None):
    """Integrate ``x' = -d(x) + u(t)`` for a batch of initial spacings.

    ``input_samples`` is an optional pair ``(t, U)`` whose linear interpolant is
    the additive input. Returns ``(t, X)`` with ``X`` of shape ``(len(t), B, n)``.
    """
    X = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    n = law.n
    coef = law.kernel_coefficients()
    plan = plan_grid(0.0, float(t_final), step, output_interval)
    (a, b, nsteps, h, stride), = plan
    st = stage_times(a, b, h, 0, nsteps)
    if input_samples is None:
        U = np.zeros(st.shape + (n,))
    else:
        tu, uu = input_samples
        uu = np.asarray(uu, dtype=float)
        U = np.stack([np.interp(st, tu, uu[:, i]) for i in range(n)], axis=-1)
    if coef is None:
        def rhs(t, s, k=None):
            return -law.evaluate(s.reshape(X.shape)).ravel()
        if input_samples is not None:
            raise NotImplementedError("inputs require a law with kernel coefficients")
        ts, Y = integrate(rhs, (0.0, t_final), X.ravel(), StepControl(step=step, output_interval=output_interval))
        return ts, Y.reshape(len(ts), *X.shape)
    impl = kernels.impl if backend is None else kernels.load(backend)
    out = np.zeros((nsteps // stride, X.shape[0], n))
    status = impl.rk4_slow(X, coef, law.e, np.ascontiguousarray(U), h, stride, out)
    if status:
        raise IntegrationError("slow subsystem diverged; reduce the step size", status * h, X)
    ts = np.concatenate(([0.0], a + np.arange(1, nsteps // stride + 1) * stride * h))
    Xs = np.concatenate([np.atleast_2d(np.asarray(x0, dtype=float))[None], out])
    if nsteps % stride:
        ts = np.append(ts, b)
        Xs = np.concatenate([Xs, X[None]])
    return ts, Xs
