"""Pure-Python (numpy) RK4 kernels; same interface as the compiled ``_core``."""
import numpy as np


def _law_eval(x, coef, e):
    L, P, Q, B, C = coef
    dx = x - e
    dxn = np.zeros_like(dx)
    dxn[..., :-1] = dx[..., 1:]
    th = np.tanh(P * dx - Q * dxn)
    s = 1.0 - th * th
    d = L * th + B * dx - C * dxn
    p = L * P * s + B
    f = -(L * Q * s + C)
    f[..., -1] = 0.0
    return d, p, f


def _rhs_xy(x, y, w, coef, e, kbar, inv_eps, r):
    d, p, f = _law_eval(x, coef, e)
    dx = -d - y
    dx[1:] += y[:-1]
    ay = -kbar * y
    ay[r:] += kbar[r:] * y[:-r]
    rate = p * dx
    rate[:-1] += f[:-1] * dx[1:]
    hdot = np.zeros_like(x)
    hdot[1:] = np.cumsum(rate[:-1])
    return dx, ay * inv_eps - hdot + w


def _rhs_pv(pos, vel, v0, acc, coef, e, gains, r, mode):
    n = vel.shape[0]
    x = pos[:-1] - pos[1:]
    d, p, f = _law_eval(x, coef, e)
    vfull = np.concatenate(([v0], vel))
    vprev = vfull[:-1]
    vnext = np.concatenate((vel[1:], vel[-1:]))
    if mode == 0:
        dcum = np.concatenate(([0.0], np.cumsum(d)))
        idx = np.arange(1, n + 1)
        lag = np.maximum(idx - r, 0)
        fb = vel - (dcum[idx] - dcum[lag]) - vfull[lag]
    else:
        fb = vel - d - v0
    u = -gains * fb + p * (vprev - vel) + f * (vel - vnext)
    return np.concatenate(([v0], vel)), u + acc


def _rk4(rhs, state, stages, h):
    k1 = rhs(state, stages[0])
    k2 = rhs([s + 0.5 * h * k for s, k in zip(state, k1)], stages[1])
    k3 = rhs([s + 0.5 * h * k for s, k in zip(state, k2)], stages[1])
    k4 = rhs([s + h * k for s, k in zip(state, k3)], stages[2])
    return [s + h / 6.0 * (a + 2.0 * b + 2.0 * c + dd) for s, a, b, c, dd in zip(state, k1, k2, k3, k4)]


def rk4_xy(x, y, coef, e, kbar, inv_eps, r, w, h, stride, out_x, out_y):
    coef, e, kbar = np.asarray(coef), np.asarray(e), np.asarray(kbar)
    rhs = lambda s, wk: _rhs_xy(s[0], s[1], wk, coef, e, kbar, inv_eps, r)  # noqa: E731
    state = [np.array(x), np.array(y)]
    row = 0
    for k in range(w.shape[0]):
        state = _rk4(rhs, state, w[k], h)
        if not (np.all(np.isfinite(state[0])) and np.all(np.isfinite(state[1]))):
            x[:], y[:] = state
            return k + 1
        if (k + 1) % stride == 0:
            out_x[row], out_y[row] = state
            row += 1
    x[:], y[:] = state
    return 0


def rk4_pv(pos, vel, coef, e, gains, r, mode, v0, acc, h, stride, out_p, out_v):
    coef, e, gains = np.asarray(coef), np.asarray(e), np.asarray(gains)

    def rhs(s, stage):
        return _rhs_pv(s[0], s[1], stage[0], stage[1], coef, e, gains, r, mode)

    state = [np.array(pos), np.array(vel)]
    row = 0
    for k in range(v0.shape[0]):
        stages = [(v0[k, j], acc[k, j]) for j in range(3)]
        state = _rk4(rhs, state, stages, h)
        if not (np.all(np.isfinite(state[0])) and np.all(np.isfinite(state[1]))):
            pos[:], vel[:] = state
            return k + 1
        if (k + 1) % stride == 0:
            out_p[row], out_v[row] = state
            row += 1
    pos[:], vel[:] = state
    return 0


def rk4_slow(x, coef, e, u, h, stride, out):
    coef, e = np.asarray(coef), np.asarray(e)

    def rhs(s, uk):
        return [-_law_eval(s[0], coef, e)[0] + uk]

    state = [np.array(x)]
    row = 0
    for k in range(u.shape[0]):
        state = _rk4(rhs, state, u[k], h)
        if not np.all(np.isfinite(state[0])):
            x[:] = state[0]
            return k + 1
        if (k + 1) % stride == 0:
            out[row] = state[0]
            row += 1
    x[:] = state[0]
    return 0
