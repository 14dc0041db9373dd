# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 kernels for the platoon closed loop.

Interface mirrors ``platoonkit._core_py``. Formation laws arrive as a
``(5, n)`` coefficient array ``(L, P, Q, B, C)`` with
``d_i = L_i tanh(P_i dx_i - Q_i dx_{i+1}) + B_i dx_i - C_i dx_{i+1}``.
Stage inputs have shape ``(N, 3, ...)``: values at the step start, midpoint
and (left limit at) the step end. Each kernel advances the state in place,
writes every ``stride``-th state into the output buffers and returns 0, or
``k + 1`` when the state became non-finite during step ``k``.
"""
import numpy as np
from libc.math cimport tanh, isfinite


cdef inline void law_eval(Py_ssize_t n, const double* x, const double[:, ::1] coef,
                          const double[::1] e, double* d, double* p, double* f) noexcept nogil:
    cdef Py_ssize_t i
    cdef double dx, dxn, th, s
    for i in range(n):
        dx = x[i] - e[i]
        dxn = x[i + 1] - e[i + 1] if i < n - 1 else 0.0
        th = tanh(coef[1, i] * dx - coef[2, i] * dxn)
        s = 1.0 - th * th
        d[i] = coef[0, i] * th + coef[3, i] * dx - coef[4, i] * dxn
        p[i] = coef[0, i] * coef[1, i] * s + coef[3, i]
        if i < n - 1:
            f[i] = -(coef[0, i] * coef[2, i] * s + coef[4, i])
        else:
            f[i] = 0.0


cdef inline void rhs_xy(Py_ssize_t n, const double* x, const double* y, const double* w,
                        const double[:, ::1] coef, const double[::1] e, const double[::1] kbar,
                        double inv_eps, Py_ssize_t r, double* d, double* p, double* f,
                        double* dx_out, double* dy_out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double hdot = 0.0, ay
    law_eval(n, x, coef, e, d, p, f)
    for i in range(n):
        dx_out[i] = -d[i] - y[i] + (y[i - 1] if i > 0 else 0.0)
    for i in range(n):
        ay = -kbar[i] * y[i]
        if i >= r:
            ay += kbar[i] * y[i - r]
        dy_out[i] = ay * inv_eps - hdot + w[i]
        # dh_{i+1}/dt adds the rate of d_i
        hdot += p[i] * dx_out[i] + (f[i] * dx_out[i + 1] if i < n - 1 else 0.0)


cdef inline void rhs_pv(Py_ssize_t n, const double* pos, const double* vel, double v0,
                        const double* acc, const double[:, ::1] coef, const double[::1] e,
                        const double[::1] k, Py_ssize_t r, int mode, double* x, double* dcum,
                        double* d, double* p, double* f, double* dp_out,
                        double* dv_out) noexcept nogil:
    cdef Py_ssize_t i, lag
    cdef double vi, vprev, vnext, vlag, fb, u
    for i in range(n):
        x[i] = pos[i] - pos[i + 1]
    law_eval(n, x, coef, e, d, p, f)
    dcum[0] = 0.0
    for i in range(n):
        dcum[i + 1] = dcum[i] + d[i]
    dp_out[0] = v0
    for i in range(n):
        vi = vel[i]
        vprev = vel[i - 1] if i > 0 else v0
        vnext = vel[i + 1] if i < n - 1 else vi
        if mode == 0:
            lag = i - r
            vlag = vel[lag] if lag >= 0 else v0
            fb = vi - (dcum[i + 1] - dcum[lag + 1 if lag >= 0 else 0]) - vlag
        else:
            fb = vi - d[i] - v0
        u = -k[i] * fb + p[i] * (vprev - vi) + f[i] * (vi - vnext)
        dp_out[i + 1] = vi
        dv_out[i] = u + acc[i]


cdef inline void rhs_slow(Py_ssize_t n, const double* x, const double* u,
                          const double[:, ::1] coef, const double[::1] e, double* d,
                          double* p, double* f, double* dx_out) noexcept nogil:
    cdef Py_ssize_t i
    law_eval(n, x, coef, e, d, p, f)
    for i in range(n):
        dx_out[i] = -d[i] + u[i]


def rk4_xy(double[::1] x, double[::1] y, const double[:, ::1] coef, const double[::1] e,
           const double[::1] kbar, double inv_eps, Py_ssize_t r, const double[:, :, ::1] w,
           double h, Py_ssize_t stride, double[:, ::1] out_x, double[:, ::1] out_y):
    cdef Py_ssize_t n = x.shape[0], N = w.shape[0], k, i, row = 0
    cdef double[:, ::1] buf = np.zeros((16, n))
    cdef double* d = &buf[0, 0]
    cdef double* p = &buf[1, 0]
    cdef double* f = &buf[2, 0]
    cdef double* kx1 = &buf[3, 0]
    cdef double* kx2 = &buf[4, 0]
    cdef double* kx3 = &buf[5, 0]
    cdef double* kx4 = &buf[6, 0]
    cdef double* ky1 = &buf[7, 0]
    cdef double* ky2 = &buf[8, 0]
    cdef double* ky3 = &buf[9, 0]
    cdef double* ky4 = &buf[10, 0]
    cdef double* xt = &buf[11, 0]
    cdef double* yt = &buf[12, 0]
    cdef double* xs = &x[0]
    cdef double* ys = &y[0]
    cdef double hh = 0.5 * h
    cdef bint ok
    cdef Py_ssize_t status = 0
    with nogil:
        for k in range(N):
            rhs_xy(n, xs, ys, &w[k, 0, 0], coef, e, kbar, inv_eps, r, d, p, f, kx1, ky1)
            for i in range(n):
                xt[i] = xs[i] + hh * kx1[i]
                yt[i] = ys[i] + hh * ky1[i]
            rhs_xy(n, xt, yt, &w[k, 1, 0], coef, e, kbar, inv_eps, r, d, p, f, kx2, ky2)
            for i in range(n):
                xt[i] = xs[i] + hh * kx2[i]
                yt[i] = ys[i] + hh * ky2[i]
            rhs_xy(n, xt, yt, &w[k, 1, 0], coef, e, kbar, inv_eps, r, d, p, f, kx3, ky3)
            for i in range(n):
                xt[i] = xs[i] + h * kx3[i]
                yt[i] = ys[i] + h * ky3[i]
            rhs_xy(n, xt, yt, &w[k, 2, 0], coef, e, kbar, inv_eps, r, d, p, f, kx4, ky4)
            ok = True
            for i in range(n):
                xs[i] += h / 6.0 * (kx1[i] + 2.0 * kx2[i] + 2.0 * kx3[i] + kx4[i])
                ys[i] += h / 6.0 * (ky1[i] + 2.0 * ky2[i] + 2.0 * ky3[i] + ky4[i])
                if not (isfinite(xs[i]) and isfinite(ys[i])):
                    ok = False
            if not ok:
                status = k + 1
                break
            if (k + 1) % stride == 0:
                for i in range(n):
                    out_x[row, i] = xs[i]
                    out_y[row, i] = ys[i]
                row += 1
    return status


def rk4_pv(double[::1] pos, double[::1] vel, const double[:, ::1] coef, const double[::1] e,
           const double[::1] gains, Py_ssize_t r, int mode, const double[:, ::1] v0,
           const double[:, :, ::1] acc, double h, Py_ssize_t stride,
           double[:, ::1] out_p, double[:, ::1] out_v):
    cdef Py_ssize_t n = vel.shape[0], N = v0.shape[0], k, i, row = 0
    cdef double[:, ::1] buf = np.zeros((20, n + 1))
    cdef double* x = &buf[0, 0]
    cdef double* dcum = &buf[1, 0]
    cdef double* d = &buf[2, 0]
    cdef double* p = &buf[3, 0]
    cdef double* f = &buf[4, 0]
    cdef double* kp1 = &buf[5, 0]
    cdef double* kp2 = &buf[6, 0]
    cdef double* kp3 = &buf[7, 0]
    cdef double* kp4 = &buf[8, 0]
    cdef double* kv1 = &buf[9, 0]
    cdef double* kv2 = &buf[10, 0]
    cdef double* kv3 = &buf[11, 0]
    cdef double* kv4 = &buf[12, 0]
    cdef double* pt = &buf[13, 0]
    cdef double* vt = &buf[14, 0]
    cdef double* ps = &pos[0]
    cdef double* vs = &vel[0]
    cdef double hh = 0.5 * h
    cdef bint ok
    cdef Py_ssize_t status = 0
    with nogil:
        for k in range(N):
            rhs_pv(n, ps, vs, v0[k, 0], &acc[k, 0, 0], coef, e, gains, r, mode, x, dcum, d, p, f, kp1, kv1)
            for i in range(n + 1):
                pt[i] = ps[i] + hh * kp1[i]
            for i in range(n):
                vt[i] = vs[i] + hh * kv1[i]
            rhs_pv(n, pt, vt, v0[k, 1], &acc[k, 1, 0], coef, e, gains, r, mode, x, dcum, d, p, f, kp2, kv2)
            for i in range(n + 1):
                pt[i] = ps[i] + hh * kp2[i]
            for i in range(n):
                vt[i] = vs[i] + hh * kv2[i]
            rhs_pv(n, pt, vt, v0[k, 1], &acc[k, 1, 0], coef, e, gains, r, mode, x, dcum, d, p, f, kp3, kv3)
            for i in range(n + 1):
                pt[i] = ps[i] + h * kp3[i]
            for i in range(n):
                vt[i] = vs[i] + h * kv3[i]
            rhs_pv(n, pt, vt, v0[k, 2], &acc[k, 2, 0], coef, e, gains, r, mode, x, dcum, d, p, f, kp4, kv4)
            ok = True
            for i in range(n + 1):
                ps[i] += h / 6.0 * (kp1[i] + 2.0 * kp2[i] + 2.0 * kp3[i] + kp4[i])
                if not isfinite(ps[i]):
                    ok = False
            for i in range(n):
                vs[i] += h / 6.0 * (kv1[i] + 2.0 * kv2[i] + 2.0 * kv3[i] + kv4[i])
                if not isfinite(vs[i]):
                    ok = False
            if not ok:
                status = k + 1
                break
            if (k + 1) % stride == 0:
                for i in range(n + 1):
                    out_p[row, i] = ps[i]
                for i in range(n):
                    out_v[row, i] = vs[i]
                row += 1
    return status


def rk4_slow(double[:, ::1] x, const double[:, ::1] coef, const double[::1] e,
             const double[:, :, ::1] u, double h, Py_ssize_t stride, double[:, :, ::1] out):
    cdef Py_ssize_t B = x.shape[0], n = x.shape[1], N = u.shape[0], k, b, i, row
    cdef double[:, ::1] buf = np.zeros((11, n))
    cdef double* d = &buf[0, 0]
    cdef double* p = &buf[1, 0]
    cdef double* f = &buf[2, 0]
    cdef double* k1 = &buf[3, 0]
    cdef double* k2 = &buf[4, 0]
    cdef double* k3 = &buf[5, 0]
    cdef double* k4 = &buf[6, 0]
    cdef double* xt = &buf[7, 0]
    cdef double* xs
    cdef double hh = 0.5 * h
    cdef Py_ssize_t status = 0
    with nogil:
        for b in range(B):
            if status:
                break
            xs = &x[b, 0]
            row = 0
            for k in range(N):
                rhs_slow(n, xs, &u[k, 0, 0], coef, e, d, p, f, k1)
                for i in range(n):
                    xt[i] = xs[i] + hh * k1[i]
                rhs_slow(n, xt, &u[k, 1, 0], coef, e, d, p, f, k2)
                for i in range(n):
                    xt[i] = xs[i] + hh * k2[i]
                rhs_slow(n, xt, &u[k, 1, 0], coef, e, d, p, f, k3)
                for i in range(n):
                    xt[i] = xs[i] + h * k3[i]
                rhs_slow(n, xt, &u[k, 2, 0], coef, e, d, p, f, k4)
                for i in range(n):
                    xs[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                    if not isfinite(xs[i]):
                        status = k + 1
                if status:
                    break
                if (k + 1) % stride == 0:
                    for i in range(n):
                        out[row, b, i] = xs[i]
                    row += 1
    return status
