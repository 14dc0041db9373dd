import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoonkit import kernels
from platoonkit.dynamics import (PlatoonConfig, Trajectory, control_range_r, control_string_stable,
                                 jacobian_fast, matrix_A, matrix_F, matrix_G, pv_to_x, rhs_pv, rhs_xy, simulate,
                                 simulate_slow, tracking_error, x_to_positions, xy_to_z, z_to_y)
from platoonkit.formation import FormationLaw, LinearLaw, TanhAffineLaw, contraction_constants, steady_state_h
from platoonkit.integrate import IntegrationError
from platoonkit.scenarios import quiet_disturbance


def scalar_range_control(lp, lf, ell, b, e, k, r, p, v):
    """Per-vehicle evaluation of the range-r protocol with index-guarded neighbours."""
    n = len(e)
    x = [p[i - 1] - p[i] for i in range(1, n + 1)]
    dx = [x[i] - e[i] for i in range(n)]

    def d(i):  # 1-based, zero for the leader side
        if i < 1:
            return 0.0
        nxt = dx[i] if i < n else 0.0
        lfe = lf if i < n else 0.0
        return ell * np.tanh(lp * dx[i - 1] - lfe * nxt) + b * dx[i - 1]

    def parts(i):
        nxt = dx[i] if i < n else 0.0
        lfe = lf if i < n else 0.0
        s = 1.0 / np.cosh(lp * dx[i - 1] - lfe * nxt) ** 2
        return ell * lp * s + b, -ell * lfe * s

    u = []
    for i in range(1, n + 1):
        fb = v[i] - sum(d(i - j) for j in range(r)) - v[max(i - r, 0)]
        pi, fi = parts(i)
        term = -k * fb + pi * (v[i - 1] - v[i])
        if i < n:
            term += fi * (v[i] - v[i + 1])
        u.append(term)
    return np.array(u)


def test_matrix_G():
    assert np.array_equal(matrix_G(2), [[-1, 0], [1, -1]])
    assert np.array_equal(matrix_G(1), [[-1]])
    assert np.linalg.norm(matrix_G(7), np.inf) == 2


def test_matrix_A():
    law3 = LinearLaw(1.0, 0.5, np.full(3, 10.0))
    assert np.array_equal(matrix_A(PlatoonConfig(law3, 2, 1.0)), [[-1, 0, 0], [0, -1, 0], [1, 0, -1]])
    assert np.array_equal(matrix_A(PlatoonConfig(law3, 3, [2.0, 3.0, 4.0])), -np.diag([1.0, 1.5, 2.0]))
    law2 = LinearLaw(1.0, 0.5, np.full(2, 10.0))
    assert np.array_equal(matrix_A(PlatoonConfig(law2, 1, [1.0, 2.0])), [[-1, 0], [2, -2]])


def test_config_derived_values(ref_law):
    cfg = PlatoonConfig(ref_law, 3, np.linspace(4, 8, 10))
    assert cfg.k_min == 4 and cfg.eps == 0.25 and cfg.kbar.min() == 1.0
    half = cfg.with_epsilon(0.125)
    assert half.eps == pytest.approx(0.125) and np.allclose(half.kbar, cfg.kbar)
    with pytest.raises(ValueError):
        PlatoonConfig(ref_law, 11, 5.0)
    with pytest.raises(ValueError):
        PlatoonConfig(ref_law, 2, -1.0)


def test_matrix_F_structure(ref_law, ref_cfg):
    cfg = ref_cfg(3)
    c = contraction_constants(ref_law).c
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = ref_law.e + rng.normal(0, 3, 10)
        F = matrix_F(cfg, x)
        _, f = ref_law.partials(x)
        assert np.all(np.triu(F, 1) == 0)
        # diagonal carries the predecessor's follower sensitivity
        assert np.allclose(np.diag(F), cfg.eps * np.concatenate(([0.0], f[:-1])))
        assert np.max(np.abs(F)) <= 2 * cfg.eps * c + 1e-15
    one = PlatoonConfig(LinearLaw(1.0, 0.5, [10.0]), 1, 5.0)
    assert np.all(matrix_F(one, [13.0]) == 0)


def test_controller_examples():
    law = LinearLaw(1.0, 0.5, [10.0, 10.0])
    cfg = PlatoonConfig(law, 1, 5.0)
    pos = x_to_positions([11.0, 10.0], 100.0)
    assert np.allclose(control_range_r(cfg, pos, [15.0, 15.0, 15.0]), [5.0, 0.0])
    for r in (1, 2):
        eq = PlatoonConfig(law, r, 5.0)
        assert np.all(control_range_r(eq, x_to_positions(law.e), np.full(3, 20.0)) == 0)
        assert np.all(control_string_stable(eq, x_to_positions(law.e), np.full(3, 20.0)) == 0)


def test_controller_matches_scalar_oracle(ref_law):
    rng = np.random.default_rng(8)
    for r in (1, 2, 5, 10):
        cfg = PlatoonConfig(ref_law, r, 5.0)
        for _ in range(10):
            p = x_to_positions(ref_law.e + rng.normal(0, 2, 10), 50.0)
            v = 15.0 + rng.normal(0, 1, 11)
            ours = control_range_r(cfg, p, v)
            oracle = scalar_range_control(0.18, 0.18, 0.5, 0.1, ref_law.e, 5.0, r, p, v)
            assert np.allclose(ours, oracle, atol=1e-12)


def test_string_controller_relations(ref_law):
    rng = np.random.default_rng(9)
    cfg = PlatoonConfig(ref_law, 10, 5.0)
    for _ in range(20):
        p = x_to_positions(ref_law.e + rng.normal(0, 2, 10))
        v = 15.0 + rng.normal(0, 1, 11)
        d = ref_law.evaluate(pv_to_x(p))
        diff = control_string_stable(cfg, p, v) - control_range_r(cfg, p, v)
        assert np.allclose(diff, -5.0 * steady_state_h(ref_law, pv_to_x(p)), atol=1e-12)
        assert diff[0] == 0 and diff[3] == pytest.approx(-5.0 * d[:3].sum())
    single = PlatoonConfig(LinearLaw(1.0, 0.5, [10.0]), 1, 3.0)
    p, v = [0.0, -12.0], [15.0, 14.0]
    assert np.allclose(control_string_stable(single, p, v), control_range_r(single, p, v))


def test_coordinate_round_trips(ref_law):
    rng = np.random.default_rng(10)
    x = ref_law.e + rng.normal(0, 2, 10)
    assert np.allclose(pv_to_x(x_to_positions(x, 7.0)), x)
    z = rng.normal(0, 1, 10)
    assert np.allclose(xy_to_z(ref_law, x, z_to_y(ref_law, x, z)), z)
    v = rng.normal(15, 1, 10)
    assert np.allclose(tracking_error(ref_law, x, v, 15.0), v - ref_law.evaluate(x) - 15.0)


def test_rhs_xy_matches_pv_chain_rule(ref_law, ref_dist, ref_cfg):
    # d/dt of (x, y) built from the PV derivatives equals rhs_xy
    rng = np.random.default_rng(12)
    for r in (1, 4, 10):
        cfg = ref_cfg(r)
        p = x_to_positions(ref_law.e + rng.normal(0, 2, 10))
        vf = 15.0 + rng.normal(0, 1, 10)
        t = 3.3
        v0 = float(ref_dist.v0(t))
        vel, acc = rhs_pv(cfg, ref_dist, t, p, vf)
        x = pv_to_x(p)
        z = tracking_error(ref_law, x, vf, v0)
        y = z_to_y(ref_law, x, z)
        xdot, ydot = rhs_xy(cfg, ref_dist, t, x, y)
        assert np.allclose(xdot, vel[:-1] - vel[1:], atol=1e-12)
        eps_h = 1e-6
        xp = x + eps_h * xdot
        pd, fd_ = ref_law.partials(x)
        ddot = pd * xdot + np.append(fd_[:-1] * xdot[1:], 0.0)
        zdot = acc - ddot - float(ref_dist.v0_dot(t))
        hdot = (steady_state_h(ref_law, xp) - steady_state_h(ref_law, x)) / eps_h
        assert np.allclose(ydot, zdot - hdot, atol=1e-5)


def test_equilibrium_is_stationary(ref_law, ref_cfg):
    dist = quiet_disturbance(10, 20.0)
    xd, yd = rhs_xy(ref_cfg(3), dist, 1.0, ref_law.e, np.zeros(10))
    assert np.all(xd == 0) and np.all(yd == 0)
    traj = simulate(ref_cfg(3), dist, ref_law.e, np.full(10, 20.0), 5.0)
    assert np.max(np.abs(traj.x - ref_law.e)) == 0.0 and np.max(np.abs(traj.y)) == 0.0


def test_frames_agree(ref_law, ref_dist, ref_start, ref_cfg):
    for r in (1, 3, 10):
        a = simulate(ref_cfg(r), ref_dist, ref_start.x0, ref_start.v, 20.0, frame="xy")
        b = simulate(ref_cfg(r), ref_dist, ref_start.x0, ref_start.v, 20.0, frame="pv")
        assert np.array_equal(a.t, b.t)
        assert np.max(np.abs(a.x - b.x)) < 1e-8
        assert np.max(np.abs(a.y - b.y)) < 1e-8


def test_step_halving_converges(ref_dist, ref_start, ref_cfg):
    a = simulate(ref_cfg(3), ref_dist, ref_start.x0, ref_start.v, 30.0, step=1e-3)
    b = simulate(ref_cfg(3), ref_dist, ref_start.x0, ref_start.v, 30.0, step=5e-4)
    assert np.max(np.abs(a.x[-1] - b.x[-1])) < 1e-6
    assert np.max(np.abs(a.y[-1] - b.y[-1])) < 1e-6


@pytest.mark.skipif("python" not in kernels.available() or "cython" not in kernels.available(),
                    reason="needs both kernel backends")
def test_backends_agree(ref_dist, ref_start, ref_cfg):
    for frame in ("xy", "pv"):
        a = simulate(ref_cfg(3), ref_dist, ref_start.x0, ref_start.v, 2.0, frame=frame, backend="cython")
        b = simulate(ref_cfg(3), ref_dist, ref_start.x0, ref_start.v, 2.0, frame=frame, backend="python")
        assert np.max(np.abs(a.x - b.x)) < 1e-12 and np.max(np.abs(a.z - b.z)) < 1e-12


class CubicLaw(FormationLaw):
    """Outside the kernel family; exercises the generic integration path."""

    def __init__(self, e):
        super().__init__(e)

    def evaluate(self, x):
        dx, dn = self._deviations(x)
        dn[..., -1] = 0.0
        return 0.3 * dx + 0.01 * dx ** 3 - 0.1 * dn

    def partials(self, x):
        dx, _ = self._deviations(x)
        f = np.full_like(dx, -0.1)
        f[..., -1] = 0.0
        return 0.3 + 0.03 * dx ** 2, f


def test_generic_path_matches_kernel_family(ref_dist, ref_start):
    # a linear law routed through both paths
    class Wrapped(LinearLaw):
        def kernel_coefficients(self):
            return None

    e = np.full(10, 10.0)
    fast, slow = LinearLaw(0.3, 0.1, e), Wrapped(0.3, 0.1, e)
    for frame, ctrl in (("xy", "range"), ("pv", "range"), ("pv", "string")):
        a = simulate(PlatoonConfig(fast, 3, 5.0), ref_dist, ref_start.x0, ref_start.v, 1.0, frame=frame, controller=ctrl)
        b = simulate(PlatoonConfig(slow, 3, 5.0), ref_dist, ref_start.x0, ref_start.v, 1.0, frame=frame, controller=ctrl)
        assert np.max(np.abs(a.x - b.x)) < 1e-12
    traj = simulate(PlatoonConfig(CubicLaw(e), 2, 5.0), ref_dist, ref_start.x0, ref_start.v, 1.0)
    assert np.all(np.isfinite(traj.x))


def test_simulate_rejects_bad_input(ref_cfg, ref_dist, ref_start):
    with pytest.raises(ValueError):
        simulate(ref_cfg(3), ref_dist, ref_start.x0, ref_start.v, 1.0, frame="xy", controller="string")
    with pytest.raises(ValueError):
        simulate(ref_cfg(3), ref_dist, ref_start.x0[:5], ref_start.v, 1.0)
    with pytest.raises(IntegrationError) as exc:
        simulate(ref_cfg(3).with_epsilon(1e-3), ref_dist, ref_start.x0, ref_start.v, 5.0, step=0.01)
    assert "stability limit" in str(exc.value)


def test_trajectory_csv_round_trip(tmp_path, ref_dist, ref_start, ref_cfg, ref_law):
    traj = simulate(ref_cfg(3), ref_dist, ref_start.x0, ref_start.v, 0.5)
    path = tmp_path / "t.csv"
    traj.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "t" and header[1] == "x_1" and header[11] == "y_1" and header[-1] == "v0"
    assert len(header) == 2 + 4 * 10
    back = Trajectory.from_csv(path, ref_law.e)
    for name in ("t", "x", "y", "z", "w", "v0"):
        assert np.array_equal(getattr(back, name), getattr(traj, name))


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_frozen_subsystem_contracts(seed):
    law = TanhAffineLaw(0.5, 0.18, 0.18, 0.1, np.full(6, 10.0))
    rng = np.random.default_rng(seed)
    X0 = law.e + rng.normal(0, 5, (2, 6))
    t, X = simulate_slow(law, X0, 20.0, step=1e-3, output_interval=0.1)
    gap = np.max(np.abs(X[:, 0] - X[:, 1]), axis=1)
    assert np.all(gap <= np.exp(-0.1 * t) * gap[0] * (1 + 1e-6))


def test_jacobian_fast_is_A_plus_F(ref_law, ref_cfg):
    x = ref_law.e + 1.0
    cfg = ref_cfg(2)
    assert np.allclose(jacobian_fast(cfg, x), matrix_A(cfg) + matrix_F(cfg, x))
