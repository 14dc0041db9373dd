"""Analytic error envelopes and their verification against simulated trajectories.

Envelope kinds:

* ``iss`` / ``iss_refined``  contractive system with an additive input
* ``spacing`` / ``spacing_refined``  spacing error ``|x - e|_inf`` of the range-r loop
* ``tracking``  fast error ``|y|_*`` in the composite block norm
* ``string``  spacing error under the leader-velocity controller

Running disturbance norms ``||w_t||`` are taken as the cumulative maximum over
the trajectory's own samples; no interpolation happens between samples.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .certificates import CertificationError, ContractionCertificate, certify
from .dynamics import STRING, DisturbanceSpec, PlatoonConfig, Trajectory, simulate, simulate_slow
from .formation import FormationLaw, LinearLaw, string_stability_margin
from .signals import WeightedNormSpec, norm_star

KINDS = ("iss", "iss_refined", "spacing", "spacing_refined", "tracking", "string")
SIGMA_FRACTION = 0.05
STRING_GAIN_NORM = 2.0  # ||G||_inf


# -- closed-form envelopes ---------------------------------------------------

def iss_envelope(eta: float, x0_norm: float, u_sup, t, refined: bool = False):
    """``exp(-eta t) |x0| + ||u_t|| / eta``; the refined form weights the input
    term by ``1 - exp(-eta t)``."""
    t = np.asarray(t, dtype=float)
    decay = np.exp(-eta * t)
    gain = (1.0 - decay) / eta if refined else 1.0 / eta
    return decay * x0_norm + gain * np.asarray(u_sup, dtype=float)


def refined_weight(eta1: float, eta2: float, t, eps: float | None = None):
    """``(1 - exp(-eta1 t)) (1 - exp(-eta2 t)) / (eta1 eta2)``.

    Passing ``eps`` measures the second factor on the fast clock, ``eta2 t / eps``.
    """
    t = np.asarray(t, dtype=float)
    fast = eta2 * t if eps is None else eta2 * t / eps
    return (1.0 - np.exp(-eta1 * t)) * (1.0 - np.exp(-fast)) / (eta1 * eta2)


def range_scaling_factor(n: int, r: int) -> float:
    """``sqrt(ceil(n / r))`` in integer arithmetic."""
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    return math.sqrt(-(-n // r))


def range_scaled_bound(n: int, r: int, c_const: float, eps: float, sigma: float,
                       x0_err: float, w_sup: float) -> float:
    """Spacing bound in the plain sup norm of the disturbance."""
    return x0_err + eps * c_const * range_scaling_factor(n, r) * w_sup + sigma


def string_bound(eta: float, eps: float, x0_err: float, z0: float, w_sup: float) -> float:
    """Spacing bound under the leader-velocity controller; has no platoon-length term."""
    if not (eta > 0 and eps > 0):
        raise ValueError("eta and eps must be positive")
    return x0_err + STRING_GAIN_NORM / eta * (z0 + eps * w_sup)


@dataclass(frozen=True)
class EnvelopeSpec:
    kind: str
    eta1: float = 1.0
    eta2: float = 1.0
    eps: float = 1.0
    g_norm: float = STRING_GAIN_NORM
    sigma: float = 0.0
    x0_err: float = 0.0
    y0_star: float = 0.0
    z0_inf: float = 0.0
    norm_spec: WeightedNormSpec | None = None
    fast_clock: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown envelope kind {self.kind!r}; choose from {KINDS}")
        if not (self.eta1 > 0 and self.eta2 > 0 and self.eps > 0):
            raise ValueError("rates and eps must be strictly positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def __call__(self, t, w_sup):
        """Envelope at times ``t`` given the running disturbance norm ``w_sup``."""
        t = np.asarray(t, dtype=float)
        w_sup = np.asarray(w_sup, dtype=float)
        k = self.kind
        if k.startswith("iss"):
            return iss_envelope(self.eta1, self.x0_err, w_sup, t, refined=k == "iss_refined")
        if k.startswith("spacing"):
            if k == "spacing_refined":
                gain = refined_weight(self.eta1, self.eta2, t, self.eps if self.fast_clock else None)
            else:
                gain = 1.0 / (self.eta1 * self.eta2)
            return np.exp(-self.eta1 * t) * self.x0_err + gain * self.eps * self.g_norm * w_sup + self.sigma
        if k == "tracking":
            return np.exp(-self.eta2 * t / self.eps) * self.y0_star + self.eps * w_sup / self.eta2 + self.sigma
        return self.x0_err + STRING_GAIN_NORM / self.eta1 * (self.z0_inf + self.eps * w_sup) + 0.0 * t

    def asymptote(self, w_sup: float) -> float:
        """Value of the envelope once the initial-condition terms have decayed."""
        k = self.kind
        if k.startswith("iss"):
            return w_sup / self.eta1
        if k.startswith("spacing"):
            return self.eps * self.g_norm * w_sup / (self.eta1 * self.eta2) + self.sigma
        if k == "tracking":
            return self.eps * w_sup / self.eta2 + self.sigma
        return float(self(0.0, w_sup))


# -- reports -----------------------------------------------------------------

@dataclass
class BoundReport:
    kind: str
    t: np.ndarray
    traj_norm: np.ndarray
    envelope: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def margin(self) -> np.ndarray:
        return self.envelope - self.traj_norm

    @property
    def max_violation(self) -> float:
        """Largest ``traj_norm - envelope``; nonpositive when the bound holds."""
        return float(np.max(-self.margin))

    @property
    def holds(self) -> bool:
        return self.max_violation <= 0.0

    @property
    def violations(self) -> int:
        return int(np.count_nonzero(self.margin < 0))

    @property
    def first_violation_time(self) -> float | None:
        bad = np.flatnonzero(self.margin < 0)
        return float(self.t[bad[0]]) if bad.size else None

    def margin_stats(self) -> dict:
        m = self.margin
        return {"min": float(m.min()), "mean": float(m.mean()), "median": float(np.median(m)),
                "max": float(m.max())}

    def summary(self) -> str:
        lines = [f"kind = {self.kind}", f"verdict = {'holds' if self.holds else 'violated'}",
                 f"samples = {len(self.t)}", f"violations = {self.violations}",
                 f"max_violation = {self.max_violation!r}",
                 f"first_violation_time = {self.first_violation_time}"]
        lines += [f"margin_{k} = {v!r}" for k, v in self.margin_stats().items()]
        lines += [f"{k} = {v}" for k, v in self.meta.items()]
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "traj_norm", "envelope", "margin"])
            for row in zip(self.t, self.traj_norm, self.envelope, self.margin):
                writer.writerow([repr(float(v)) for v in row])

    def save(self, csv_path, summary_path=None) -> None:
        self.to_csv(csv_path)
        if summary_path is not None:
            with open(summary_path, "w") as fh:
                fh.write(self.summary())


def running_sup(values) -> np.ndarray:
    return np.maximum.accumulate(np.asarray(values, dtype=float))


def _need(traj: Trajectory, *names):
    missing = [n for n in names if getattr(traj, n, None) is None]
    if missing:
        raise ValueError(f"trajectory lacks channel(s) {', '.join(missing)} needed by this envelope")


def verify_bound(traj: Trajectory, env: EnvelopeSpec, norm: str | None = None) -> BoundReport:
    """Evaluate a trajectory norm and its envelope on every sample.

    ``norm`` defaults by kind: spacing and string envelopes use
    ``|x - e|_inf``, the tracking envelope uses ``|y|_*``. The disturbance
    norm is the composite norm for the range-r envelopes and the sup norm for
    ``string``.
    """
    kind = env.kind
    if kind.startswith("iss"):
        raise ValueError("use verify_iss for the frozen-subsystem envelope")
    norm = norm or ("tracking" if kind == "tracking" else "spacing")
    composite = kind != "string"
    if composite and env.norm_spec is None:
        raise ValueError("range-r envelopes need the certificate's block norm")
    _need(traj, "w", "x" if norm == "spacing" else "y")
    if norm == "spacing":
        value = np.max(np.abs(traj.x - traj.e), axis=-1)
    elif norm == "tracking":
        value = norm_star(traj.y, env.norm_spec)
    else:
        raise ValueError(f"unknown norm selector {norm!r}")
    w_norm = norm_star(traj.w, env.norm_spec) if composite else np.max(np.abs(traj.w), axis=-1)
    w_sup = running_sup(w_norm)
    return BoundReport(kind, traj.t.copy(), np.asarray(value, dtype=float), np.asarray(env(traj.t, w_sup)),
                       meta={"norm": norm, "sigma": env.sigma, "eps": env.eps})


def verify_iss(law: FormationLaw, t, u, x0, eta: float, refined: bool = False, *,
               step: float = 1e-3, backend: str | None = None) -> BoundReport:
    """Drive ``x' = -d(x) + u(t)`` by the sampled input and compare ``|x - e|_inf``
    with the ISS envelope built from the running ``|u|_inf``."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    interval = float(np.min(np.diff(t)))
    ts, X = simulate_slow(law, x0, float(t[-1]), step=min(step, interval), output_interval=interval,
                          input_samples=(t, u), backend=backend)
    X = X[:, 0, :]
    u_sup = running_sup(np.max(np.abs(np.stack([np.interp(ts, t, u[:, i]) for i in range(law.n)], -1)), -1))
    x0_err = float(np.max(np.abs(np.asarray(x0) - law.e)))
    env = iss_envelope(eta, x0_err, u_sup, ts, refined)
    return BoundReport("iss_refined" if refined else "iss", ts, np.max(np.abs(X - law.e), axis=-1), env)


# -- certificate-driven envelopes -------------------------------------------

def initial_norms(traj: Trajectory, spec: WeightedNormSpec) -> dict:
    return {"x0_err": float(np.max(np.abs(traj.x[0] - traj.e))),
            "y0_star": float(norm_star(traj.y[0], spec)),
            "z0_inf": float(np.max(np.abs(traj.z[0])))}


def disturbance_level(traj: Trajectory, spec: WeightedNormSpec) -> float:
    return float(np.max(norm_star(traj.w, spec)))


def calibrated_sigma(delta: float, eps: float, g_norm: float, eta1: float, eta2: float,
                     fraction: float = SIGMA_FRACTION) -> float:
    """Slack proportional to the size ``delta`` of the initial data and disturbance."""
    return fraction * (delta + eps * g_norm * delta / (eta1 * eta2))


def certified_envelopes(cert: ContractionCertificate, traj: Trajectory, eps: float,
                        sigma: float | None = None, g_mode: str = "exact"):
    """Spacing, refined spacing and tracking envelopes for ``traj`` under ``cert``.

    Without an explicit ``sigma`` it is calibrated from the trajectory's own
    initial data and disturbance level.
    """
    spec = cert.norm_spec
    g = cert.g_norm(g_mode)
    init = initial_norms(traj, spec)
    if sigma is None:
        delta = max(init["x0_err"], init["y0_star"], disturbance_level(traj, spec))
        sigma = calibrated_sigma(delta, eps, g, cert.eta1, cert.eta2)
    common = dict(eta1=cert.eta1, eta2=cert.eta2, eps=eps, g_norm=g, sigma=sigma, norm_spec=spec,
                  x0_err=init["x0_err"], y0_star=init["y0_star"], z0_inf=init["z0_inf"])
    return {k: EnvelopeSpec(k, **common) for k in ("spacing", "spacing_refined", "tracking")}


def envelope_asymptote(cert: ContractionCertificate, eps: float, w_star: float, sigma: float,
                       g_mode: str = "exact") -> float:
    return eps * cert.g_norm(g_mode) * w_star / (cert.eta1 * cert.eta2) + sigma


# -- epsilon search ----------------------------------------------------------

@dataclass
class CalibrationResult:
    eps_star: float | None
    sigma: float | None
    certificate: ContractionCertificate | None
    trajectory: Trajectory | None
    reports: dict
    history: list

    @property
    def found(self) -> bool:
        return self.eps_star is not None


def _attempt(cfg, dist, x0, v_init, t_final, eps, step, backend, objective):
    ce = cfg.with_epsilon(eps)
    cert = certify(ce, objective=objective)
    if cert.eps < eps:
        raise CertificationError("epsilon", f"eps {eps:g} exceeds the admissible {cert.eps_bar:g}")
    traj = simulate(ce, dist, x0, v_init, t_final, frame="xy", step=step, backend=backend)
    envs = certified_envelopes(cert, traj, eps)
    reports = {k: verify_bound(traj, envs[k]) for k in ("spacing", "tracking")}
    return cert, traj, envs["spacing"].sigma, reports


def calibrate_epsilon(cfg: PlatoonConfig, dist: DisturbanceSpec, x0, v_init, t_final: float, *,
                      steps: int = 8, lo_factor: float = 1e-2, step: float | None = None,
                      backend: str | None = None, objective: str = "gain") -> CalibrationResult:
    """Largest ``eps`` (up to the config's own and the admissible one) for which the
    spacing and tracking envelopes hold on the given scenario.

    The upper end is tried first; if it fails, ``steps`` rounds of log-scale
    bisection run between ``lo_factor`` times it and it. For every candidate
    the gains are rescaled, the certificate rebuilt, the loop simulated and
    sigma recalibrated.
    """
    try:
        hi = min(cfg.eps, certify(cfg, objective=objective).eps_bar)
    except CertificationError as exc:
        return CalibrationResult(None, None, None, None, {"error": str(exc)}, [])
    history = []

    def run(eps):
        res = _attempt(cfg, dist, x0, v_init, t_final, eps, step, backend, objective)
        ok = all(rep.holds for rep in res[3].values())
        history.append((eps, ok))
        return ok, res

    ok, res = run(hi)
    if ok:
        return CalibrationResult(hi, res[2], res[0], res[1], res[3], history)
    lo = hi * lo_factor
    ok, best = run(lo)
    if not ok:
        return CalibrationResult(None, None, best[0], best[1], best[3], history)
    good, bad = lo, hi
    for _ in range(steps):
        mid = math.sqrt(good * bad)
        ok, res = run(mid)
        if ok:
            good, best = mid, res
        else:
            bad = mid
    return CalibrationResult(good, best[2], best[0], best[1], best[3], history)


# -- string stability --------------------------------------------------------

@dataclass
class StringStabilityResult:
    rows: list
    eta: float
    bound: float

    @property
    def holds(self) -> bool:
        return all(row["max_overshoot"] <= self.bound for row in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "eta", "max_overshoot_m", "bound_m"])
            for row in self.rows:
                writer.writerow([row["n"], repr(row["eta"]), repr(row["max_overshoot"]), repr(self.bound)])


def string_stability_experiment(law_for_n, n_list, disturbance_for_n, t_final: float, *,
                                gain: float = 5.0, spread: float = 1.0, w_bound: float,
                                seed: int = 0, step: float | None = None,
                                backend: str | None = None) -> StringStabilityResult:
    """Overshoot of the leader-velocity controller across platoon lengths.

    Each run starts with spacings ``e + U[-spread, spread]`` and the velocities
    that make the tracking errors zero, so the a-priori bound uses
    ``|x(0) - e|_inf <= spread``, ``z(0) = 0`` and ``|w|_inf <= w_bound``.
    ``eta`` must be the same for every length and the bound then is too.
    """
    rows, etas = [], []
    for n in n_list:
        law = law_for_n(n)
        eta = string_stability_margin(law)
        etas.append(eta)
        cfg = PlatoonConfig(law, n, gain)
        dist = disturbance_for_n(n)
        x0 = law.e + np.random.default_rng([int(seed), 1]).uniform(-spread, spread, size=n)
        v = law.evaluate(x0) + float(dist.v0(0.0))
        traj = simulate(cfg, dist, x0, v, t_final, frame="pv", controller=STRING, step=step, backend=backend)
        w_inf = float(np.max(np.abs(traj.w)))
        if w_inf > w_bound:
            raise ValueError(f"disturbance reaches {w_inf:.6g} > declared bound {w_bound:.6g}")
        rows.append({"n": n, "eta": eta, "max_overshoot": traj.max_overshoot(), "w_inf": w_inf,
                     "eps": cfg.eps})
    eta = min(etas)
    if max(etas) - eta > 1e-12:
        raise ValueError(f"string margin varies with n: {etas}")
    eps = 1.0 / gain
    return StringStabilityResult(rows, eta, string_bound(eta, eps, spread, 0.0, w_bound))


def graded_linear_law(n: int, base: float = 1.0, slope: float = 0.125, follower: float = 0.5,
                      spacing: float = 10.0):
    """Linear law whose partial sums grow by ``slope`` along the string.

    ``lp_i = base + slope (i - 1)``, ``lf_i = follower``; the string margin is
    ``min(base - follower, slope)`` for every n >= 3.
    """
    lp = base + slope * np.arange(n)
    return LinearLaw(lp, np.full(n, follower), np.full(n, spacing))

