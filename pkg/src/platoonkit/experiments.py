"""Experiment orchestration: per-range certify / simulate / verify runs and their files.

Every run directory holds ``trajectory_r<k>.csv``, ``bounds_r<k>.csv`` (spacing
envelope), ``bounds_r<k>_tracking.csv``, ``bounds_r<k>.txt``,
``certificate_r<k>.txt``, ``summary.csv`` and ``verification.csv``. An eps
grid puts one such directory per value under ``eps_<i>/``.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import (calibrate_epsilon, certified_envelopes, disturbance_level, range_scaling_factor,
                     string_stability_experiment, verify_bound)
from .certificates import CertificationError, ContractionCertificate, certify
from .config import ExperimentConfig, load_config
from .dynamics import STRING, Trajectory, simulate
from .formation import ConditionViolation
from .integrate import IntegrationError

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("r", "m", "eta1", "eta2", "eps_bar", "max_overshoot_m", "envelope_asymptote_m")
VERIFY_COLUMNS = ("r", "eps", "sigma", "scaling_factor", "spacing_holds", "spacing_max_violation",
                  "tracking_holds", "tracking_max_violation", "status")


@dataclass
class RangeResult:
    r: int
    n: int
    eps: float
    certificate: ContractionCertificate | None = None
    trajectory: Trajectory | None = None
    reports: dict = field(default_factory=dict)
    sigma: float = math.nan
    asymptote: float = math.nan
    error: str | None = None

    @property
    def m(self) -> int:
        return -(-self.n // self.r)

    @property
    def max_overshoot(self) -> float:
        return self.trajectory.max_overshoot() if self.trajectory is not None else math.nan

    def summary_row(self) -> dict:
        c = self.certificate
        return {"r": self.r, "m": self.m,
                "eta1": c.eta1 if c else math.nan, "eta2": c.eta2 if c else math.nan,
                "eps_bar": c.eps_bar if c else math.nan,
                "max_overshoot_m": self.max_overshoot, "envelope_asymptote_m": self.asymptote}

    def verify_row(self) -> dict:
        sp, tr = self.reports.get("spacing"), self.reports.get("tracking")
        return {"r": self.r, "eps": self.eps, "sigma": self.sigma,
                "scaling_factor": range_scaling_factor(self.n, self.r),
                "spacing_holds": sp.holds if sp else "", "spacing_max_violation": sp.max_violation if sp else math.nan,
                "tracking_holds": tr.holds if tr else "",
                "tracking_max_violation": tr.max_violation if tr else math.nan,
                "status": self.error or "ok"}


def _fmt(v):
    if isinstance(v, bool) or isinstance(v, str):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_table(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def run_range(cfg: ExperimentConfig, r: int, *, eps: float | None = None, verify: bool = True,
              calibrate: bool = False, backend: str | None = None) -> RangeResult:
    """Certify, simulate and (optionally) verify one communication range.

    Failures are captured in the result rather than raised so that a sweep
    keeps going.
    """
    pc = cfg.platoon(r)
    if eps is not None:
        pc = pc.with_epsilon(eps)
    res = RangeResult(r, cfg.n, pc.eps)
    law = pc.law
    dist = cfg.build_disturbance()
    ic = cfg.initial_condition(law)
    try:
        res.certificate = certify(pc)
        if res.certificate.eps < pc.eps:
            res.error = f"eps {pc.eps:g} above admissible {res.certificate.eps_bar:g}; bounds not certified"
        res.trajectory = simulate(pc, dist, ic.x0, ic.v, cfg.horizon, frame="xy", step=cfg.step,
                                  output_interval=cfg.output_interval, backend=backend)
        envs = certified_envelopes(res.certificate, res.trajectory, pc.eps)
        res.sigma = envs["spacing"].sigma
        w_star = disturbance_level(res.trajectory, res.certificate.norm_spec)
        res.asymptote = envs["spacing"].asymptote(w_star)
        if verify and res.error is None:
            res.reports = {k: verify_bound(res.trajectory, envs[k]) for k in ("spacing", "tracking")}
        if calibrate:
            cal = calibrate_epsilon(pc, dist, ic.x0, ic.v, cfg.horizon, step=cfg.step, backend=backend)
            if not cal.found:
                res.error = "no eps in the search range passes both envelopes"
            else:
                if cal.eps_star != pc.eps:
                    res.eps, res.sigma = cal.eps_star, cal.sigma
                    res.certificate, res.trajectory = cal.certificate, cal.trajectory
                    w_star = disturbance_level(res.trajectory, res.certificate.norm_spec)
                    envs = certified_envelopes(res.certificate, res.trajectory, res.eps, res.sigma)
                    res.asymptote = envs["spacing"].asymptote(w_star)
                res.reports = cal.reports
    except (CertificationError, IntegrationError, ConditionViolation) as exc:
        res.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        log.warning("r=%d failed: %s", r, res.error)
    return res


def write_range(res: RangeResult, out_dir) -> None:
    k = res.r
    if res.certificate is not None:
        res.certificate.save(os.path.join(out_dir, f"certificate_r{k}.txt"))
    else:
        with open(os.path.join(out_dir, f"certificate_r{k}.txt"), "w") as fh:
            fh.write(f"# certification failed\nr = {k}\nerror = {res.error}\n")
    if res.trajectory is not None:
        res.trajectory.to_csv(os.path.join(out_dir, f"trajectory_r{k}.csv"))
    if res.reports:
        res.reports["spacing"].to_csv(os.path.join(out_dir, f"bounds_r{k}.csv"))
        res.reports["tracking"].to_csv(os.path.join(out_dir, f"bounds_r{k}_tracking.csv"))
        with open(os.path.join(out_dir, f"bounds_r{k}.txt"), "w") as fh:
            fh.write(f"r = {k}\neps = {res.eps!r}\n\n")
            fh.write("\n".join(rep.summary() for rep in res.reports.values()))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    ranges: list
    out_dir: str | None

    @property
    def summary(self) -> list[dict]:
        return [r.summary_row() for r in self.ranges]


def run_experiment(cfg, out_dir=None, *, seed=None, step=None, horizon=None, verify: bool = True,
                   calibrate: bool | None = None, eps: float | None = None, jobs: int | None = None,
                   write: bool = True, backend: str | None = None) -> ExperimentResult:
    """Run every range in ``r_list`` and write the result bundle.

    ``cfg`` is an :class:`ExperimentConfig` or a path to an INI file. With the
    leader-velocity controller selected the string harness runs instead.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    cfg = cfg.override(seed=seed, step=step, horizon=horizon, calibrate=calibrate, jobs=jobs)
    out_dir = out_dir or cfg.out_dir
    if cfg.controller == STRING:
        return run_string_stability(cfg, out_dir, write=write, backend=backend)
    if write:
        os.makedirs(out_dir, exist_ok=True)

    def one(r):
        res = run_range(cfg, r, eps=eps, verify=verify, calibrate=cfg.calibrate, backend=backend)
        if write:
            write_range(res, out_dir)
        return res

    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            ranges = list(pool.map(one, cfg.r_list))
    else:
        ranges = [one(r) for r in cfg.r_list]
    result = ExperimentResult(cfg, ranges, out_dir if write else None)
    if write:
        write_table(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, result.summary)
        write_table(os.path.join(out_dir, "verification.csv"), VERIFY_COLUMNS, [r.verify_row() for r in ranges])
        if cfg.plot_script:
            write_plot_script(out_dir, cfg.r_list)
    return result


def run_sweep(cfg, out_dir=None, **kw) -> list[ExperimentResult]:
    """All ranges at the configured gains, then once per value of ``eps_list``."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out_dir = out_dir or cfg.out_dir
    results = [run_experiment(cfg, out_dir, **kw)]
    for i, eps in enumerate(cfg.eps_list):
        results.append(run_experiment(cfg, os.path.join(out_dir, f"eps_{i}"), eps=eps, **kw))
    if cfg.eps_list and kw.get("write", True):
        rows = [{"eps": res.ranges[0].eps if res.ranges else math.nan, "dir": res.out_dir or ""}
                for res in results[1:]]
        write_table(os.path.join(out_dir, "eps_grid.csv"), ("eps", "dir"), rows)
    return results


def run_certify(cfg, out_dir=None, *, write: bool = True) -> list:
    """Certificates only; one entry per range, either a certificate or an error string."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out_dir = out_dir or cfg.out_dir
    if write:
        os.makedirs(out_dir, exist_ok=True)
    out = []
    for r in cfg.r_list:
        res = RangeResult(r, cfg.n, cfg.platoon(r).eps)
        try:
            res.certificate = certify(cfg.platoon(r))
        except CertificationError as exc:
            res.error = str(exc)
        if write:
            write_range(res, out_dir)
        out.append(res)
    if write:
        rows = [r.summary_row() for r in out]
        write_table(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, rows)
    return out


def run_string_stability(cfg, out_dir=None, *, write: bool = True, backend: str | None = None):
    """Length sweep of the leader-velocity controller with the configured law family."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = load_config(cfg)
    out_dir = out_dir or cfg.out_dir
    w_bound = cfg.scale * (cfg.amplitude * (cfg.disturbance != "none")
                           + cfg.leader_profile().max_abs_slope())
    gain = float(np.max(cfg.gains)) if len(cfg.gains) == 1 else None
    if gain is None:
        raise ValueError("the string harness needs a single uniform gain")
    res = string_stability_experiment(cfg.build_law, cfg.n_list, cfg.build_disturbance, cfg.horizon,
                                      gain=gain, spread=cfg.spread if cfg.initial == "perturbed" else 0.0,
                                      w_bound=w_bound, seed=cfg.seed, step=cfg.step, backend=backend)
    if write:
        os.makedirs(out_dir, exist_ok=True)
        res.to_csv(os.path.join(out_dir, "string_stability.csv"))
    return res


PLOT_TEMPLATE = '''"""Plots for a result directory; run with python from inside it."""
import csv

import matplotlib.pyplot as plt

RANGES = {ranges!r}


def read(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in row] for row in rows[1:]]


fig, axes = plt.subplots(len(RANGES), 1, sharex=True, figsize=(7, 2.5 * len(RANGES)), squeeze=False)
for ax, r in zip(axes[:, 0], RANGES):
    try:
        header, data = read(f"trajectory_r{{r}}.csv")
    except FileNotFoundError:
        continue
    n = (len(header) - 2) // 4
    t = [row[0] for row in data]
    for i in range(n):
        ax.plot(t, [row[1 + i] for row in data], lw=0.8, label=f"x_{{i + 1}}")
    ax.set_ylabel(f"spacing (m), r={{r}}")
axes[-1, 0].set_xlabel("t (s)")
fig.tight_layout()
fig.savefig("spacings.png", dpi=150)

fig, axes = plt.subplots(len(RANGES), 1, sharex=True, figsize=(7, 2.5 * len(RANGES)), squeeze=False)
for ax, r in zip(axes[:, 0], RANGES):
    try:
        _, data = read(f"bounds_r{{r}}.csv")
    except FileNotFoundError:
        continue
    t = [row[0] for row in data]
    ax.plot(t, [row[1] for row in data], label="|x - e|_inf")
    ax.plot(t, [row[2] for row in data], "--", label="envelope")
    ax.set_yscale("log")
    ax.set_ylabel(f"r={{r}}")
    ax.legend(loc="upper right", fontsize=7)
axes[-1, 0].set_xlabel("t (s)")
fig.tight_layout()
fig.savefig("envelopes.png", dpi=150)
'''


def write_plot_script(out_dir, ranges) -> str:
    path = os.path.join(out_dir, "plot_results.py")
    with open(path, "w") as fh:
        fh.write(PLOT_TEMPLATE.format(ranges=tuple(ranges)))
    return path
