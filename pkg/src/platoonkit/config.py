"""INI experiment configuration.

Sections and keys (defaults in brackets)::

    [platoon]   n [10], spacing [10.0], mass [1500.0]
    [law]       kind = tanh_affine | linear | graded_linear [tanh_affine]
                tanh_affine: ell, lp, lf, b;  linear: lp, lf;
                graded_linear: base [1.0], slope [0.125], follower [0.5]
    [gains]     k [5.0]
    [scenario]  leader = reference | constant [reference], leader_speed [15.0]
                disturbance = reference | none [reference], amplitude [3.0],
                decay [0.02], scale [1.0], initial = perturbed | equilibrium
                [perturbed], spread [1.0], horizon [100.0], step [auto],
                output_interval [0.01], seed [0], controller = range | string
                [range]
    [sweep]     r_list [1, 3, 10], eps_list [], n_list [5, 10, 20],
                calibrate [no], jobs [1]
    [output]    dir [runs], plot_script [yes]

Vector-valued law and gain entries take a single number or one value per
vehicle separated by commas or whitespace.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import CONTROLLERS, PlatoonConfig
from .formation import FormationLaw, LinearLaw, TanhAffineLaw
from .scenarios import (DISTURBANCE_AMPLITUDE, DISTURBANCE_DECAY, InitialCondition, PiecewiseLinearProfile,
                        equilibrium_start, perturbed_start, quiet_disturbance, reference_disturbance,
                        reference_leader_profile)

SECTIONS = ("platoon", "law", "gains", "scenario", "sweep", "output")
LAW_KEYS = {
    "tanh_affine": ("ell", "lp", "lf", "b"),
    "linear": ("lp", "lf"),
    "graded_linear": ("base", "slope", "follower"),
}


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, section=None, key=None, line=None):
        self.section, self.key, self.line = section, key, line
        if path is not None:
            where = str(path) if line is None else f"{path}:{line}"
        else:
            where = "" if line is None else f"line {line}"
        loc = f"[{section}] {key}" if key else (f"[{section}]" if section else "")
        super().__init__(" ".join(p for p in (where, loc, message) if p))


@dataclass(frozen=True)
class LawSpec:
    kind: str = "tanh_affine"
    params: dict = field(default_factory=lambda: {"ell": (0.5,), "lp": (0.18,), "lf": (0.18,), "b": (0.1,)})

    def build(self, n: int, spacing) -> FormationLaw:
        e = np.broadcast_to(np.asarray(spacing, dtype=float), (n,)).copy()
        p = {k: _fit(v, n) for k, v in self.params.items()}
        if self.kind == "tanh_affine":
            return TanhAffineLaw(p["ell"], p["lp"], p["lf"], p["b"], e)
        if self.kind == "linear":
            return LinearLaw(p["lp"], p["lf"], e)
        if self.kind == "graded_linear":
            lp = float(p["base"]) + float(p["slope"]) * np.arange(n)
            return LinearLaw(lp, np.full(n, float(p["follower"])), e)
        raise ValueError(f"unknown law kind {self.kind!r}")


def _fit(v, n):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0 or arr.size == 1:
        return float(arr.reshape(-1)[0])
    if arr.size != n:
        raise ValueError(f"per-vehicle list has {arr.size} entries, expected {n}")
    return arr


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 10
    spacing: tuple = (10.0,)
    mass: tuple = (1500.0,)
    law: LawSpec = field(default_factory=LawSpec)
    gains: tuple = (5.0,)
    leader: str = "reference"
    leader_speed: float = 15.0
    disturbance: str = "reference"
    amplitude: float = DISTURBANCE_AMPLITUDE
    decay: float = DISTURBANCE_DECAY
    scale: float = 1.0
    initial: str = "perturbed"
    spread: float = 1.0
    horizon: float = 100.0
    step: float | None = None
    output_interval: float = 0.01
    seed: int = 0
    controller: str = "range"
    r_list: tuple = (1, 3, 10)
    eps_list: tuple = ()
    n_list: tuple = (5, 10, 20)
    calibrate: bool = False
    jobs: int = 1
    out_dir: str = "runs"
    plot_script: bool = True
    source: str | None = None

    def override(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def build_law(self, n: int | None = None) -> FormationLaw:
        n = self.n if n is None else n
        return self.law.build(n, _fit(self.spacing, n))

    def platoon(self, r: int, n: int | None = None) -> PlatoonConfig:
        n = self.n if n is None else n
        return PlatoonConfig(self.build_law(n), r, _fit(self.gains, n), _fit(self.mass, n))

    def leader_profile(self) -> PiecewiseLinearProfile:
        if self.leader == "reference":
            return reference_leader_profile()
        return PiecewiseLinearProfile([(0.0, self.leader_speed, 0.0)])

    def build_disturbance(self, n: int | None = None):
        n = self.n if n is None else n
        if self.disturbance == "none":
            dist = quiet_disturbance(n, self.leader_speed)
            return replace(dist, leader=self.leader_profile(), scale=self.scale)
        return reference_disturbance(self.seed, n, self.amplitude, self.decay, self.leader_profile(), self.scale)

    def initial_condition(self, law: FormationLaw) -> InitialCondition:
        v0 = float(self.leader_profile().value(0.0))
        if self.initial == "equilibrium":
            return equilibrium_start(law, v0)
        return perturbed_start(law, v0, self.seed, self.spread)


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
        elif section and line and line[0] not in "#;":
            key = re.split(r"[=:]", line, 1)[0].strip().lower()
            out.setdefault((section, key), no)
    return out


def _numbers(raw: str) -> list[float]:
    parts = [p for p in re.split(r"[,\s]+", raw.strip()) if p]
    return [float(p) for p in parts]


def parse_config(text: str, path=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], path, line=line) from exc
    lines = _key_lines(text)
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section; expected one of {', '.join(SECTIONS)}", path, sec,
                              line=next((ln for (s, _), ln in lines.items() if s == sec), None))
    used = set()

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        used.add((section, key))
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value {raw!r}: {exc}", path, section, key, lines.get((section, key))) from exc

    def vec(raw):
        vals = _numbers(raw)
        if not vals:
            raise ValueError("expected at least one number")
        return tuple(vals)

    def ints(raw):
        vals = _numbers(raw)
        if any(v != int(v) for v in vals):
            raise ValueError("expected integers")
        return tuple(int(v) for v in vals)

    def choice(options):
        def conv(raw):
            v = raw.strip().lower()
            if v not in options:
                raise ValueError(f"choose from {', '.join(options)}")
            return v
        return conv

    def boolean(raw):
        v = raw.strip().lower()
        if v in ("1", "yes", "true", "on"):
            return True
        if v in ("0", "no", "false", "off"):
            return False
        raise ValueError("expected yes/no")

    d = ExperimentConfig()
    kind = get("law", "kind", choice(tuple(LAW_KEYS)), d.law.kind)
    defaults = d.law.params if kind == d.law.kind else {"base": (1.0,), "slope": (0.125,), "follower": (0.5,)}
    params = {}
    for key in LAW_KEYS[kind]:
        val = get("law", key, vec, None)
        if val is None:
            if key not in defaults:
                raise ConfigError("missing required key", path, "law", key)
            val = defaults[key]
        params[key] = val
    cfg = ExperimentConfig(
        n=get("platoon", "n", int, d.n),
        spacing=get("platoon", "spacing", vec, d.spacing),
        mass=get("platoon", "mass", vec, d.mass),
        law=LawSpec(kind, params),
        gains=get("gains", "k", vec, d.gains),
        leader=get("scenario", "leader", choice(("reference", "constant")), d.leader),
        leader_speed=get("scenario", "leader_speed", float, d.leader_speed),
        disturbance=get("scenario", "disturbance", choice(("reference", "none")), d.disturbance),
        amplitude=get("scenario", "amplitude", float, d.amplitude),
        decay=get("scenario", "decay", float, d.decay),
        scale=get("scenario", "scale", float, d.scale),
        initial=get("scenario", "initial", choice(("perturbed", "equilibrium")), d.initial),
        spread=get("scenario", "spread", float, d.spread),
        horizon=get("scenario", "horizon", float, d.horizon),
        step=get("scenario", "step", lambda s: None if s.strip().lower() in ("", "auto") else float(s), d.step),
        output_interval=get("scenario", "output_interval", float, d.output_interval),
        seed=get("scenario", "seed", int, d.seed),
        controller=get("scenario", "controller", choice(CONTROLLERS), d.controller),
        r_list=get("sweep", "r_list", ints, d.r_list),
        eps_list=get("sweep", "eps_list", lambda s: tuple(_numbers(s)), d.eps_list),
        n_list=get("sweep", "n_list", ints, d.n_list),
        calibrate=get("sweep", "calibrate", boolean, d.calibrate),
        jobs=get("sweep", "jobs", int, d.jobs),
        out_dir=get("output", "dir", str.strip, d.out_dir),
        plot_script=get("output", "plot_script", boolean, d.plot_script),
        source=None if path is None else str(path),
    )
    for sec in cp.sections():
        for key in cp.options(sec):
            if (sec, key) not in used:
                raise ConfigError("unknown key", path, sec, key, lines.get((sec, key)))
    _validate(cfg, path, lines)
    return cfg


def _validate(cfg: ExperimentConfig, path, lines):
    def fail(section, key, msg):
        raise ConfigError(msg, path, section, key, lines.get((section, key)))

    if cfg.n < 1:
        fail("platoon", "n", "need at least one follower")
    for r in cfg.r_list:
        if not 1 <= r <= cfg.n:
            fail("sweep", "r_list", f"range {r} outside 1..{cfg.n}")
    if any(e <= 0 for e in cfg.eps_list):
        fail("sweep", "eps_list", "eps values must be positive")
    if any(n < 1 for n in cfg.n_list):
        fail("sweep", "n_list", "platoon lengths must be positive")
    if cfg.jobs < 1:
        fail("sweep", "jobs", "need at least one worker")
    for key, val in (("horizon", cfg.horizon), ("output_interval", cfg.output_interval), ("spread", cfg.spread)):
        if not val > 0:
            fail("scenario", key, "must be positive")
    if cfg.step is not None and not cfg.step > 0:
        fail("scenario", "step", "must be positive")
    if cfg.seed < 0:
        fail("scenario", "seed", "seed must be nonnegative")
    for section, key, val in (("platoon", "spacing", cfg.spacing), ("platoon", "mass", cfg.mass),
                              ("gains", "k", cfg.gains)):
        try:
            _fit(val, cfg.n)
        except ValueError as exc:
            fail(section, key, str(exc))
    try:
        cfg.build_law()
    except ValueError as exc:
        fail("law", None, str(exc))
    try:
        cfg.platoon(cfg.r_list[0] if cfg.r_list else 1)
    except ValueError as exc:
        section, key = ("gains", "k") if "gain" in str(exc) else ("platoon", "mass")
        fail(section, key, str(exc))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), path)
