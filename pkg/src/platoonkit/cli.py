"""Command line entry point: ``platoonkit <command> <config.ini> [options]``."""
from __future__ import annotations

import argparse
import logging
import math
import sys

from . import kernels
from .config import ConfigError, load_config
from .experiments import (SUMMARY_COLUMNS, run_certify, run_experiment, run_string_stability, run_sweep)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="INI experiment file")
    p.add_argument("--seed", type=int, help="reference seed for forces and initial offsets")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--step", type=float, help="integration step in seconds")
    p.add_argument("--horizon", type=float, help="simulated time in seconds")
    p.add_argument("--jobs", type=int, help="ranges run concurrently")
    p.add_argument("--backend", choices=("cython", "python"), help="integration kernel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoonkit", description="Platoon contraction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "simulate every range and write trajectories and the summary"),
        ("sweep", "ranges at the configured gains and at each eps in [sweep] eps_list"),
        ("certify", "contraction certificates only"),
        ("verify", "simulate, calibrate eps and check the envelopes"),
        ("string-stability", "leader-velocity controller over [sweep] n_list"),
    ):
        _common(sub.add_parser(name, help=help_))
    return parser


def _print_summary(rows, stream) -> None:
    print(",".join(SUMMARY_COLUMNS), file=stream)
    for row in rows:
        cells = []
        for c in SUMMARY_COLUMNS:
            v = row[c]
            cells.append(str(v) if isinstance(v, int) else ("nan" if math.isnan(v) else f"{v:.6g}"))
        print(",".join(cells), file=stream)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg = cfg.override(seed=args.seed, step=args.step, horizon=args.horizon, jobs=args.jobs)
    out = args.out or cfg.out_dir
    logging.getLogger(__name__).info("kernel backend: %s", args.backend or kernels.BACKEND)
    kw = {"backend": args.backend}
    cmd = args.command
    if cmd == "string-stability":
        res = run_string_stability(cfg, out, **kw)
        print("n,eta,max_overshoot_m,bound_m")
        for row in res.rows:
            print(f"{row['n']},{row['eta']:.6g},{row['max_overshoot']:.6g},{res.bound:.6g}")
        return 0 if res.holds else 1
    if cmd == "certify":
        results = run_certify(cfg, out)
        _print_summary([r.summary_row() for r in results], sys.stdout)
        for r in results:
            if r.error:
                print(f"r={r.r}: {r.error}", file=sys.stderr)
        return 0 if all(r.error is None for r in results) else 1
    if cmd == "sweep":
        results = run_sweep(cfg, out, **kw)
    elif cmd == "simulate":
        results = [run_experiment(cfg, out, verify=False, calibrate=False, **kw)]
    else:
        results = [run_experiment(cfg, out, calibrate=True, **kw)]
    failed = False
    for res in results:
        if res.out_dir:
            print(f"# {res.out_dir}")
        if not hasattr(res, "ranges"):
            continue
        _print_summary(res.summary, sys.stdout)
        for r in res.ranges:
            if r.error:
                failed = True
                print(f"r={r.r}: {r.error}", file=sys.stderr)
            for kind, rep in r.reports.items():
                if not rep.holds:
                    failed = True
                print(f"r={r.r} eps={r.eps:.6g} {kind}: {'holds' if rep.holds else 'VIOLATED'} "
                      f"(max violation {rep.max_violation:.3g})")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
