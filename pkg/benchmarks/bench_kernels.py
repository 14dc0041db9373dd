"""Compare the compiled and the numpy RK4 kernels on the reference scenario.

    python benchmarks/bench_kernels.py [--horizon 10] [--repeat 3]
"""
import argparse
import time

import numpy as np

from platoonkit import kernels
from platoonkit.dynamics import PlatoonConfig, simulate
from platoonkit.formation import TanhAffineLaw
from platoonkit.scenarios import perturbed_start, reference_disturbance


def timed(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizon", type=float, default=10.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--r", type=int, default=3)
    args = ap.parse_args()

    law = TanhAffineLaw(0.5, 0.18, 0.18, 0.1, np.full(10, 10.0))
    cfg = PlatoonConfig(law, args.r, 5.0)
    dist = reference_disturbance(0, 10)
    ic = perturbed_start(law, 15.0, 0)
    backends = kernels.available()
    print(f"backends: {', '.join(backends)}; horizon {args.horizon:g} s, step 1e-3 s")
    results = {}
    for frame in ("xy", "pv"):
        for name in backends:
            dt, traj = timed(lambda: simulate(cfg, dist, ic.x0, ic.v, args.horizon, frame=frame, backend=name),
                             args.repeat)
            results[frame, name] = traj
            steps = args.horizon / 1e-3
            print(f"{frame:>3} {name:>7}: {dt:8.3f} s  ({steps / dt / 1e3:9.1f} k steps/s)")
        if len(backends) == 2:
            a, b = (results[frame, n] for n in backends)
            print(f"{frame:>3} max |dx| between backends: {np.max(np.abs(a.x - b.x)):.2e}")


if __name__ == "__main__":
    main()
