"""Time the numba and numpy kernel paths side by side.

    python benchmarks/bench_kernels.py [--repeat N]

Also times one full odometry run under each path (each path in its own
subprocess, since the choice is fixed at import time by DICP_DISABLE_NUMBA).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dicp import _kernels, sim

ODOMETRY_SNIPPET = """
import time
from dicp import _kernels, scenarios
from dicp.solver import SolverParams, odometry
seq = scenarios.build(scenarios.preset("straight_walls", n_scans=10))
t0 = time.perf_counter()
odometry(seq.scans, SolverParams())
print(_kernels.USE_NUMBA, time.perf_counter() - t0)
"""


def _best(fn, repeat):
    fn()  # warm-up, includes numba compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    n = 20000
    rows = (rng.normal(size=(n, 6)), rng.normal(size=n), rng.uniform(size=n),
            rng.normal(size=(n, 6)), rng.normal(size=n), rng.uniform(size=n), 0.01)
    rects, _, _ = sim.make_scene("feature_rich").surfaces_at(0.0)
    geom = sim._compile(rects)
    dirs = sim.ScanPattern().directions()
    ray_args = (np.zeros(3), dirs, *geom, 300.0)

    print(f"{'kernel':<28}{'numpy (ms)':>12}{'numba (ms)':>12}")
    for name, np_fn, nb_fn, a in (
            (f"accumulate ({n} rows)", _kernels.accumulate_numpy, _kernels.accumulate_numba, rows),
            (f"raycast ({len(dirs)} rays, {len(rects)} rects)", _kernels.raycast_numpy,
             _kernels.raycast_numba, ray_args)):
        t_np = _best(lambda: np_fn(*a), args.repeat) * 1e3
        t_nb = _best(lambda: nb_fn(*a), args.repeat) * 1e3 if nb_fn is not None else float("nan")
        print(f"{name:<28}{t_np:12.2f}{t_nb:12.2f}")

    for flag in ("1", "0"):
        env = dict(os.environ, DICP_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", ODOMETRY_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        label = "numba" if out[0] == "True" else "numpy"
        print(f"odometry, 10 scans, {label}: {float(out[1]):.2f} s")


if __name__ == "__main__":
    main()
