"""Compiled vs numpy kernels on workloads sized like the real pipeline.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import math
import timeit

import numpy as np

from zonetrap.io import load_config
from zonetrap.kernels import get_backend


def workloads(layout):
    rng = np.random.default_rng(0)
    rects, owner = layout.rects, layout.owner
    n_src = int(owner.max()) + 1
    pts = np.column_stack([rng.uniform(-500e-6, 500e-6, 400), rng.uniform(-20e-6, 20e-6, 400),
                           np.full(400, layout.ion_height)])
    x = np.linspace(-500e-6, 500e-6, 2000)
    volts = rng.normal(size=(x.size, n_src))
    table = rng.normal(0, 0.1, size=(50, n_src))
    kv = rng.normal(0, 2 * math.pi * 300e3, 40000)
    starts = np.arange(0, 10000, 500)
    det = np.linspace(-2 * math.pi * 1e6, 2 * math.pi * 1e6, 41)
    return {
        "patch_eval (400 points)": lambda k: k.patch_eval(rects, pts),
        "axial_profile (2000 rows)": lambda k: k.axial_profile(rects, owner, volts, x, 0.0, layout.ion_height),
        "verlet_axial (20k steps)": lambda k: k.verlet_axial(rects, owner, table, 1e-6, -187.5e-6, 0.0, 1e-9,
                                                              20000, layout.charge_to_mass, 0.0, layout.ion_height,
                                                              10, -1.0, 1.0),
        "probe_scan (20 x 41, 30k steps)": lambda k: k.probe_scan(kv, 1e-9, starts, 30000, det, 2 * math.pi * 15e3),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    layout = load_config().layout
    py = get_backend("python")
    try:
        cy = get_backend("compiled")
    except ImportError:
        cy = None
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'kernel':34} {'numpy [ms]':>11} {'compiled [ms]':>14} {'speed-up':>9}")
    for name, fn in workloads(layout).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:34} {t_py:11.2f}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:34} {t_py:11.2f} {t_cy:14.2f} {t_py / t_cy:8.1f}x")


if __name__ == "__main__":
    main()
