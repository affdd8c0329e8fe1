"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json PATH]

Both backends receive identical inputs; the script also reports the largest
output difference so a speed win never hides a correctness regression.
"""
import argparse
import json
import sys
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from stgdat import kernels


def _cases(rng):
    n, T = 2000, 12
    s0 = np.column_stack([rng.normal(0, 20, (n, 2)), rng.uniform(-np.pi, np.pi, n), rng.uniform(0, 15, n),
                          rng.uniform(-0.3, 0.3, n)])
    ctrl = rng.normal(0, 1, (n, T, 2))
    parts = np.column_stack([np.zeros((200_000, 2)), np.full(200_000, 0.2), np.full(200_000, 8.0),
                             np.full(200_000, 0.03)])
    eps = rng.standard_normal((200_000, 2))
    chol = np.array([[0.01, 0.0], [0.0, 0.01]])
    grid = rng.random((120, 120, 3))
    centers = rng.uniform(-30, 30, (400, 2))
    heads = rng.uniform(-np.pi, np.pi, 400)
    return {
        "bicycle_rollout 2000x12": lambda impl: kernels.bicycle_rollout(s0, ctrl, 0.4, 1.5, impl=impl),
        "mc_step 200k particles": lambda impl: kernels.mc_step(parts.copy(), [0.3, -0.05], chol, eps, 5.0, 0.6,
                                                               0.4, 1.5, impl=impl),
        "bilinear_sample 400 crops 32x32": lambda impl: kernels.bilinear_sample(grid, (-60.0, -60.0), 1.0, centers,
                                                                                heads, 32, 32, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions per case (best is reported)")
    ap.add_argument("--json", default=None, help="optional path for machine-readable results")
    args = ap.parse_args(argv)
    found = kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; only the numpy fallback is available", file=sys.stderr)
    rows = []
    with threadpool_limits(1):
        for name, fn in _cases(np.random.default_rng(0)).items():
            outs, times = {}, {}
            for bname, impl in found.items():
                outs[bname] = fn(impl)
                times[bname] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
            row = {"case": name, **{f"{b}_s": t for b, t in times.items()}}
            if len(outs) == 2:
                row["speedup"] = times["python"] / times["cython"]
                row["max_abs_diff"] = float(np.abs(outs["python"] - outs["cython"]).max())
            rows.append(row)
    w = max(len(r["case"]) for r in rows)
    print(f"{'case':<{w}}  {'python [s]':>11}  {'cython [s]':>11}  {'speedup':>8}  {'max |diff|':>10}")
    for r in rows:
        cy = f"{r['cython_s']:.5f}" if "cython_s" in r else "n/a"
        sp = f"{r['speedup']:.1f}x" if "speedup" in r else "n/a"
        df = f"{r['max_abs_diff']:.1e}" if "max_abs_diff" in r else "n/a"
        print(f"{r['case']:<{w}}  {r['python_s']:>11.5f}  {cy:>11}  {sp:>8}  {df:>10}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
