#!/usr/bin/env python3
"""Compare the compiled kernel backend against the numpy reference.

Two angles:

* kernel microbenchmarks (SpMV, fused vector updates) timed in-process
  through ``mrsolve.kernels.get_backend``;
* a full AMG-preconditioned BiCGStab solve timed in a subprocess per
  backend, since the active backend is chosen once at import time via
  the ``MRSOLVE_KERNELS`` environment variable.

Both backends are bitwise identical by contract, so only time differs.

Usage: python3 benchmarks/backend_compare.py [--grid N] [--nrhs M]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from mrsolve import kernels
from mrsolve.io import gen_poisson3d

SOLVE_SNIPPET = """
import json, time
from mrsolve import kernels
from mrsolve.core import BlockVector
from mrsolve.io import gen_poisson3d
from mrsolve.params import ParamTree
from mrsolve.solvers import prepare

grid, nrhs = {grid}, {nrhs}
A, rhs = gen_poisson3d(grid, grid, grid)
tree = ParamTree()
tree.add_map("solver", {{"method": "BiCGStab", "rel_tolerance": "1e-8",
                         "max_iters": "100"}})
tree.add_map("preconditioner", {{"method": "MultiGrid"}})
tree.set_defaults()
cs = prepare(tree, A)
B = BlockVector.from_array(rhs.data.repeat(nrhs).reshape(-1, nrhs))
X = BlockVector.zeros(grid ** 3, nrhs)
t0 = time.perf_counter()
stats = cs.run(B, X)
print(json.dumps({{"backend": kernels.BACKEND,
                   "t_solve_s": time.perf_counter() - t0,
                   "iterations": stats.iterations,
                   "converged": bool(stats.all_converged)}}))
"""


def time_call(fn, *args, reps=5):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_micro(grid: int, nrhs: int):
    A, _ = gen_poisson3d(grid, grid, grid)
    n = grid ** 3
    rng = np.random.default_rng(7)
    x = rng.standard_normal((n, nrhs))
    y = np.empty_like(x)
    u, w = rng.standard_normal((2, n, nrhs))
    a, b, c = rng.standard_normal((3, nrhs))
    rows = []
    for name in ("cython", "python"):
        try:
            be = kernels.get_backend(name)
        except ImportError:
            print(f"  {name}: extension not built, skipping", file=sys.stderr)
            continue
        t_spmv = time_call(lambda: be.csr_spmv(
            A.row_ptr, A.col_idx, A.values, x, y, be.MODE_ASSIGN))
        t_fused = time_call(lambda: be.fused_update_dot(a, u, b, y))
        t_dot2 = time_call(lambda: be.fused_update_dot2(y, u, c, w, x))
        rows.append((name, t_spmv, t_fused, t_dot2))
    return rows


def full_solve(grid: int, nrhs: int):
    results = []
    for name in ("cython", "python"):
        env = dict(os.environ, MRSOLVE_KERNELS=name)
        proc = subprocess.run(
            [sys.executable, "-c", SOLVE_SNIPPET.format(grid=grid, nrhs=nrhs)],
            env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"  {name}: solve failed\n{proc.stderr}", file=sys.stderr)
            continue
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return results


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=32,
                    help="Poisson grid edge (default 32)")
    ap.add_argument("--nrhs", type=int, default=8,
                    help="right-hand sides (default 8)")
    args = ap.parse_args(argv)

    print(f"Poisson {args.grid}^3, m={args.nrhs}\n")
    print("kernel microbenchmarks (best of 5, seconds):")
    print(f"  {'backend':<8} {'spmv':>10} {'update_dot':>12} {'update_dot2':>12}")
    micro = kernel_micro(args.grid, args.nrhs)
    for name, t1, t2, t3 in micro:
        print(f"  {name:<8} {t1:>10.4f} {t2:>12.4f} {t3:>12.4f}")
    if len(micro) == 2:
        print(f"  spmv speedup (python/cython): "
              f"{micro[1][1] / micro[0][1]:.1f}x")

    print("\nfull solve, AMG-preconditioned BiCGStab:")
    solves = full_solve(args.grid, args.nrhs)
    for r in solves:
        print(f"  {r['backend']:<8} {r['t_solve_s']:>8.3f} s  "
              f"{r['iterations']} iters  converged={r['converged']}")
    if len(solves) == 2 and solves[0]["backend"] == "cython":
        print(f"  solve speedup (python/cython): "
              f"{solves[1]['t_solve_s'] / solves[0]['t_solve_s']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
