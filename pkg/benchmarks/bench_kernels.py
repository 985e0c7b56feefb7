"""Time the Euler-Maruyama kernel backends on a fixed workload.

Usage::

    python3 benchmarks/bench_kernels.py [--paths 4096] [--steps 512] [--repeat 3]

Normals are drawn once up front so only the kernel itself is timed.
"""
import argparse
import time

import numpy as np

from mixedlq import kernels, problems
from mixedlq.riccati import solve_riccati
from mixedlq.simulate import AffinePolicy, _fold, draw_normals, simulate_mean
from mixedlq.riccati import step_frames
from mixedlq.synthesis import build_gain_schedule


def workload(name, steps, n_paths):
    spec = problems.REFERENCE[name]()
    sol = solve_riccati(spec, steps, classic=False)
    pol = AffinePolicy.from_gains(build_gain_schedule(spec, sol.grid, sol))
    mean = simulate_mean(spec, pol)
    folded = _fold(spec, pol, step_frames(spec, pol.grid), mean)[:6]
    xi = draw_normals(0, 0, n_paths, steps, spec.dims.d)
    return spec, folded, xi, pol.grid.dt


def bench(kernel, spec, folded, xi, dt, repeat):
    n_paths, steps, _ = xi.shape
    best = np.inf
    for _ in range(repeat):
        paths = np.empty((n_paths, steps + 1, spec.dims.n))
        u2 = np.empty((n_paths, steps, spec.dims.l2))
        t0 = time.perf_counter()
        code = kernel(*folded, np.ascontiguousarray(spec.x0), xi, dt, paths, u2)
        best = min(best, time.perf_counter() - t0)
        assert code == -1
    return best, paths


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=4096)
    ap.add_argument("--steps", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"backends available: {', '.join(kernels.available())}")
    for name in ("tanh", "regular_2x2"):
        spec, folded, xi, dt = workload(name, args.steps, args.paths)
        results = {}
        for backend in kernels.available():
            results[backend] = bench(kernels.get_kernel(backend), spec, folded, xi, dt,
                                     args.repeat)
        line = ", ".join(f"{b}: {t * 1e3:8.1f} ms" for b, (t, _) in results.items())
        if len(results) == 2:
            (tp, pp), (tc, pc) = results["python"], results["cython"]
            line += f"  speedup {tp / tc:5.2f}x  max|diff| {np.abs(pp - pc).max():.1e}"
        print(f"{name:12s} P={args.paths} N={args.steps}  {line}")


if __name__ == "__main__":
    main()
