"""Compiled vs pure-Python timing for the two 1D kernels.

    python3 benchmarks/bench_flow.py [--n 8 16 32 64] [--repeat 3]
"""

import argparse
import time

import numpy as np

from randac import kernels
from randac.field import DistributionSpec, sample_field
from randac.grid_energy import GridSpec, cell_field, nodal_field
from randac.potential import PotentialSpec
from randac.solver import SolverOptions, boundary_level


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, nargs="+", default=[8, 16, 32, 64])
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--levels", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    pot = PotentialSpec()
    print(f"{'kernel':<10} {'n':>4} {'nodes':>6} {'cython [s]':>11} {'python [s]':>11} {'speedup':>8} {'max diff':>10}")
    for n in args.n:
        grid = GridSpec(1, n, 8, "dirichlet_plus", 1.0)
        field = sample_field(1, n, DistributionSpec(), seed=n)
        gbar = nodal_field(grid, cell_field(grid, field))
        S = boundary_level(pot, args.theta, field.gmax)
        ro = SolverOptions().resolve(pot, args.theta, field.gmax, 1)
        # start in the wrong well so the flow has to carry the profile across
        v0 = np.full(grid.shape, -S)
        v0[[0, -1]] = S

        def flow(backend):
            return kernels.run_flow(v0, gbar, grid.h, ro.time_step, args.theta, pot, True, ro.residual_tol,
                                    0.0, ro.max_iters, backend=backend)[0]

        def chain(backend):
            return kernels.run_chain_min(gbar, grid.h, args.theta, pot, S, args.levels, S, S, True, True,
                                         backend=backend)

        for name, fn in (("flow", flow), ("chain_min", chain)):
            tc, vc = best_of(lambda: fn("cython"), args.repeat)
            tp, vp = best_of(lambda: fn("python"), 1 if name == "chain_min" else args.repeat)
            diff = float(np.max(np.abs(vc - vp)))
            print(f"{name:<10} {n:>4} {grid.shape[0]:>6} {tc:>11.4f} {tp:>11.4f} {tp / tc:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
