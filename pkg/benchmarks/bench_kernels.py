"""Time the numba and numpy equilibrium kernels on the same batch of markets.

    python3 benchmarks/bench_kernels.py [--instances 400] [--agents 20] [--goods 3] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mlmarkets import _kernels
from mlmarkets.core import UtilitySpec, utility_arrays


def make_batch(n_instances, n_agents, n_goods, seed=0):
    rng = np.random.default_rng(seed)
    beliefs = rng.dirichlet(np.ones(n_goods), size=(n_instances, n_agents))
    wealths = rng.dirichlet(np.ones(n_agents))
    etas = 1.0 + rng.gamma(3.0, 1.0, size=n_agents)
    families, etas = utility_arrays([UtilitySpec.isoelastic(e) for e in etas])
    return beliefs, wealths, families, etas


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--instances", type=int, default=400)
    ap.add_argument("--agents", type=int, default=20)
    ap.add_argument("--goods", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    beliefs, wealths, families, etas = make_batch(args.instances, args.agents, args.goods)
    results = {}
    for name, impl in _kernels.implementations().items():
        run = lambda impl=impl: impl.solve_many(beliefs, wealths, families, etas, 0.1, 1e-10, 10000, 0)
        run()  # warm-up, includes jit compilation for numba
        results[name] = best_time(run, args.repeat)

    print(f"{args.instances} markets, {args.agents} agents, {args.goods} goods (best of {args.repeat})")
    for name, (t, (C, n_acc, _)) in results.items():
        print(f"  {name:<6} {t * 1e3:10.2f} ms   mean accepted steps {n_acc.mean():.1f}")
    if len(results) == 2:
        (_, (t_nb, (C_nb, _, _))), (_, (t_np, (C_np, _, _))) = sorted(results.items())
        print(f"  speedup numba/numpy: {t_np / t_nb:.1f}x   max |dC| = {np.max(np.abs(C_nb - C_np)):.2e}")


if __name__ == "__main__":
    main()
