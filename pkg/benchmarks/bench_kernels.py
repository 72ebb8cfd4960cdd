"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--steps 5000]

Times the vectorized potential, one MALA chain and one HMC chain on a
benchmark field (n=100, d=50, q=0.2) with each available backend.
"""

import argparse
import math
import timeit

import numpy as np

from slabdecomp import _backend
from slabdecomp.experiments import setting_one
from slabdecomp.potential import Decomposition, field_model, potential_terms
from slabdecomp.priors import LaplaceSlab, SpikeSlabPrior, simulate
from slabdecomp.samplers import HMC, MALA, ChainConfig, run_chain


def workloads(steps):
    kw = setting_one(n=100, d=50, q=0.2)
    _, inst = simulate(kw["prior"], kw["design"], 100, 50, kw["noise_std"], 0)
    dec = Decomposition.from_instance(inst)
    model = field_model(dec, kw["prior"])
    laplace = SpikeSlabPrior(0.3, LaplaceSlab(math.sqrt(2.0)))
    xs = np.linspace(-30, 30, 100_000)
    return {
        "potential (Laplace, 1e5 points)": lambda: potential_terms(laplace, 2.0, xs),
        f"MALA chain ({steps} steps, d=50)":
            lambda: run_chain(model, ChainConfig(MALA(0.2), total_steps=steps, burn_in=0)),
        f"HMC chain ({steps // 10} steps x 10 leapfrog, d=50)":
            lambda: run_chain(model, ChainConfig(HMC(0.4, 10), total_steps=steps // 10, burn_in=0)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--steps", type=int, default=5000)
    args = parser.parse_args()

    names = _backend.available()
    results = {}
    for name in names:
        _backend.kernels = _backend.get(name)
        for label, fn in workloads(args.steps).items():
            results[label, name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))

    width = max(len(label) for label, _ in results)
    print(f"{'workload':<{width}}  " + "  ".join(f"{n:>10}" for n in names)
          + ("     speedup" if len(names) > 1 else ""))
    for label in dict.fromkeys(label for label, _ in results):
        times = [results[label, n] for n in names]
        row = f"{label:<{width}}  " + "  ".join(f"{t:>9.4f}s" for t in times)
        if len(names) > 1:
            row += f"  {times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
