"""Time the compiled kernels against the numpy fallback, and fast vs iterated flow.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from torusbfn.kernels import compiled_available, load_backend
from torusbfn.schedule import solve_concentration_targets
from torusbfn.torus_flow import flow_sample_fast, flow_sample_iterated


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(impl, rng):
    x = rng.uniform(0, 200, 200_000)
    kappa = rng.uniform(0.1, 500, 200_000)
    u = rng.random((3, kappa.size))
    y = rng.uniform(-np.pi, np.pi, (100, 2000))
    alphas = rng.uniform(0.5, 50, 100)
    zeros = np.zeros(2000)
    edges = np.linspace(-np.pi, np.pi, 4097)
    d = np.exp(20.0 * (np.cos(0.5 * (edges[1:] + edges[:-1])) - 1))
    cdf = np.concatenate([[0.0], np.cumsum(d)])
    cdf /= cdf[-1]
    us = np.sort(rng.random(32768))
    re = rng.normal(size=32768)
    im = rng.normal(size=32768)
    return {
        "log_i0 (2e5)": lambda: impl.log_i0(x),
        "ratio_i1_i0 (2e5)": lambda: impl.ratio_i1_i0(x),
        "vm_offsets (2e5)": lambda: impl.vm_offsets(kappa, u[0], u[1], u[2]),
        "fold_trajectory (100x2000)": lambda: impl.fold_trajectory(zeros, zeros, y, alphas),
        "mean_resultant (32768)": lambda: impl.mean_resultant(re, im, us, 20.0, edges, cdf),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", default=None)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    results = {"kernels": {}, "flow": {}}

    backends = ["python"] + (["compiled"] if compiled_available() else [])
    for name in backends:
        impl = load_backend(name)
        for case, fn in kernel_cases(impl, np.random.default_rng(0)).items():
            results["kernels"].setdefault(case, {})[name] = best_of(fn, args.repeat)

    # 10^3 trajectories at n = 100; alphas only need to be a realistic positive sequence
    alphas = np.diff(np.concatenate([[0.0], solve_concentration_targets(1000.0, 100)]))
    x = np.full(1000, -0.3 * np.pi)
    results["flow"]["fast"] = best_of(lambda: flow_sample_fast(x, alphas, rng), args.repeat)
    results["flow"]["iterated"] = best_of(lambda: flow_sample_iterated(x, alphas, rng), args.repeat)

    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for case, row in results["kernels"].items():
        line = f"{case:32s}" + "".join(f"{row[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{row['python'] / row['compiled']:11.1f}x"
        print(line)
    fast, it = results["flow"]["fast"], results["flow"]["iterated"]
    print(f"\nflow 1e3 trajectories, n=100: fast {fast * 1e3:.1f} ms, iterated {it * 1e3:.1f} ms, ratio {it / fast:.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
