"""Benchmark: compiled kernels vs the pure-numpy fallback.

Times the two welfare-objective kernels on workloads shaped like the Monte
Carlo study's inner loop (one value+gradient evaluation per call), plus a
full policy fit through each implementation. Run:

    python benchmarks/bench_kernels.py [--csv out.csv]
"""
import argparse
import csv
import sys
import time

import numpy as np

from randpolicy._kernels import (IMPLEMENTATION, pure_gaussian_objective,
                                 pure_softmax_objective)

try:
    from randpolicy._kernels import _core
except ImportError:
    _core = None


def time_call(fn, args, repeat=7, inner=50):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / inner)
    return best


def softmax_args(rng, n, p=3, arms=2, with_table=False):
    Phi = np.ascontiguousarray(rng.standard_normal((n, p)))
    theta = np.ascontiguousarray(0.3 * rng.standard_normal((arms - 1, p)))
    arm = np.ascontiguousarray(rng.integers(0, arms, n))
    a = np.ascontiguousarray(rng.standard_normal(n))
    M = np.ascontiguousarray(rng.standard_normal((n, arms))) if with_table \
        else None
    return Phi, theta, arm, a, M


def gaussian_args(rng, n, p=3, q=64, with_table=True):
    Phi = np.ascontiguousarray(rng.standard_normal((n, p)))
    theta = np.ascontiguousarray(0.3 * rng.standard_normal(p))
    t = np.ascontiguousarray(rng.uniform(-1, 2, n))
    a = np.ascontiguousarray(rng.standard_normal(n))
    if not with_table:
        return Phi, theta, t, a, 0.35, None, None, None
    Dt = np.ascontiguousarray(rng.standard_normal((n, q)))
    tq = np.ascontiguousarray(np.linspace(-1, 2, q))
    wq = np.ascontiguousarray(rng.random(q))
    return Phi, theta, t, a, 0.35, Dt, tq, wq


def bench_fit(pure: bool):
    """A fit-shaped workload: the fixed sequence of objective evaluations a
    doubly robust policy search makes, independent of optimizer path."""
    import randpolicy.simulate as sim
    import randpolicy.welfare as welfare
    saved = welfare.gaussian_objective
    if pure:
        welfare.gaussian_objective = pure_gaussian_objective
    elif _core is not None:
        welfare.gaussian_objective = _core.gaussian_objective
    try:
        spec = sim.dose_benchmark()
        data, _ = sim.run_dgp(spec, 1500, 7)
        fam = sim.benchmark_family()
        study = sim.benchmark_study()
        states = np.random.SeedSequence(7).generate_state(2)
        from randpolicy.nuisance import crossfit
        from randpolicy.basis import (shifted_legendre_basis,
                                      tensor_polynomial_basis)
        nuis = crossfit(data, 2, int(states[0]),
                        shifted_legendre_basis(data.space, 11),
                        tensor_polynomial_basis(2, (2, 2), max_functions=6),
                        shifted_legendre_basis(data.space, 3),
                        tensor_polynomial_basis(2, (0, 0)))
        obj = welfare.build_objective("dr", data, fam, nuisances=nuis)
        rng = np.random.default_rng(1)
        thetas = [rng.uniform(-1, 1, 3) for _ in range(300)]
        start = time.perf_counter()
        for theta in thetas:
            obj.value_grad(theta)
        return (time.perf_counter() - start) / len(thetas)
    finally:
        welfare.gaussian_objective = saved


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--csv", help="also write results as CSV")
    opts = parser.parse_args()
    if _core is None:
        print("compiled kernel unavailable; timing the fallback only")
    rng = np.random.default_rng(0)
    rows = []
    for n in (500, 1500, 10_000):
        for label, pure_fn, core_fn, args in (
            ("softmax", pure_softmax_objective,
             getattr(_core, "softmax_objective", None),
             softmax_args(rng, n)),
            ("softmax+table", pure_softmax_objective,
             getattr(_core, "softmax_objective", None),
             softmax_args(rng, n, with_table=True)),
            ("gaussian+table", pure_gaussian_objective,
             getattr(_core, "gaussian_objective", None),
             gaussian_args(rng, n)),
        ):
            t_pure = time_call(pure_fn, args)
            t_core = time_call(core_fn, args) if core_fn else float("nan")
            rows.append((label, n, t_pure * 1e6, t_core * 1e6,
                         t_pure / t_core if core_fn else float("nan")))
    print(f"active implementation: {IMPLEMENTATION}")
    print(f"{'kernel':<16}{'n':>7}{'pure us':>12}{'compiled us':>13}"
          f"{'speedup':>9}")
    for label, n, tp, tc, sp in rows:
        print(f"{label:<16}{n:>7}{tp:>12.1f}{tc:>13.1f}{sp:>9.2f}")
    fit_rows = []
    if _core is not None:
        fit_pure = bench_fit(pure=True)
        fit_core = bench_fit(pure=False)
        fit_rows.append(("dr_eval_n1500", 1500, fit_pure * 1e3, fit_core * 1e3,
                         fit_pure / fit_core))
        print(f"{'dr eval (ms)':<16}{1500:>7}{fit_pure * 1e3:>12.1f}"
              f"{fit_core * 1e3:>13.1f}{fit_pure / fit_core:>9.2f}")
    if opts.csv:
        with open(opts.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kernel", "n", "pure_us", "compiled_us",
                             "speedup"])
            for row in rows + fit_rows:
                writer.writerow(row)
    return 0


if __name__ == "__main__":
    sys.exit(main())
