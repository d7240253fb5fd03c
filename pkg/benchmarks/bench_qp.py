"""Compare the compiled and pure-Python QP kernels on QPs taken from a real run.

    python benchmarks/bench_qp.py [--repeat N]
"""

import argparse
import pathlib
import time

import numpy as np

from fxtocbf.config import load_scenario
from fxtocbf.qp import KERNELS, get_kernel, solve_dense_qp
from fxtocbf.qp.problem import _to_kernel_form
from fxtocbf.simulator import run

ROOT = pathlib.Path(__file__).resolve().parents[1]


def collect(path):
    log = run(load_scenario(path), keep_problems=True)
    return [p.to_dense() for _, _, p in log.problems]


def bench(qps, kernel, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        for qp in qps:
            solve_dense_qp(qp, kernel)
        best = min(best, time.perf_counter() - t)
    return best / len(qps)


def bench_kernel(forms, kernel, repeat):
    fn = get_kernel(kernel)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        for G, a, C, b, meq in forms:
            fn(G, a, C, b, meq)
        best = min(best, time.perf_counter() - t)
    return best / len(forms)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "lane_change_3.json"))
    args = ap.parse_args()
    qps = collect(args.scenario)
    sizes = [qp.n for qp in qps]
    print(f"{len(qps)} QPs, {min(sizes)}-{max(sizes)} variables")
    forms = [_to_kernel_form(qp)[:5] for qp in qps]
    ref = [solve_dense_qp(qp, "python").x for qp in qps]
    for name in sorted(KERNELS):
        per = bench(qps, name, args.repeat)
        gap = max(float(np.max(np.abs(solve_dense_qp(qp, name).x - x))) for qp, x in zip(qps, ref))
        kern = bench_kernel(forms, name, args.repeat)
        print(f"{name:>9}: {per * 1e6:8.1f} us/solve, {kern * 1e6:8.1f} us in kernel   max |x - x_python| = {gap:.1e}")


if __name__ == "__main__":
    main()
