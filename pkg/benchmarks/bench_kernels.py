"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints per-kernel timings over a range of vector sizes, then the time of
one full loss-and-gradient evaluation of a PINN with each backend.
"""
import argparse
import timeit

import numpy as np

from pinnstab import _backend
from pinnstab.harness import LossObjective
from pinnstab.network import NetConfig, init_glorot
from pinnstab.pinn import sample_points
from pinnstab.problems import build_problem

SIZES = (1_000, 100_000, 1_000_000)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for n in SIZES:
        g, y, out = (rng.standard_normal(n) for _ in range(3))
        for kernel in ("tanh_backward", "square_backward", "mul_backward", "axpy"):
            times = {}
            for name, mod in _backend.AVAILABLE.items():
                fn = getattr(mod, kernel)
                call = (lambda: fn(0.5, g, out, True)) if kernel == "axpy" else (lambda: fn(g, y, out, True))
                times[name] = min(timeit.repeat(call, number=5, repeat=repeat)) / 5
            rows.append((kernel, n, times))
    return rows


def bench_objective(repeat, problem="diffusion-reaction", n_layers=10):
    p = build_problem(problem)
    net = NetConfig(p.dim, p.output_dim, n_layers, p.default_neurons)
    params = init_glorot(net)
    w = params.flatten()
    objective = LossObjective(p, net, sample_points(p, p.default_counts, 0), params)
    times = {}
    for name in _backend.AVAILABLE:
        prev = _backend.use(name)
        times[name] = min(timeit.repeat(lambda: objective(w), number=1, repeat=max(3, repeat // 4)))
        _backend.use(prev)
    return f"{problem} NL={n_layers} loss+grad", times


def _fmt(times):
    py = times["python"]
    cols = [f"python {py * 1e3:9.3f} ms"]
    if "cython" in times:
        cy = times["cython"]
        cols.append(f"cython {cy * 1e3:9.3f} ms  speedup {py / cy:5.2f}x")
    return "  ".join(cols)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if "cython" not in _backend.AVAILABLE:
        print("compiled kernels not built; timing the numpy backend only")
    for kernel, n, times in bench_kernels(args.repeat):
        print(f"{kernel:<16}{n:>9}  {_fmt(times)}")
    label, times = bench_objective(args.repeat)
    print(f"{label:<25}  {_fmt(times)}")


if __name__ == "__main__":
    main()
