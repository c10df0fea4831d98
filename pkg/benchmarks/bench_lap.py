"""Time the compiled and pure-Python assignment kernels on random dense costs.

    python3 benchmarks/bench_lap.py [--sizes 16 64 128] [--repeats 5]
"""
import argparse
import timeit

import numpy as np

from gmelab.otcore.assignment import KERNELS, linear_assignment


def bench(n, repeats, seed=0):
    cost = np.random.default_rng(seed).random((n, n))
    ref = None
    row = {"n": n}
    for name in sorted(KERNELS):
        sigma = linear_assignment(cost, name)
        total = cost[np.arange(n), sigma].sum()
        if ref is not None:
            assert abs(total - ref) <= 1e-9, "kernels disagree"
        ref = total
        row[name] = min(timeit.repeat(lambda: linear_assignment(cost, name),
                                      number=1, repeat=repeats))
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    names = sorted(KERNELS)
    print(f"{'n':>5} " + " ".join(f"{k:>12}" for k in names)
          + ("     speedup" if len(names) > 1 else ""))
    for n in args.sizes:
        row = bench(n, args.repeats)
        line = f"{n:>5} " + " ".join(f"{row[k] * 1e3:>10.3f}ms" for k in names)
        if len(names) > 1:
            line += f" {row['python'] / row['cython']:>10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
