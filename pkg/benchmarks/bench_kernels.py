"""Time the compiled and pure-Python kernels on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from memquant import kernels
from memquant.simgen import make_dataset


def _cases(rng):
    data = make_dataset("homoscedastic", 100_000, 15, 1)
    design, y = data.design, data.y
    beta = np.ones(16)
    a = rng.standard_normal((16, 16))
    v = a @ a.T + np.eye(16)
    u = rng.standard_normal(16)
    stream = make_dataset("homoscedastic", 20_000, 3, 2)

    def online(mod):
        pp = 4
        cu, cv = np.zeros(pp), np.eye(pp) * 100.0
        lu, lv, xx = np.zeros(pp), np.zeros((pp, pp)), np.zeros((pp, pp))
        cur = np.ones(pp)
        mod.online_block(stream.design, stream.y, np.ones(pp), 0.05, 0.5,
                         cu, cv, lu, lv, xx, cur, 1, 1, 1e-10, 20 * pp)

    return {
        "local_stats n=1e5 p'=16": lambda mod: mod.local_stats(design, y, beta, 0.1, 0.3),
        "cg d=16": lambda mod: mod.cg(v, u, np.zeros(16), 1e-12, 320),
        "online_block 2e4 samples p'=4": online,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled extension not built; timing the Python kernels only")
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name, _ in backends) + f"{'speedup':>10s}")
    for label, fn in cases.items():
        times = []
        for _, mod in backends:
            number = 1
            while timeit.timeit(lambda: fn(mod), number=number) < 0.2:
                number *= 2
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times.append(best)
        row = f"{label:32s}" + "".join(f"{t * 1e3:12.3f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
