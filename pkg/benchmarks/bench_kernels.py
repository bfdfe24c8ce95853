"""Double-word kernels: numba vs pure numpy.

Times matvec, LU factorization and LU solve at a few sizes and checks that
both backends return bitwise identical results.

    python3 benchmarks/bench_kernels.py [--sizes 50 100 200] [--repeat 5]
"""
import argparse
import time

import numpy as np

from mpdirk.precision import _dw_numba as nb
from mpdirk.precision import _dw_numpy as npk


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def operands(n, rng):
    ah = rng.standard_normal((n, n)) + n * np.eye(n)
    al = ah * 2.0 ** -60 * rng.standard_normal((n, n))
    vh = rng.standard_normal(n)
    vl = vh * 2.0 ** -60 * rng.standard_normal(n)
    return ah, al, vh, vl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    # warm the jit cache so compile time is not timed
    w = operands(8, rng)
    nb.matvec(*w)
    f = nb.lu_factor(w[0], w[1])
    nb.lu_solve(*f, w[2], w[3])

    print(f"{'kernel':<10}{'n':>6}{'numba [ms]':>14}{'numpy [ms]':>14}{'speedup':>10}  same")
    for n in args.sizes:
        ah, al, vh, vl = operands(n, rng)
        cases = {
            "matvec": (lambda m: m.matvec(ah, al, vh, vl)),
            "lu": (lambda m: m.lu_factor(ah, al)),
        }
        fac = {m: m.lu_factor(ah, al) for m in (nb, npk)}
        cases["solve"] = lambda m: m.lu_solve(*fac[m], vh, vl)
        for name, call in cases.items():
            t_nb = best_of(lambda: call(nb), args.repeat)
            t_np = best_of(lambda: call(npk), args.repeat)
            r_nb, r_np = call(nb), call(npk)
            same = all(np.array_equal(a, b) for a, b in zip(r_nb, r_np))
            print(f"{name:<10}{n:>6}{t_nb * 1e3:>14.3f}{t_np * 1e3:>14.3f}"
                  f"{t_np / t_nb:>10.1f}  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
