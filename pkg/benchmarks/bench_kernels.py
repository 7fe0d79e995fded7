"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--n 32] [--repeats 5]

Both flavours are called directly, so the environment flag does not matter
here. Each row also checks that the two results agree bit for bit.
"""
import argparse
import time

import numpy as np

from lossyckpt import kernels
from lossyckpt.codec import BLOCK
from lossyckpt.solvers import ilu0
from lossyckpt.sparse import poisson3d


def best_of(fn, repeats):
    fn()  # warm up (numba compiles on first call)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=32, help="poisson3d grid size")
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args()

    A = poisson3d(args.n)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(A.nrows)
    L, U = ilu0(A)
    lsched = kernels.LevelSchedule(L.row_ptr, L.col_idx, lower=True)
    q = np.cumsum(rng.integers(-3, 4, size=A.nrows)).astype(np.int64)
    codes, orders = kernels.predict_codes_numpy(q, BLOCK)
    dpos = A.diag_positions()
    row_ids = np.repeat(np.arange(A.nrows), np.diff(A.row_ptr))

    cases = {
        "spmv": (lambda: kernels.spmv_numba(A.row_ptr, A.col_idx, A.values, x),
                 lambda: kernels.spmv_numpy(A.row_ptr, A.col_idx, A.values, x, row_ids)),
        "lower_solve": (lambda: kernels.lower_solve_numba(L.row_ptr, L.col_idx, L.values, x),
                        lambda: kernels.lower_solve_numpy(L.row_ptr, L.col_idx, L.values, x, lsched)),
        "ilu0": (lambda: kernels.ilu0_numba(A.row_ptr, A.col_idx, A.values, dpos),
                 lambda: kernels.ilu0_numpy(A.row_ptr, A.col_idx, A.values, dpos)),
        "predict_codes": (lambda: kernels.predict_codes_numba(q, BLOCK),
                          lambda: kernels.predict_codes_numpy(q, BLOCK)),
        "reconstruct": (lambda: kernels.reconstruct_numba(codes, orders, BLOCK),
                        lambda: kernels.reconstruct_numpy(codes, orders, BLOCK)),
    }
    print(f"poisson3d({args.n}): {A.nrows} rows, {A.nnz} nonzeros")
    print(f"{'kernel':<14} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'bitwise':>8}")
    for name, (fast, slow) in cases.items():
        t_fast, a = best_of(fast, args.repeats)
        t_slow, b = best_of(slow, args.repeats)
        print(f"{name:<14} {1e3 * t_fast:>10.3f} {1e3 * t_slow:>10.3f} "
              f"{t_slow / t_fast:>8.1f} {str(same(a, b)):>8}")


if __name__ == "__main__":
    main()
