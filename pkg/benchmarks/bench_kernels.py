"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per kernel and backend, plus the speed ratio.
The compiled conv2d_direct hands layers with many input channels per group to
the BLAS path, so the raw compiled loop is timed separately as ``loop``.
"""
import argparse
import timeit

import numpy as np

from lwck import _backend

JACOBI_TOL = 4 * np.finfo(float).eps


def conv_cases(rng):
    yield "conv 3x3 16->32 @32x32", (rng.standard_normal((16, 32, 32)), rng.standard_normal((32, 16, 3, 3)), 1, 1, 1)
    yield "conv 7x7 s2 3->64 @64x64", (rng.standard_normal((3, 64, 64)), rng.standard_normal((64, 3, 7, 7)), 2, 3, 1)
    yield "depthwise 3x3 64 @32x32", (rng.standard_normal((64, 32, 32)), rng.standard_normal((64, 1, 3, 3)), 1, 1, 64)
    yield "pointwise 128->64 @16x16", (rng.standard_normal((128, 16, 16)), rng.standard_normal((64, 128, 1, 1)), 1, 0, 1)


def svd_cases(rng):
    for m, n in ((32, 16), (64, 48), (256, 64)):
        yield f"jacobi svd {m}x{n}", (rng.standard_normal((m, n)), JACOBI_TOL)


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    names = _backend.available()
    if "cython" not in names:
        print("compiled extension not built; timing the numpy backend only")
    rng = np.random.default_rng(args.seed)
    cases = [(label, "conv2d_direct", a) for label, a in conv_cases(rng)]
    cases += [(label, "jacobi_svd", a) for label, a in svd_cases(rng)]

    header = f"{'kernel':<28}" + "".join(f"{n + ' (ms)':>16}" for n in names)
    if len(names) > 1:
        header += f"{'ratio':>10}{'loop (ms)':>14}"
    print(header)
    print("-" * len(header))
    for label, fn_name, fn_args in cases:
        times = {n: best_time(getattr(_backend.get(n), fn_name), fn_args, args.repeat) for n in names}
        row = f"{label:<28}" + "".join(f"{1e3 * times[n]:>16.3f}" for n in names)
        if len(names) > 1:
            row += f"{times['python'] / times['cython']:>9.1f}x"
            if fn_name == "conv2d_direct":
                row += f"{1e3 * best_time(_backend.get('cython').conv2d_loop, fn_args, args.repeat):>14.3f}"
        print(row)


if __name__ == "__main__":
    main()
