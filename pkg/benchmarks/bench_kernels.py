#!/usr/bin/env python3
"""Benchmark the numpy backend against the compiled extension per kernel.

Times every kernel family on training-scale shapes and prints a table with
the speed ratio.  The ``_AUTO_PREFER_COMPILED`` table in
``vcmpre/kernels/__init__.py`` should match what this prints: a kernel is
assigned to the compiled backend only when it wins here.

Usage:  python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from vcmpre.kernels import _AUTO_PREFER_COMPILED, get_backend


def timeit(fn, repeats):
    """Best-of-N wall time in milliseconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def cases(rng):
    """(name, kwargs-free callables per backend) on training-scale shapes."""
    x = rng.standard_normal((4, 16, 64, 64)).astype(np.float32)
    w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32) * 0.1
    b = rng.standard_normal(16).astype(np.float32)
    gy = rng.standard_normal((4, 16, 64, 64)).astype(np.float32)

    xt = rng.standard_normal((4, 16, 8, 32, 32)).astype(np.float32)
    wt = rng.standard_normal((16, 16, 3)).astype(np.float32) * 0.1
    gyt = rng.standard_normal((4, 16, 8, 32, 32)).astype(np.float32)

    blocks = rng.standard_normal((512, 8, 8)).astype(np.float32)
    cur = rng.random((64, 64)).astype(np.float32)
    ref = rng.random((64, 64)).astype(np.float32)

    def make(mod):
        return {
            "conv2d_forward": lambda: mod.conv2d_forward(x, w, b),
            "conv2d_backward": lambda: mod.conv2d_backward(x, w, gy, True, True),
            "convt_forward": lambda: mod.convt_forward(xt, wt, b),
            "convt_backward": lambda: mod.convt_backward(xt, wt, gyt, True, True),
            "dct8_apply": lambda: mod.dct8_apply(blocks, False),
            "sad_search": lambda: mod.sad_search(cur, ref, 16, 7),
        }

    return make


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="best-of-N timing repeats (default 5)")
    args = parser.parse_args()

    try:
        compiled = get_backend("compiled")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    numpy_mod = get_backend("numpy")

    make = cases(np.random.default_rng(0))
    np_fns, c_fns = make(numpy_mod), make(compiled)

    print(f"{'kernel':<18} {'numpy ms':>10} {'compiled ms':>12} "
          f"{'ratio':>7}  {'faster':<8} {'auto table'}")
    disagreements = []
    for name in np_fns:
        np_fns[name]()  # warm up caches / BLAS threads
        c_fns[name]()
        t_np = timeit(np_fns[name], args.repeats)
        t_c = timeit(c_fns[name], args.repeats)
        faster = "compiled" if t_c < t_np else "numpy"
        table = "compiled" if _AUTO_PREFER_COMPILED[name] else "numpy"
        mark = "" if faster == table else "  <-- table disagrees"
        if faster != table:
            disagreements.append(name)
        print(f"{name:<18} {t_np:>10.3f} {t_c:>12.3f} "
              f"{t_np / t_c:>7.2f}x  {faster:<8} {table}{mark}")

    if disagreements:
        print(f"\nauto-selection table disagrees for: {', '.join(disagreements)}")
        print("consider updating _AUTO_PREFER_COMPILED in vcmpre/kernels/__init__.py")
    else:
        print("\nauto-selection table matches these measurements")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
