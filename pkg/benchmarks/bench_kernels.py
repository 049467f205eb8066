"""Compiled kernels vs the pure-Python fallback.

Times each kernel on identical inputs and generator seeds, checks that both
backends return bit-identical results, and prints the speed-up.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeats 3]
"""
import argparse
import sys
import time

import numpy as np

from contextew import _fallback
from contextew._backend import COMPILED, kernels


def _gen(seed):
    return np.random.Generator(np.random.Philox(seed))


def _time(fn, repeats):
    best, out = np.inf, None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def _same(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.array_equal(np.asarray(x), np.asarray(y)) for x, y in zip(a, b))


def cases(n):
    rng = np.random.default_rng(0)
    C3 = rng.uniform(-3, 3, (n, 3))
    C6 = rng.uniform(-3, 3, (n, 6))
    X = rng.uniform(-0.5, 0.5, (n, 2))
    theta = rng.normal(size=(3, 2))
    sig_inv = np.stack([np.eye(2) * 20.0] * 3)
    return [
        ("exact draws, K=3", lambda b: b.sample_rows(C3, 0.0, _gen(1))),
        ("exact draws, K=6", lambda b: b.sample_rows(C6, 0.0, _gen(2))),
        ("hit-and-run, K=3, 200 steps", lambda b: b.hit_and_run_rows(C3[: n // 10], 0.0, 200, _gen(3))),
        ("truncated policies, d=2 K=3", lambda b: b.draw_policies(X, theta, 0.0, sig_inv, 6.0, 100, _gen(4))),
        ("partial-fraction Z, K=5", lambda b: [b.conv_eval(c, 1.0) for c in C6[:, :5]]),
    ]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000, help="rows per kernel call")
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)
    if not COMPILED:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':32s} {'compiled':>12s} {'fallback':>12s} {'speed-up':>9s}  identical")
    for name, call in cases(args.n):
        tc, oc = _time(lambda: call(kernels), args.repeats)
        tf, of = _time(lambda: call(_fallback), args.repeats)
        same = _same(tuple(map(tuple, oc)) if isinstance(oc, list) else oc,
                     tuple(map(tuple, of)) if isinstance(of, list) else of)
        print(f"{name:32s} {tc * 1e3:10.2f}ms {tf * 1e3:10.2f}ms {tf / tc:8.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
