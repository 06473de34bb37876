"""Compiled versus pure-Python kernels: wall time and bit-for-bit agreement.

    python3 benchmarks/bench_kernels.py            # default sizes
    python3 benchmarks/bench_kernels.py --scale 0.1
"""

import argparse
import time

import numpy as np

from gibbskit import kernels
from gibbskit.gaussian import product_law
from gibbskit.targets import GaussianTarget, RidgeTarget, equicorrelated_precision


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def gaussian_case(n):
    t = GaussianTarget(np.zeros(8), equicorrelated_precision(8, 0.75))
    X0 = np.ascontiguousarray(t.sample(np.random.default_rng(0), n))

    def run(backend):
        X = X0.copy()
        kernels.gaussian_gibbs(t, X, np.random.default_rng(1), 200, backend=backend)
        return X

    return f"gaussian gibbs d=8, {n} chains x 200 steps", run


def ridge_case(n):
    rng = np.random.default_rng(2)
    A = rng.standard_normal((20, 4))
    y = (rng.random(20) < 0.5).astype(float)
    t = RidgeTarget(A, "logistic", prior_precision=1.0, labels=y)

    def run(backend):
        X = np.zeros((n, 4))
        kernels.ridge_gibbs(t, X, np.random.default_rng(3), 100, backend=backend)
        return X

    return f"logistic ridge d=4, 20 rows, {n} chains x 100 steps", run


def sequence_case(n):
    t = GaussianTarget(np.zeros(8), equicorrelated_precision(8, 0.75))
    law0 = product_law(np.zeros(8), 1.0 / np.diag(t.precision))

    def run(backend):
        return kernels.sequence_kl(law0, t, np.random.default_rng(4), n, 100, backend=backend)

    return f"sequence KL d=8, {n} sequences x 100 steps", run


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scale", type=float, default=1.0, help="multiplier on the problem sizes")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled core is not built; run `pip install -e . --no-build-isolation` first")

    cases = [gaussian_case(max(1, int(2000 * args.scale))),
             ridge_case(max(1, int(200 * args.scale))),
             sequence_case(max(1, int(500 * args.scale)))]
    print(f"{'case':<52} {'python s':>10} {'compiled s':>11} {'speedup':>8}  identical")
    for label, run in cases:
        tp, a = _time(lambda: run("python"), 1)
        tc, b = _time(lambda: run("compiled"), args.repeat)
        same = np.array_equal(a, b)
        print(f"{label:<52} {tp:>10.3f} {tc:>11.4f} {tp / tc:>7.0f}x  {same}")


if __name__ == "__main__":
    main()
