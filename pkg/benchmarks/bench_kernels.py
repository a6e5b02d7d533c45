"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--n 20000] [--p 50] [--repeat 20]

Prints the best-of-``repeat`` wall time per call for each kernel and
backend, the speedup, and an end-to-end penalized fit under each backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from roblogit._backend import get_kernels
from roblogit.losses import LossSpec
from roblogit.penalties import PenaltySpec

FIT_SNIPPET = """
import time, numpy as np, roblogit
from roblogit import Dataset, FitConfig, LossSpec, PenaltySpec, fit
rng = np.random.default_rng(0)
X = rng.standard_normal(({n}, {p}))
beta0 = np.zeros({p}); beta0[:5] = [1, -1, 1, -1, 1]
y = (rng.random({n}) < 1 / (1 + np.exp(-X @ beta0))).astype(float)
data = Dataset(X, y)
t0 = time.perf_counter()
fit(data, LossSpec.divergence(0.5), PenaltySpec("scad", 0.05), FitConfig())
print(roblogit.BACKEND, time.perf_counter() - t0)
"""


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--p", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    try:
        backends = {"python": get_kernels("python"), "compiled": get_kernels("compiled")}
    except ImportError:
        sys.exit("compiled kernels are not built; run `python setup.py build_ext --inplace`")

    rng = np.random.default_rng(0)
    X = rng.standard_normal((args.n, args.p))
    y = (rng.random(args.n) < 0.5).astype(float)
    beta = rng.normal(scale=0.3, size=args.p)
    t = X @ beta
    z = rng.normal(size=args.n)
    loss = LossSpec.divergence(0.5).kernel_params
    scad = PenaltySpec("scad", 0.1, a=3.7)
    prox_args = (0.5, scad.kernel_code, scad.lam, scad.a, scad._enet_theta)

    cases = {
        "loss_arrays": lambda k: k.loss_arrays(y, t, *loss),
        "chi_array": lambda k: k.chi_array(y, t, *loss),
        "value_grad": lambda k: k.value_grad(X, y, beta, *loss),
        "prox (scad)": lambda k: k.prox(z, *prox_args),
    }
    print(f"n={args.n} p={args.p}, best of {args.repeat}")
    print(f"{'kernel':<14}{'python [ms]':>13}{'compiled [ms]':>15}{'speedup':>10}")
    for name, call in cases.items():
        tp = best(lambda: call(backends["python"]), args.repeat)
        tc = best(lambda: call(backends["compiled"]), args.repeat)
        print(f"{name:<14}{1e3 * tp:>13.3f}{1e3 * tc:>15.3f}{tp / tc:>10.2f}")

    print("\nend-to-end SCAD fit")
    code = FIT_SNIPPET.format(n=args.n, p=args.p)
    for force in ("1", "0"):
        env = dict(os.environ, ROBLOGIT_PURE_PYTHON=force)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        name, secs = out.stdout.split()
        print(f"{name:<14}{float(secs):>10.3f} s")


if __name__ == "__main__":
    main()
