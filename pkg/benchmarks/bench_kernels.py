"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``.  Both backends are imported
directly, so the ISF_PURE_PYTHON switch does not matter here.
"""
import argparse
import timeit

import numpy as np

from isf import _pykernels
from isf.polyalg import _tables

try:
    from isf import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(n, alpha, N, seed=0):
    rng = np.random.default_rng(seed)
    t = _tables(n, alpha)
    X = rng.uniform(-0.2, 0.2, (N, n))
    Phi = _pykernels.monomials(X, t.parent, t.var)
    a = rng.standard_normal((n, len(t.degrees)))
    b = rng.standard_normal((n, len(t.degrees)))
    ti, tj, tt = t.mult
    return {
        "monomials": lambda k: k.monomials(X, t.parent, t.var),
        "monomial_grad": lambda k: k.monomial_grad(Phi, t.down, t.exps),
        "truncated_product": lambda k: k.truncated_product(a, b, ti, tj, tt),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--alpha", type=int, default=7)
    p.add_argument("--points", type=int, default=1500)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    print(f"n={args.n} alpha={args.alpha} points={args.points}")
    print(f"{'kernel':<20}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.n, args.alpha, args.points).items():
        times = {}
        for bname, mod in backends.items():
            reps = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            times[bname] = min(timeit.repeat(lambda: fn(mod), number=reps, repeat=args.repeat)) / reps
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
