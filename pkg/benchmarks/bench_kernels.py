"""Compiled kernels vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time per call for each backend and the speedup, after
checking the two backends agree on the same inputs.
"""

import argparse
import timeit

import numpy as np

from gcsl import _kernels_py

try:
    from gcsl import _core
except ImportError:
    _core = None


def _problem(n, dim, n_classes, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    lower = np.linalg.cholesky(a @ a.T / dim + np.eye(dim))
    means = rng.standard_normal((n_classes, dim))
    x = rng.standard_normal((n, dim))
    return rng, x, means, np.ascontiguousarray(lower)


def energy_case(n, dim, n_classes):
    _, x, means, lower = _problem(n, dim, n_classes)
    return lambda k: k.mixture_energy_grad(x, means, lower, -1)


def sgld_case(n, dim, n_classes, steps):
    rng, x, means, lower = _problem(n, dim, n_classes)
    noise = 0.01 * rng.standard_normal((steps, n, dim))
    lo, hi = -np.ones(dim), np.ones(dim)

    def run(k):
        xs = x.copy()
        return k.mixture_sgld(xs, means, lower, 0.1, noise, lo, hi, False, -1, None), xs

    return run


def loss_case(n, dim, n_classes):
    rng, x, means, lower = _problem(n, dim, n_classes)
    labels = rng.integers(-1, n_classes, size=n).astype(np.int64)
    W = rng.standard_normal((n_classes, dim))
    b = rng.standard_normal(n_classes)
    a = rng.standard_normal(n_classes)
    raw = np.tril(0.3 * rng.standard_normal((dim, dim)))

    def run(k):
        out = [np.zeros((n_classes, dim)), np.zeros(n_classes), np.zeros(n_classes),
               np.zeros((n_classes, dim)), np.zeros((dim, dim))]
        vals = k.hybrid_loss_grad(x, labels, W, b, a, means, raw, 10.0, *out)
        return vals, out

    return run


CASES = [
    ("energy_grad n=1000 D=2 C=2", energy_case(1000, 2, 2)),
    ("energy_grad n=1000 D=16 C=10", energy_case(1000, 16, 10)),
    ("sgld 100 steps n=100 D=2 C=2", sgld_case(100, 2, 2, 100)),
    ("sgld 100 steps n=100 D=16 C=10", sgld_case(100, 16, 10, 100)),
    ("hybrid_loss_grad N=100 D=2 C=2", loss_case(100, 2, 2)),
    ("hybrid_loss_grad N=1000 D=8 C=5", loss_case(1000, 8, 5)),
]


def _flat(obj):
    if isinstance(obj, (tuple, list)):
        return np.concatenate([_flat(o) for o in obj]) if obj else np.empty(0)
    return np.ravel(np.asarray(obj, dtype=np.float64))


def best_time(func, repeat):
    timer = timeit.Timer(func)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _core is None:
        print("compiled kernels not built; only the numpy fallback is available")
    print(f"{'case':<34}{'numpy':>12}{'cython':>12}{'speedup':>10}")
    for name, case in CASES:
        t_py = best_time(lambda: case(_kernels_py), args.repeat)
        if _core is None:
            print(f"{name:<34}{t_py * 1e6:>10.1f}us{'-':>12}{'-':>10}")
            continue
        err = np.max(np.abs(_flat(case(_core)) - _flat(case(_kernels_py))))
        if not err < 1e-9:
            raise SystemExit(f"{name}: backends disagree (max abs diff {err:.3e})")
        t_c = best_time(lambda: case(_core), args.repeat)
        print(f"{name:<34}{t_py * 1e6:>10.1f}us{t_c * 1e6:>10.1f}us{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
