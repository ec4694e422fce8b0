"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-repeat wall time per kernel and backend, the speedup, and
the largest absolute difference between the two outputs.
"""
import argparse
import timeit

import numpy as np

from advmp.kernels import available_backends, load_backend

L1, L2, LINF = 0, 1, 2


def cases(rng):
    D = rng.standard_normal((2048, 64))
    G = rng.standard_normal((2048, 64))
    X = rng.standard_normal((256, 3))
    y = rng.standard_normal(256)
    theta = rng.standard_normal(3)
    pgd_args = (X, y, theta, np.zeros_like(X), np.array([L1, L2, LINF], dtype=np.int64),
                np.array([1.0, 0.5, 0.1]), np.array([0.1, 0.05, 0.01]), np.array([1, 1, 1], dtype=np.int64), 100)
    return {
        "project_l1": ("project_rows", (D, L1, 3.0)),
        "project_l2": ("project_rows", (D, L2, 3.0)),
        "project_linf": ("project_rows", (D, LINF, 0.3)),
        "ascent_l1_top4": ("ascent_rows", (G, L1, 0.1, 4)),
        "pgd_linreg_msd": ("pgd_linreg", pgd_args),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out])
    return np.ravel(out)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    args = ap.parse_args(argv)
    backends = {name: load_backend(name) for name in available_backends()}
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<18}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}{'max diff':>12}")
    for label, (fn, fargs) in cases(np.random.default_rng(0)).items():
        times, outs = {}, {}
        for name, mod in backends.items():
            f = getattr(mod, fn)
            times[name] = min(timeit.repeat(lambda: f(*fargs), number=args.number, repeat=args.repeat)) / args.number
            outs[name] = _flat(f(*fargs))
        speed = times["python"] / times["cython"] if len(times) == 2 else float("nan")
        diff = float(np.max(np.abs(outs["python"] - outs["cython"]))) if len(outs) == 2 else float("nan")
        print(f"{label:<18}" + "".join(f"{1e3 * times[b]:>14.3f}" for b in backends) + f"{speed:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
