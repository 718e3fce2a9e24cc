"""Time the numba and numpy kernel paths side by side.

Usage::

    python benchmarks/bench_kernels.py [--batch 512] [--classes 10] [--dim 64] [--repeat 50]

Both paths are imported from :mod:`isomax_lab._kernels` directly, so the
``ISOMAX_LAB_NO_NUMBA`` flag has no effect here. The first numba call of each
kernel (JIT compile or cache load) is excluded from the timings.
"""

import argparse
import timeit

import numpy as np

from isomax_lab import _kernels
from isomax_lab.loss_heads import DISTANCE_EPS


def _cases(batch, classes, dim, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((batch, dim))
    p = rng.standard_normal((classes, dim))
    d = _kernels.numpy_pairwise_distances(f, p, DISTANCE_EPS)
    g = rng.standard_normal((batch, classes))
    logits = rng.standard_normal((batch, classes)) * 5.0
    probs = _kernels.numpy_softmax_rows(logits)
    return {
        "pairwise_distances": (f, p, DISTANCE_EPS),
        "distance_backward": (f, p, d, g),
        "softmax_rows": (logits,),
        "row_entropy": (probs,),
    }


def _max_abs_diff(a, b):
    if isinstance(a, tuple):
        return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=512)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy path would run")
        return 1

    print(f"batch={args.batch} classes={args.classes} dim={args.dim} repeat={args.repeat}")
    print(f"{'kernel':<20} {'numpy us':>10} {'numba us':>10} {'speedup':>8} {'max|diff|':>10}")
    for name, call_args in _cases(args.batch, args.classes, args.dim, args.seed).items():
        np_fn = getattr(_kernels, f"numpy_{name}")
        nb_fn = getattr(_kernels, f"numba_{name}")
        diff = _max_abs_diff(np_fn(*call_args), nb_fn(*call_args))  # also warms up numba
        t_np = min(timeit.repeat(lambda: np_fn(*call_args), number=args.repeat, repeat=3)) / args.repeat
        t_nb = min(timeit.repeat(lambda: nb_fn(*call_args), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<20} {t_np * 1e6:>10.1f} {t_nb * 1e6:>10.1f} {t_np / t_nb:>7.2f}x {diff:>10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
