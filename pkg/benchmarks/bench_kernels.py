"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--output bench.csv]

Each kernel runs on the same inputs through both backends; the script
prints median wall time per call, the speed-up and the max abs difference.
"""
import argparse
import csv
import statistics
import sys
import time

import numpy as np

from datasoups import _pykernels as py

try:
    from datasoups import _ckernels as ck
except ImportError:
    ck = None


def timed(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    if np.isscalar(a) or np.ndim(a) == 0:
        return abs(float(a) - float(b))
    return float(np.abs(np.asarray(a, float) - np.asarray(b, float)).max())


def cases(rng):
    img = rng.random((64, 64, 3))
    a = 0.3
    rot = np.array([[np.cos(a), -np.sin(a), 10.0], [np.sin(a), np.cos(a), -8.0]])
    yield "affine_sample 64x64 constant", lambda k: k.affine_sample(img, rot, 64, 64, 0, 0.5)
    yield "affine_sample 64x64 reflect", lambda k: k.affine_sample(img, rot, 64, 64, 2, 0.0)

    X = rng.normal(size=(700, 56))
    sq = (X * X).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None] - 2 * X @ X.T, 0)
    yield "perplexity_search n=700", lambda k: k.perplexity_search(d2, 30.0)[:3]

    P = rng.random((700, 700))
    P = P + P.T
    np.fill_diagonal(P, 0)
    P /= P.sum()
    Y = rng.normal(size=(700, 2))
    yield "tsne_grad n=700", lambda k: k.tsne_grad(P, Y, 12.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--output")
    args = ap.parse_args(argv)
    if ck is None:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    print(f"{'kernel':<30} {'numpy ms':>10} {'cython ms':>10} {'speed-up':>9} {'max |diff|':>11}")
    for name, call in cases(np.random.default_rng(0)):
        t_py, out_py = timed(lambda: call(py), args.repeat)
        t_ck, out_ck = timed(lambda: call(ck), args.repeat)
        diff = max_diff(out_py, out_ck)
        rows.append([name, f"{t_py * 1e3:.3f}", f"{t_ck * 1e3:.3f}", f"{t_py / t_ck:.2f}", f"{diff:.2e}"])
        print(f"{name:<30} {t_py * 1e3:>10.2f} {t_ck * 1e3:>10.2f} {t_py / t_ck:>8.1f}x {diff:>11.1e}")
    if args.output:
        with open(args.output, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kernel", "numpy_ms", "cython_ms", "speedup", "max_abs_diff"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
