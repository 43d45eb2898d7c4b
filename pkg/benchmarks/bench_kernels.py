"""Compiled vs pure-numpy kernels.

Times each hot kernel on desk-scale shapes with both backends, then one
forward/backward pass of the classifier in a subprocess per backend.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mnd import _kernels_py as py

try:
    from mnd import _ckernels as cy
except ImportError:
    cy = None

END_TO_END = """
import time, numpy as np
from mnd import autodiff as ad, classifier as C, kernels
clf = C.build_small_cnn().unfreeze()
x = np.random.default_rng(0).random((64, 3, 32, 32))
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    ad.sum(clf.logits(ad.Tensor(x, requires_grad=True))).backward()
    best = min(best, time.perf_counter() - t0)
print(kernels.BACKEND, best)
"""


def cases(rng):
    x1 = rng.random((64, 3, 34, 34))
    x2 = rng.random((64, 16, 18, 18))
    cols1 = py.im2col(x1, 3, 3, 1)
    cols2 = py.im2col(x2, 3, 3, 1)
    p = rng.random((64, 16, 32, 32))
    out, arg = py.maxpool2d_forward(p, 2)
    g = rng.random(out.shape)
    return {
        "im2col conv1": lambda k: k.im2col(x1, 3, 3, 1),
        "im2col conv2": lambda k: k.im2col(x2, 3, 3, 1),
        "col2im conv1": lambda k: k.col2im(cols1, x1.shape, 3, 3, 1),
        "col2im conv2": lambda k: k.col2im(cols2, x2.shape, 3, 3, 1),
        "maxpool fwd": lambda k: k.maxpool2d_forward(p, 2),
        "maxpool bwd": lambda k: k.maxpool2d_backward(g, arg, p.shape, 2),
    }


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':16s} {'numpy ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, fn in cases(rng).items():
        t_py = best_of(lambda: fn(py), args.repeat) * 1e3
        if cy is None:
            print(f"{name:16s} {t_py:10.2f} {'n/a':>10s}")
            continue
        t_cy = best_of(lambda: fn(cy), args.repeat) * 1e3
        print(f"{name:16s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:8.2f}x")

    print("\nclassifier forward+backward, batch 64")
    for force in ("1", "0"):
        env = dict(os.environ, MND_PURE_PYTHON=force)
        res = subprocess.run(
            [sys.executable, "-c", END_TO_END.format(repeat=args.repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        backend, secs = res.stdout.split()
        print(f"  {backend:8s} {float(secs) * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
