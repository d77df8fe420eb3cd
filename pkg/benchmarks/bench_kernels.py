"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row is the median wall time of one call after a warm-up call (so
numba compilation is excluded). Workloads mirror real use: a 512 px mesh
render, the unfolding of one PPO minibatch and an Adam step on the
largest weight matrix.
"""

import argparse
import statistics
import time

import numpy as np

from gamerl.kernels import adam_update, col2im, im2col
from gamerl.rotation import Orientation, RenderConfig, builtin_meshes, render


def median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def workloads():
    rng = np.random.default_rng(0)
    mesh = builtin_meshes()[5]
    cfg = RenderConfig(resolution=512)
    x = rng.normal(size=(32, 10, 10, 16)).astype(np.float32)
    cols = im2col(x, backend="numpy")
    p = rng.normal(size=(3200, 256)).astype(np.float32)
    g = rng.normal(size=p.shape).astype(np.float32)
    m, v = np.zeros_like(p), np.zeros_like(p)
    return {
        "render 512px": lambda b: render(mesh, Orientation(ry=45, rz=30), cfg, backend=b),
        "im2col 32x10x10x16": lambda b: im2col(x, backend=b),
        "col2im 32x10x10x16": lambda b: col2im(cols, x.shape, backend=b),
        "adam 3200x256": lambda b: adam_update(p, g, m, v, 0.9, 0.999, 1e-3, 10, 1e-8, backend=b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':<22}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fn in workloads().items():
        nb = median_time(lambda: fn("numba"), args.repeat)
        py = median_time(lambda: fn("numpy"), args.repeat)
        print(f"{name:<22}{nb * 1e3:>10.2f}{py * 1e3:>10.2f}{py / nb:>8.1f}x")


if __name__ == "__main__":
    main()
