"""Time the numba and numpy flavours of each hot kernel.

    python benchmarks/bench_kernels.py [--repeat N]

The first numba call of each kernel is excluded (JIT compile / cache load).
"""
import argparse
import time

import numpy as np

from microcrack import kernels as K
from microcrack import wavegen as W


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((8, 16, 320, 81))
    _, idx = K.maxpool_forward_np(x, 4, 1)
    g = rng.standard_normal((8, 16, 80, 81))

    plate = W.PlateSpec(steps=500)
    kx, ky = W.face_coefficients(W.crack_field([W.CrackSpec(40.0, 30.0, 100.0, 120.0, 2.0)], plate))
    rows, cols = W.sensor_cells(plate)
    lf = (kx, ky, plate.speed ** 2, 0.0, W.source_rows(plate), 0, W.ricker(plate), rows, cols)

    d = rng.random((300, 300))
    d[rng.random((300, 300)) < 0.95] = np.inf
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)

    return [
        ("maxpool forward  (8,16,320,81) k=(4,1)", lambda f: f(x, 4, 1), K.maxpool_forward_nb, K.maxpool_forward_np),
        ("maxpool backward (8,16,320,81) k=(4,1)", lambda f: f(g, idx, x.shape, 4, 1),
         K.maxpool_backward_nb, K.maxpool_backward_np),
        ("leapfrog 144x144, 500 steps", lambda f: f(*lf), K.leapfrog_nb, K.leapfrog_np),
        ("floyd-warshall n=300", lambda f: f(d), K.floyd_warshall_nb, K.floyd_warshall_np),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    print(f"{'kernel':42s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for name, call, fast, slow in cases():
        call(fast)  # compile
        tf = best_of(lambda: call(fast), a.repeat)
        ts = best_of(lambda: call(slow), a.repeat)
        print(f"{name:42s} {tf:9.4f} {ts:9.4f} {ts / tf:7.1f}x")


if __name__ == "__main__":
    main()
