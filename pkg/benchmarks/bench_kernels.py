"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call (JIT compilation) is excluded from the timings.
"""

import argparse
import time

import numpy as np

from garmentdiff import kernels
from garmentdiff.evalkit.metrics import gaussian_window


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba not installed; nothing to compare")
    rng = np.random.default_rng(0)
    img = rng.random((512, 512))
    win = gaussian_window()
    feats_a, feats_b = rng.standard_normal((4000, 64)), rng.standard_normal((4000, 64))
    mask = rng.random((256, 256)) > 0.98
    cases = {
        "ssim filter 512x512": (lambda: kernels.filter_valid_numpy(img, win),
                                lambda: kernels.filter_valid_numba(img, win)),
        "kid sums 4000x64": (lambda: kernels.poly_mmd_sums_numpy(feats_a, feats_b),
                             lambda: kernels.poly_mmd_sums_numba(feats_a, feats_b)),
        "disk dilation r=3 256x256": (lambda: kernels.dilate_disk_numpy(mask, 3),
                                      lambda: kernels.dilate_disk_numba(mask, 3)),
    }
    print(f"{'kernel':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (np_fn, nb_fn) in cases.items():
        nb_fn()  # compile
        t_np, t_nb = best_of(np_fn, args.repeat), best_of(nb_fn, args.repeat)
        print(f"{name:<28}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
