"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call is a warm-up (it compiles or loads the on-disk cache)
and is excluded.  Numbers are best-of-``repeat`` wall times.
"""
import argparse
import timeit

import numpy as np

from dpconv import kernels
from dpconv.maskprop import dilated_stack, generate_irregular_mask


def _cases(rng):
    x = np.pad(rng.normal(size=(4, 32, 64, 64)), ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = kernels.im2col_numpy(x, 3, 3, 1, 1, 64, 64)
    m = np.pad(generate_irregular_mask(256, 256, 0.4, 0), 4)[None].repeat(4, 0)
    mask = generate_irregular_mask(256, 256, 0.5, 1)
    layers = np.array([[*s.kernel_size, s.stride, s.dilation, s.padding, s.mask_threshold]
                       for s in dilated_stack(20).layers], dtype=np.int64)
    return {
        "im2col 4x32x64x64 k3": (kernels.im2col_numpy, kernels.im2col_numba,
                                 (x, 3, 3, 1, 1, 64, 64)),
        "col2im 4x32x64x64 k3": (kernels.col2im_numpy, kernels.col2im_numba,
                                 (cols, 4, 32, 66, 66, 3, 3, 1, 1, 64, 64)),
        "window_sum 4x256x256 k3 l4": (kernels.window_sum_numpy, kernels.window_sum_numba,
                                       (m, 3, 3, 1, 4, 256, 256)),
        "propagate 256x256 20 layers": (kernels.propagate_numpy, kernels.propagate_numba,
                                        (mask, layers, 20)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not kernels.HAS_NUMBA:
        parser.exit(1, "numba is unavailable (or DPCONV_NO_NUMBA is set); nothing to compare\n")
    print(f"{'kernel':<30}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (slow, fast, call_args) in _cases(np.random.default_rng(0)).items():
        fast(*call_args)
        t_np = min(timeit.repeat(lambda: slow(*call_args), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<30}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
