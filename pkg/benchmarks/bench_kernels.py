"""Time the compiled convolution kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64]

Reports the best wall time per call for forward and backward passes on a
few layer shapes, and checks the two backends agree before timing.
"""
import argparse
import timeit

import numpy as np

from exitwise.kernels import compiled, python

SHAPES = [  # (height, width, in channels, filters)
    (32, 32, 3, 8),
    (16, 16, 8, 8),
    (32, 32, 3, 64),
    (14, 14, 64, 64),
]


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.2 and number < 1000:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args(argv)
    if compiled is None:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .`")

    rng = np.random.default_rng(0)
    print(f"{'shape':>18} {'pass':>8} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for h, w, c, f in SHAPES:
        x = rng.standard_normal((args.batch, h, w, c)).astype(args.dtype)
        k = rng.standard_normal((3, 3, c, f)).astype(args.dtype)
        b = rng.standard_normal(f).astype(args.dtype)
        g = rng.standard_normal((args.batch, h - 2, w - 2, f)).astype(args.dtype)
        tol = 1e-3 if args.dtype == "float32" else 1e-9
        np.testing.assert_allclose(compiled.conv2d_forward(x, k, b), python.conv2d_forward(x, k, b),
                                   rtol=tol, atol=tol)
        for mine, ref in zip(compiled.conv2d_backward(x, k, g), python.conv2d_backward(x, k, g)):
            np.testing.assert_allclose(mine, ref, rtol=tol, atol=tol * max(1.0, np.abs(ref).max()))

        label = f"{h}x{w}x{c}->{f}"
        for name, call in (("forward", lambda m: m.conv2d_forward(x, k, b)),
                           ("backward", lambda m: m.conv2d_backward(x, k, g))):
            t_np = best_time(lambda: call(python), args.repeat)
            t_cy = best_time(lambda: call(compiled), args.repeat)
            print(f"{label:>18} {name:>8} {t_np * 1e3:10.3f} {t_cy * 1e3:10.3f} {t_np / t_cy:7.2f}x")


if __name__ == "__main__":
    main()
