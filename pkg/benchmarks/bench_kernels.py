"""Time the compiled pixel kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 5]

Each kernel is run on the same inputs through both backends; outputs are
checked for agreement before timings are reported.
"""
import argparse
import time

import numpy as np

from recursive_lle import _kernels_py as py

try:
    from recursive_lle import _kernels as cy
except ImportError:  # extension not built
    cy = None


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(size, rng):
    img = rng.random((size, size, 3))
    v = np.ascontiguousarray(img.max(axis=2))
    ll, lh, hl, hh = py.haar_decompose(img)
    # LOE runs on the downsampled lightness grid, at most 100x100
    small = np.ascontiguousarray(v[:100, :100])
    other = np.ascontiguousarray(np.sqrt(small) * rng.uniform(0.9, 1.1, small.shape))
    return {
        "v_channel": (img,),
        "histogram256": (v,),
        "patch_means": (img, 16),
        "haar_decompose": (img,),
        "haar_reconstruct": (ll, lh, hl, hh),
        "eme_blocks": (v, 16, 1e-4),
        "loe_mean_rd": (small, other),
    }


def _close(a, b):
    if isinstance(a, tuple):
        return all(_close(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a), np.asarray(b), rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not available; only the fallback can run")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'cython ms':>12}{'python ms':>12}{'speedup':>10}  agree")
    for name, inputs in cases(args.size, rng).items():
        t_cy, out_cy = best_of(getattr(cy, name), inputs, args.repeat)
        t_py, out_py = best_of(getattr(py, name), inputs, args.repeat)
        print(f"{name:<18}{t_cy * 1e3:>12.3f}{t_py * 1e3:>12.3f}{t_py / t_cy:>9.1f}x  {_close(out_cy, out_py)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
