"""Compare the numba kernels with their pure-numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Both paths are imported directly, so the AEGIS_DISABLE_NUMBA flag does not
matter here. Each kernel is warmed up once (JIT compile) before timing, and
outputs are compared before anything is reported.
"""

import argparse
import timeit

import numpy as np

from aegissat import _kernels as k


def cases(rng):
    body = rng.bytes(480_000)
    imgs = rng.integers(-128, 128, size=(20_000, 6, 6)).astype(np.int8)
    kern = rng.integers(-128, 128, size=(3, 3)).astype(np.int8)
    n = 100_000
    addrs = rng.integers(0xA000_0000, 0xA020_0000, size=n, dtype=np.uint64)
    lens = rng.integers(0, 4096, size=n, dtype=np.uint64)
    ops = rng.integers(1, 3, size=n, dtype=np.uint8)
    ranges = (np.array([0xA000_0000, 0xA010_0000], np.uint64), np.array([0x1_0000, 0x1_0000], np.uint64),
              np.array([3, 3], np.uint8))
    return {
        "crc32 (480 kB body)": (k.crc32_numba, k.crc32_fallback, (body,)),
        "cnn batch (20k images)": (k.cnn_batch_numba, k.cnn_batch_fallback, (imgs, kern, 5)),
        "firewall contains (100k)": (k.contains_batch_numba, k.contains_batch_fallback,
                                     (addrs, lens, ops, *ranges)),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not k.HAVE_NUMBA:
        raise SystemExit("numba is not installed; install the 'accel' extra")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, (fast, slow, a) in cases(rng).items():
        np.testing.assert_array_equal(fast(*a), slow(*a))
        t_fast = min(timeit.repeat(lambda: fast(*a), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<28}{t_fast:>12.3f}{t_slow:>12.3f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
