"""Compare the compiled codec kernels against the NumPy fallback.

Run from the repository root:

    python3 benchmarks/bench_codec.py [--n 1000000] [--repeats 5]

Both backends are timed on the same value arrays and checked for
bit-identical output while we're at it.
"""

import argparse
import time

import numpy as np

from stvl.numcodec import MAX_ABS, MIN_ABS
from stvl.numcodec import _codec_np

try:
    from stvl.numcodec import _codec_cy
except ImportError:
    _codec_cy = None


def _sample(n, seed=0):
    rng = np.random.default_rng(seed)
    logs = rng.uniform(np.log(MIN_ABS), np.log(MAX_ABS), size=n)
    values = np.exp(logs) * rng.choice([-1.0, 1.0], size=n)
    values[rng.random(n) < 0.01] = 0.0
    return values


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    values = _sample(args.n)
    backends = [("numpy", _codec_np)]
    if _codec_cy is not None:
        backends.append(("compiled", _codec_cy))
    else:
        print("compiled backend not built; timing the fallback only")

    print(f"{args.n:,} values, best of {args.repeats} runs\n")
    print(f"{'backend':<10} {'encode':>10} {'decode':>10} {'Mvals/s enc':>12}")
    reference = None
    for name, mod in backends:
        enc_t, (m, b, z) = _time(lambda: mod.encode_bulk(values, True), args.repeats)
        dec_t, out = _time(lambda: mod.decode_bulk(m, b, z), args.repeats)
        print(f"{name:<10} {enc_t:>9.4f}s {dec_t:>9.4f}s {args.n / enc_t / 1e6:>12.1f}")
        if reference is None:
            reference = (m, b, z, out)
        else:
            same = (np.array_equal(reference[0], m) and np.array_equal(reference[1], b)
                    and np.array_equal(reference[2], z) and np.array_equal(reference[3], out))
            print(f"{'':<10} outputs bit-identical to numpy: {same}")


if __name__ == "__main__":
    main()
