"""Compare the compiled and pure-Python codec kernels.

    python3 benchmarks/bench_codec.py [--values 2000] [--repeat 5]

Encodes and decodes the same seeded corpus with each available kernel and
reports throughput in MB/s. The outputs of both kernels are checked for
byte equality before timing.
"""

import argparse
import random
import sys
import time

from pachyderm import _kernel_py
from pachyderm.values import Map, Ref, Set, Symbol

try:
    from pachyderm import _kernel as _kernel_c
except ImportError:
    _kernel_c = None


def corpus(n, seed=0):
    rng = random.Random(seed)

    def value(depth):
        r = rng.random()
        if depth == 0 or r < 0.5:
            return rng.choice([
                None, True, rng.randint(-(1 << 40), 1 << 40), rng.random(),
                "text-%d" % rng.randint(0, 9999), rng.randbytes(rng.randint(0, 16)),
                Symbol("s%d" % rng.randint(0, 50)), Ref(rng.randint(1, 1 << 40)),
            ])
        if r < 0.75:
            return [value(depth - 1) for _ in range(rng.randint(0, 6))]
        if r < 0.92:
            return Map({"k%d" % i: value(depth - 1) for i in range(rng.randint(0, 5))})
        return Set(range(rng.randint(0, 6)))

    return [value(4) for _ in range(n)]


def bench(kernel, values, repeat):
    blobs = [kernel.encode_value(v) for v in values]
    size = sum(map(len, blobs))
    enc = dec = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for v in values:
            kernel.encode_value(v)
        enc = min(enc, time.perf_counter() - t0)
        t0 = time.perf_counter()
        for b in blobs:
            kernel.decode_value(b, 0)
        dec = min(dec, time.perf_counter() - t0)
    return size, enc, dec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--values", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    values = corpus(args.values)
    kernels = [k for k in (_kernel_c, _kernel_py) if k is not None]
    if _kernel_c is None:
        print("compiled kernel not built; only the pure-Python kernel is measured", file=sys.stderr)
    else:
        for v in values:
            assert _kernel_c.encode_value(v) == _kernel_py.encode_value(v)

    results = {}
    print(f"{'kernel':<8} {'bytes':>10} {'encode MB/s':>12} {'decode MB/s':>12}")
    for k in kernels:
        size, enc, dec = bench(k, values, args.repeat)
        results[k.NAME] = (enc, dec)
        print(f"{k.NAME:<8} {size:>10} {size / enc / 1e6:>12.1f} {size / dec / 1e6:>12.1f}")
    if len(results) == 2:
        (ce, cd), (pe, pd) = results[_kernel_c.NAME], results["python"]
        print(f"speedup  encode x{pe / ce:.1f}  decode x{pd / cd:.1f}")


if __name__ == "__main__":
    main()
