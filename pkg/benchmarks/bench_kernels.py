"""Time each hot kernel compiled with numba against its numpy / pure-python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Compilation happens in a warm-up call before timing. With
``MHPROP_DISABLE_NUMBA=1`` both columns time the fallback.
"""
import argparse
import json
import time

import numpy as np

from mhprop import kernels
from mhprop.kernels import fallback


def cases(rng):
    n = 200_000
    log_w = rng.normal(size=n)
    log_u = np.log(rng.random(n))
    acc = rng.random(n) < 0.3
    chain = np.cumsum(rng.standard_normal(20_000)) * 0.02
    a, b, w = rng.random(1500), rng.random(1500), rng.random(1500)
    return {
        "imh_scan": (log_w, 0.0, log_u),
        "repeat_cap_mask": (acc, 0, 8),
        "autocorr_truncated": (chain, 0.0, 1.0, 0.05),
        "pair_abs_diff": (a, b, w),
    }


def best_time(fn, args, repeat):
    fn(*args)  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    for name, inputs in cases(rng).items():
        fast = best_time(kernels.KERNELS[name], inputs, args.repeat)
        slow = best_time(fallback(kernels.KERNELS[name]), inputs, args.repeat)
        rows.append({"kernel": name, "numba_s": fast, "fallback_s": slow, "speedup": slow / fast})
    if args.json:
        print(json.dumps({"numba": kernels.NUMBA_AVAILABLE, "results": rows}, indent=2))
        return
    print(f"numba available: {kernels.NUMBA_AVAILABLE}")
    print(f"{'kernel':<20} {'numba [s]':>12} {'fallback [s]':>13} {'speedup':>9}")
    for r in rows:
        print(f"{r['kernel']:<20} {r['numba_s']:>12.5f} {r['fallback_s']:>13.5f} {r['speedup']:>8.1f}x")


if __name__ == "__main__":
    main()
