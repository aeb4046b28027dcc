"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--pings 200000] [--stays 400] [--repeat 3]

Both backends get identical inputs; the script checks that their outputs
match before reporting timings.
"""

import argparse
import time

import numpy as np

from commute_od import _fallback
from commute_od.synth import SynthConfig, generate

try:
    from commute_od import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def pings(n_target):
    agents = max(1, n_target // 3700)
    stream, _ = generate(SynthConfig(agent_count=agents, rng_seed=1))
    order = np.lexsort((stream.ts, stream.agent))
    agent = stream.agent[order]
    offsets = np.searchsorted(agent, np.arange(agents + 1)).astype(np.int64)
    return stream.lat[order].copy(), stream.lon[order].copy(), stream.ts[order].copy(), offsets


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pings", type=int, default=200_000)
    ap.add_argument("--stays", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if compiled is None:
        raise SystemExit("compiled extension not available; reinstall without COMMUTE_OD_NO_EXT")

    lat, lon, ts, offsets = pings(args.pings)
    rng = np.random.default_rng(0)
    hubs = rng.uniform(-2000, 2000, (12, 2))
    xy = hubs[rng.integers(0, 12, args.stays)] + rng.normal(0, 150, (args.stays, 2))
    slat = 29.75 + xy[:, 0] / 111_195.0
    slon = -95.40 + xy[:, 1] / 96_600.0

    cases = [
        (f"stay_scan ({len(ts)} pings)", lambda m: m.stay_scan(lat, lon, ts, offsets, 250.0, 900, False)),
        (f"complete_linkage ({args.stays} stays)", lambda m: m.complete_linkage(slat, slon, 250.0)),
    ]
    print(f"{'kernel':<36}{'cython s':>10}{'python s':>10}{'speedup':>9}")
    for name, call in cases:
        tc, oc = best_of(lambda: call(compiled), args.repeat)
        tp, op = best_of(lambda: call(_fallback), 1)
        oc = oc if isinstance(oc, tuple) else (oc,)
        op = op if isinstance(op, tuple) else (op,)
        assert all(np.array_equal(a, b) for a, b in zip(oc, op)), f"{name}: backends disagree"
        print(f"{name:<36}{tc:>10.4f}{tp:>10.3f}{tp / tc:>8.0f}x")


if __name__ == "__main__":
    main()
