"""Compare the numba and numpy kernel backends on representative inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is checked for agreement between backends before timing.  The
numba timings exclude compilation (one warm-up call per kernel).
"""

import argparse
import json
import sys
import timeit

import numpy as np

from emotts import kernels


def cases(rng):
    durations = rng.integers(0, 12, size=400)
    frames = int(durations.sum())
    return {
        "phone_average": (rng.standard_normal(frames), durations),
        "expand": (rng.standard_normal((400, 128)), durations),
        "overlap_add": (rng.standard_normal((800, 1200)), 300, np.hanning(1200) ** 2),
        "box_smooth": (rng.standard_normal((4000, 80)), 5),
        "edit_distance": (rng.integers(0, 30, size=600), rng.integers(0, 30, size=600)),
    }


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    backends = kernels.available()
    if "numba" not in backends:
        print("numba backend unavailable; only numpy timings are meaningful", file=sys.stderr)
    inputs = cases(np.random.default_rng(0))
    rows = []
    for name, call_args in inputs.items():
        results, times = {}, {}
        for b in backends:
            fn = getattr(kernels.backend(b), name)
            results[b] = fn(*call_args)  # warm-up, also compiles under numba
            runs = timeit.repeat(lambda: fn(*call_args), number=1, repeat=args.repeat)
            times[b] = min(runs)
        same = all(agree(results[backends[0]], results[b]) for b in backends[1:])
        row = {"kernel": name, "agree": bool(same), **{f"{b}_ms": round(t * 1e3, 3) for b, t in times.items()}}
        if "numba" in times:
            row["speedup"] = round(times["numpy"] / times["numba"], 2)
        rows.append(row)

    header = f"{'kernel':<15}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree"
    print(header)
    for r in rows:
        print(
            f"{r['kernel']:<15}{r['numpy_ms']:>10.3f}{r.get('numba_ms', float('nan')):>10.3f}"
            f"{r.get('speedup', float('nan')):>9.2f}  {r['agree']}"
        )
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
