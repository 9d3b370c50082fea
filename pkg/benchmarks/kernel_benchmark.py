"""Time the compiled kernels against their plain-array twins.

Runs every hot kernel on identical inputs through both code paths and
prints a table of best-of-N wall times. The compiled path needs the
process started without OPR_NUMBA=0; when it is unavailable the script
still reports the plain-array timings.

Usage:
    python3 benchmarks/kernel_benchmark.py [--rows 50] [--intervals 20000]
        [--alpha 6] [--repeat 5] [--csv out.csv]
"""

import argparse
import csv
import math
import time

import numpy as np

from parkrank import kernels
from parkrank.ingest import (
    DIURNAL_AMP_FRAC,
    HAZARD_BASE,
    HAZARD_MAX,
    HAZARD_SLOPE,
    SWITCH_CAP,
    TURNOVER_RATE,
)


def bench(fn, args, repeat):
    fn(*args)  # warmup (and jit compile)
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def markov_inputs(rows, intervals, seed):
    rng = np.random.default_rng(seed)
    side = math.ceil(math.sqrt(rows))
    adj = np.zeros((rows, rows))
    for i in range(rows):
        r, c = divmod(i, side)
        for dr, dc in ((0, 1), (1, 0)):
            rr, cc = r + dr, c + dc
            j = rr * side + cc
            if rr < math.ceil(rows / side) and cc < side and j < rows:
                adj[i, j] = adj[j, i] = 1.0
    base = 0.45
    amp = DIURNAL_AMP_FRAC * min(base, 1.0 - base)
    sin_mod = amp * np.sin(2.0 * np.pi * np.arange(intervals) / 288.0)
    return (
        rng.random(rows),
        rng.random((intervals - 1, rows)),
        sin_mod,
        adj,
        adj.sum(axis=1),
        base,
        0.5,
        TURNOVER_RATE,
        HAZARD_BASE,
        HAZARD_SLOPE,
        HAZARD_MAX,
        SWITCH_CAP,
    )


def build_cases(rows, intervals, alpha, seed):
    rng = np.random.default_rng(seed)
    states = np.ascontiguousarray(rng.random((rows, intervals)) < 0.5)
    counts, starts, lengths, run_states, run_of = kernels.encode_runs_numpy(
        states
    )
    t = intervals - 2
    return [
        ("encode_runs", (states,)),
        (
            "extract_windows",
            (starts, lengths, run_states, run_of, t, alpha),
        ),
        ("markov_occupancy", markov_inputs(rows, intervals, seed)),
        ("next_vacant_steps", (states,)),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=50)
    parser.add_argument("--intervals", type=int, default=20_000)
    parser.add_argument("--alpha", type=int, default=6)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--csv")
    args = parser.parse_args(argv)

    cases = build_cases(args.rows, args.intervals, args.alpha, seed=0)
    have_numba = kernels.NUMBA_ACTIVE
    rows_out = []
    for name, fn_args in cases:
        plain = bench(getattr(kernels, f"{name}_numpy"), fn_args, args.repeat)
        if have_numba:
            compiled_fn = getattr(kernels, f"{name}_numba")
            if name == "next_vacant_steps":
                compiled_fn = kernels.next_vacant_steps
            compiled = bench(compiled_fn, fn_args, args.repeat)
            speedup = plain / compiled if compiled > 0 else math.inf
        else:
            compiled, speedup = None, None
        rows_out.append((name, plain, compiled, speedup))

    print(
        f"{args.rows} rows x {args.intervals} intervals, alpha {args.alpha}, "
        f"best of {args.repeat}"
    )
    header = f"{'kernel':<20}{'plain ms':>12}{'compiled ms':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, plain, compiled, speedup in rows_out:
        if compiled is None:
            print(f"{name:<20}{plain * 1e3:>12.3f}{'n/a':>14}{'n/a':>10}")
        else:
            print(
                f"{name:<20}{plain * 1e3:>12.3f}{compiled * 1e3:>14.3f}"
                f"{speedup:>9.1f}x"
            )
    if not have_numba:
        print("compiled path unavailable in this process (OPR_NUMBA=0?)")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["kernel", "plain_seconds", "compiled_seconds", "speedup"]
            )
            for name, plain, compiled, speedup in rows_out:
                writer.writerow([
                    name,
                    repr(plain),
                    "" if compiled is None else repr(compiled),
                    "" if speedup is None else repr(speedup),
                ])
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
