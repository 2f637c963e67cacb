#!/usr/bin/env python3
"""Compiled vs pure-Python kernel lane benchmark.

Times the three hot paths (closed-loop service sampling, QoS admission,
extent bookkeeping) against both lanes in one process, then optionally a
whole scenario in subprocesses (lane choice is made at import time, so the
end-to-end comparison needs FLUSHSIM_PURE=1 in a child environment).

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--skip-scenario]
"""

import argparse
import os
import subprocess
import sys
import time

from flushsim import kernels

SOURCE = kernels.load_source_lane()


def _run_closed_loop(mod):
    gate = mod.QosGate(16000.0, 1000e6)
    return mod.closed_loop_run(
        0, 4, 8192, 2_000_000, 740.0, 0.10, 1e6 / 735e6, 0.90, gate
    )


def _run_qos(mod, ops=200_000):
    gate = mod.QosGate(16000.0, 1000e6, 8000.0, 128 * 1024 * 1024)
    now = 0.0
    admitted = 0
    for i in range(ops):
        now = gate.admit_at(now + 3.0, 8192)
        gate.consume(now, 8192)
        admitted += 1
    return admitted, gate.burst_credits_left()


def _run_extent_map(mod, ops=60_000):
    m = mod.ExtentMap()
    rng = mod.SplitMix64(42)
    moved = 0
    for i in range(ops):
        a = rng.next_below(1 << 20) * 4096
        b = a + (1 + rng.next_below(32)) * 4096
        if i % 3 == 2:
            moved += m.subtract(a, b)
        else:
            moved += m.add(a, b)
        if i % 17 == 0:
            while m:
                m.pop_chunk(1 << 20)
    return moved


BENCHES = [
    ("closed_loop_run (2s sim, 4 threads)", _run_closed_loop),
    ("QosGate admit+consume x200k", _run_qos),
    ("ExtentMap mixed ops x60k", _run_extent_map),
]


def time_one(fn, mod, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(mod)
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_scenario(repeat):
    """Same scenario end to end, compiled lane vs forced source lane."""
    argv = [
        sys.executable, "-m", "flushsim", "simulate",
        "table2_ebs_placements_p2", "--duration", "3", "--quiet",
    ]
    rows = []
    for label, force_pure in (("compiled", False), ("pure", True)):
        env = dict(os.environ)
        env.pop("FLUSHSIM_PURE", None)
        if force_pure:
            env["FLUSHSIM_PURE"] = "1"
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            subprocess.run(argv, env=env, check=True, stdout=subprocess.DEVNULL)
            best = min(best, time.perf_counter() - t0)
        rows.append((label, best))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--skip-scenario", action="store_true")
    args = parser.parse_args(argv)

    print(f"active lane: {kernels.ACTIVE_LANE} (compiled={kernels.KERNELS_COMPILED})")
    if not kernels.KERNELS_COMPILED:
        print("note: no compiled extension present; both columns run the "
              "same pure-Python code")
    print()
    width = max(len(name) for name, _ in BENCHES)
    print(f"{'benchmark':<{width}}  {'compiled':>10}  {'pure':>10}  {'speedup':>8}")
    for name, fn in BENCHES:
        t_active, r_active = time_one(fn, kernels, args.repeat)
        t_source, r_source = time_one(fn, SOURCE, args.repeat)
        if r_active != r_source:
            raise SystemExit(f"{name}: lanes disagree: {r_active!r} vs {r_source!r}")
        speedup = t_source / t_active if t_active else float("inf")
        print(
            f"{name:<{width}}  {t_active * 1e3:>8.1f}ms  {t_source * 1e3:>8.1f}ms"
            f"  {speedup:>7.1f}x"
        )

    if not args.skip_scenario and kernels.KERNELS_COMPILED:
        print()
        print("whole scenario (3s simulated, one process per lane):")
        for label, wall in bench_scenario(args.repeat):
            print(f"  {label:>8}: {wall:.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
