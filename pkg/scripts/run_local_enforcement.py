#!/usr/bin/env python3
"""Local rule enforcement experiment: direct vs per-process backends,
add and delete, N=100 commands x M=20 repetitions.

Writes a CSV report and prints a summary table.

Usage: run_local_enforcement.py [out.csv]
"""

import sys

from srv6kit.bench import BenchSpec, emit_report, run_local_bench


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "local_enforcement.csv"
    spec = BenchSpec(
        experiment="local-enforce",
        n_commands=100,
        repetitions=20,
        operation="both",
        backend="both",
    )
    reports = run_local_bench(spec)
    emit_report(reports, out, "csv")
    print(f"{'backend':14s} {'op':8s} {'mean [s]':>10s} {'CV%':>7s} {'CI95%':>7s} {'op/s':>8s}")
    for r in reports:
        print(
            f"{r.transport:14s} {r.operation:8s} {r.stats.mean:10.6f} "
            f"{r.stats.cv_pct:7.2f} {r.stats.ci95_rel_pct:7.2f} {r.ops_per_s:8.0f}"
        )
    print(f"report written to {out}")


if __name__ == "__main__":
    main()
