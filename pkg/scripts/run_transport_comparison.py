#!/usr/bin/env python3
"""Southbound API comparison: response time of N=100 commands over every
transport and interaction mode, full-config and communication-only,
secure and insecure.

Usage: run_transport_comparison.py [outdir] [--quick]
--quick lowers N/M so a full sweep finishes in about a minute.
"""

import sys
import tempfile

from srv6kit.bench import BenchSpec, emit_report, run_remote_bench
from srv6kit.creds import make_bundle


def main():
    args = [a for a in sys.argv[1:] if not a.startswith("--")]
    quick = "--quick" in sys.argv
    outdir = args[0] if args else "."
    n, m = (20, 5) if quick else (100, 20)
    bundle = make_bundle(tempfile.mkdtemp(prefix="srv6kit-creds-"))

    rows = []
    for experiment in ("full-config", "comm-only"):
        for security in ("insecure", "secure"):
            transports = (
                ("rpc-bin", "rest")
                if security == "insecure"
                else ("rpc-bin", "rest", "netconf", "ssh-cli")
            )
            for mode in ("np-bulk", "p-conn", "np-conn-seq"):
                spec = BenchSpec(
                    experiment=experiment,
                    n_commands=n,
                    repetitions=m,
                    transports=transports,
                    mode=mode,
                    security=security,
                    handshake="per-command",
                )
                for report in run_remote_bench(spec, bundle):
                    rows.append(report)
                    print(
                        f"{experiment:12s} {security:8s} {mode:12s} {report.transport:8s} "
                        f"mean {report.stats.mean:9.6f} s  {report.ops_per_s:8.0f} op/s"
                    )
    out = f"{outdir}/transport_comparison.csv"
    emit_report(rows, out, "csv")
    print(f"report written to {out}")


if __name__ == "__main__":
    main()
