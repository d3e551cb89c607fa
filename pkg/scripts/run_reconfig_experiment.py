#!/usr/bin/env python3
"""Dynamic reconfiguration experiment on the 4-router full mesh: rotate
the sink's policy through {N4}, {N2,N4}, {N2,N3,N4} and split received
packets by ingress interface at the egress router.

Usage: run_reconfig_experiment.py [dwell_s] [interval_s] [local|remote]
Defaults: dwell 5 s, interval 0.005 s, both modes.
"""

import sys
import tempfile

from srv6kit.controller import ReconfigSchedule
from srv6kit.creds import make_bundle
from srv6kit.emulation import (
    FlowSpec,
    HostSpec,
    IntentTopology,
    LinkSpec,
    build_network,
    run_reconfig_experiment,
)
from srv6kit.model import Ipv6Prefix, SegmentList

MESH4 = IntentTopology(
    routers=("N1", "N2", "N3", "N4"),
    hosts=(HostSpec("S", "N1"), HostSpec("D", "N4")),
    links=(
        LinkSpec("N1", "N2"),
        LinkSpec("N1", "N3"),
        LinkSpec("N1", "N4"),
        LinkSpec("N2", "N3"),
        LinkSpec("N2", "N4"),
        LinkSpec("N3", "N4"),
    ),
    controller="N1",
)


def main():
    dwell = float(sys.argv[1]) if len(sys.argv) > 1 else 5.0
    interval = float(sys.argv[2]) if len(sys.argv) > 2 else 0.005
    modes = [sys.argv[3]] if len(sys.argv) > 3 else ["local", "remote"]
    schedule = ReconfigSchedule(
        destination=Ipv6Prefix.parse("fd00:1:2::2/128"),
        segment_lists=(
            SegmentList.of("fcff:4::1"),
            SegmentList.of("fcff:2::1", "fcff:4::1"),
            SegmentList.of("fcff:2::1", "fcff:3::1", "fcff:4::1"),
        ),
        dwell_s=dwell,
        device="sr0",
        transport="ssh-cli",
    )
    bundle = make_bundle(tempfile.mkdtemp(prefix="srv6kit-creds-"))
    for mode in modes:
        transports = ("ssh-cli",) if mode == "remote" else ()
        net = build_network(MESH4, bundle=bundle, agent_transports=transports)
        try:
            report = run_reconfig_experiment(
                net,
                FlowSpec("S", "D", interval_s=interval),
                schedule,
                mode=mode,
                bundle=bundle,
            )
        finally:
            net.shutdown()
        print(f"=== {mode} configuration, T={dwell}s, interval={interval}s ===")
        print(report.render_table())
        print()


if __name__ == "__main__":
    main()
