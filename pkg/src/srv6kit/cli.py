"""srv6kit command line: agent, controller operations, impairment proxy,
benchmarks and experiments.

stdout carries data only; logs go to stderr (level via SRV6_KIT_LOG).
Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading

from . import __version__, bench, creds
from .agent import Agent, AgentConfig
from .controller import ParseError, PolicyClient, ReconfigSchedule, parse_lsdb_dump
from .emulation import FlowSpec, IntentTopology, build_network, run_reconfig_experiment
from .model import Ipv6Prefix, PathPolicy, SegmentList, EncapMode
from .netem import ImpairmentProfile, run_proxy
from .transports import (
    ClientCreds,
    HandshakeMode,
    InteractionMode,
    SecurityMode,
    TransportKind,
)


def setup_logging() -> None:
    level = os.environ.get("SRV6_KIT_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def _split_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"endpoint must be host:port, got {text!r}")
    return host, int(port)


def _client_creds(args) -> ClientCreds:
    if getattr(args, "creds", None):
        base = args.creds
        return ClientCreds(
            tls_ca=os.path.join(base, "tls", "ca.pem"),
            ssh_client_key=os.path.join(base, "ssh", "client_key"),
            ssh_host_pub=os.path.join(base, "ssh", "host_key.pub.pem"),
        )
    return ClientCreds(
        tls_ca=getattr(args, "ca", None),
        ssh_client_key=getattr(args, "client_key", None),
        ssh_host_pub=getattr(args, "host_pub", None),
    )


def cmd_agent_run(args) -> int:
    config = AgentConfig.from_json(args.config)
    agent = Agent(config).start()
    print(json.dumps({"node_id": config.node_id, "endpoints": {
        name: f"{host}:{port}" for name, (host, port) in agent.endpoints.items()
    }}), flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *a: stop.set())
    signal.signal(signal.SIGINT, lambda *a: stop.set())
    try:
        stop.wait()
    finally:
        agent.shutdown()
    return 0


def cmd_ctl(args) -> int:
    host, port = _split_endpoint(args.endpoint)
    kind = TransportKind(args.transport)
    security = SecurityMode.SECURE if args.secure else SecurityMode.INSECURE
    if kind in (TransportKind.NETCONF, TransportKind.SSH_CLI):
        security = SecurityMode.SECURE
    client = PolicyClient(
        host,
        port,
        kind,
        mode=InteractionMode(args.mode),
        security=security,
        creds=_client_creds(args),
        handshake=HandshakeMode.PERSISTENT,
    )
    try:
        if args.ctl_op == "get":
            for path in client.get():
                print(
                    f"{path.destination} segs {path.segments} dev {path.device} "
                    f"mode {path.encapmode.value} table {path.table}"
                )
            return 0
        path = PathPolicy(
            destination=Ipv6Prefix.parse(args.dest),
            segments=SegmentList.parse(args.segs),
            device=args.dev,
            encapmode=EncapMode(args.encapmode),
            table=args.table,
        )
        reply = getattr(client, args.ctl_op)(path)
        print(reply.status.value)
        return 0 if reply.status.value == "ok" else 1
    finally:
        client.close()


def cmd_topo_parse(args) -> int:
    with open(args.file) as f:
        graph = parse_lsdb_dump(f.read())
    out = {
        "nodes": [
            {"id": n.node_id, "sid": str(n.sid)}
            for n in sorted(graph.nodes, key=lambda n: n.node_id)
        ],
        "edges": [
            {"a": e.a, "b": e.b, "cost": e.cost, "prefix": str(e.prefix)}
            for e in sorted(graph.edges, key=lambda e: (e.a, e.b))
        ],
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_proxy(args) -> int:
    profile = ImpairmentProfile(
        one_way_delay_ms=args.delay_ms, loss_prob=args.loss, rng_seed=args.seed
    )
    proxy = run_proxy(
        _split_endpoint(args.listen),
        _split_endpoint(args.upstream),
        profile,
        status_port=args.status_port,
    )
    stop = threading.Event()

    def dump_and_stop(*_a):
        stop.set()

    signal.signal(signal.SIGTERM, dump_and_stop)
    signal.signal(signal.SIGINT, dump_and_stop)
    stop.wait()
    print(json.dumps(proxy.counters_snapshot()))
    proxy.shutdown()
    return 0


def cmd_bench(args) -> int:
    spec = bench.BenchSpec.from_json(args.spec)
    expected = {"local": "local-enforce", "full": "full-config", "comm": "comm-only"}[
        args.bench_kind
    ]
    if spec.experiment != expected:
        raise ValueError(f"spec is a {spec.experiment} experiment, expected {expected}")
    if args.bench_kind == "local":
        reports = bench.run_local_bench(spec)
    else:
        bundle = _ensure_bundle(args.creds)
        reports = bench.run_remote_bench(spec, bundle)
    fmt = "json" if args.out.endswith(".json") else "csv"
    bench.emit_report(reports, args.out, fmt)
    for report in reports:
        print(
            f"{report.experiment} {report.transport} {report.mode} {report.security}: "
            f"mean {report.stats.mean:.6f} s, {report.ops_per_s:.0f} op/s"
        )
    return 0


def _ensure_bundle(creds_dir: str | None) -> creds.CredentialBundle:
    import tempfile

    if creds_dir and os.path.isdir(os.path.join(creds_dir, "tls")):
        return creds.CredentialBundle(
            tls_ca=os.path.join(creds_dir, "tls", "ca.pem"),
            tls_cert=os.path.join(creds_dir, "tls", "server.pem"),
            tls_key=os.path.join(creds_dir, "tls", "server.key"),
            ssh_host_key=os.path.join(creds_dir, "ssh", "host_key.pem"),
            ssh_host_pub=os.path.join(creds_dir, "ssh", "host_key.pub.pem"),
            ssh_client_key=os.path.join(creds_dir, "ssh", "client_key"),
            authorized_keys=os.path.join(creds_dir, "ssh", "authorized_keys"),
        )
    target = creds_dir or tempfile.mkdtemp(prefix="srv6kit-creds-")
    return creds.make_bundle(target)


def cmd_exp_reconfig(args) -> int:
    intent = IntentTopology.from_json(args.intent)
    schedule = ReconfigSchedule.from_json(args.schedule)
    bundle = _ensure_bundle(args.creds)
    mode = args.mode
    transports = (schedule.transport,) if mode == "remote" else ()
    net = build_network(intent, bundle=bundle, agent_transports=transports)
    try:
        src, dst = args.flow.split(",")
        flow = FlowSpec(src_host=src, dst_host=dst, interval_s=args.interval)
        report = run_reconfig_experiment(net, flow, schedule, mode=mode, bundle=bundle)
    finally:
        net.shutdown()
    with open(args.out, "w") as f:
        json.dump(report.to_json_obj(), f, indent=2)
        f.write("\n")
    print(report.render_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srv6kit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"srv6kit {__version__}")
    parser.add_argument(
        "--json-errors", action="store_true", help="machine-readable errors on stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_agent = sub.add_parser("agent", help="run the SRv6 node agent")
    agent_sub = p_agent.add_subparsers(dest="agent_cmd", required=True)
    p_agent_run = agent_sub.add_parser("run", help="serve the configured transports")
    p_agent_run.add_argument("--config", required=True, help="agent config JSON")
    p_agent_run.set_defaults(func=cmd_agent_run)

    p_ctl = sub.add_parser("ctl", help="controller-side policy operations")
    ctl_sub = p_ctl.add_subparsers(dest="ctl_op", required=True)
    for op in ("create", "remove", "update", "get"):
        p_op = ctl_sub.add_parser(op)
        p_op.add_argument("--endpoint", required=True, help="host:port of the agent")
        p_op.add_argument(
            "--transport", default="rpc-bin", choices=[k.value for k in TransportKind]
        )
        p_op.add_argument(
            "--mode", default="p-conn", choices=[m.value for m in InteractionMode]
        )
        p_op.add_argument("--secure", action="store_true")
        p_op.add_argument("--creds", help="credential bundle directory")
        p_op.add_argument("--ca"), p_op.add_argument("--client-key"), p_op.add_argument(
            "--host-pub"
        )
        if op != "get":
            p_op.add_argument("--dest", required=True)
            p_op.add_argument("--segs", required=True, help="comma separated segment list")
            p_op.add_argument("--dev", required=True)
            p_op.add_argument("--encapmode", default="encap", choices=["encap", "insert"])
            p_op.add_argument("--table", type=int, default=254)
        p_op.set_defaults(func=cmd_ctl)

    p_topo = sub.add_parser("topo", help="topology utilities")
    topo_sub = p_topo.add_subparsers(dest="topo_cmd", required=True)
    p_topo_parse = topo_sub.add_parser("parse", help="parse an LSDB dump to JSON")
    p_topo_parse.add_argument("file")
    p_topo_parse.set_defaults(func=cmd_topo_parse)

    p_proxy = sub.add_parser("proxy", help="delay/loss impairment proxy")
    p_proxy.add_argument("--listen", required=True)
    p_proxy.add_argument("--upstream", required=True)
    p_proxy.add_argument("--delay-ms", type=int, default=0)
    p_proxy.add_argument("--loss", type=float, default=0.0)
    p_proxy.add_argument("--seed", type=int, default=0)
    p_proxy.add_argument("--status-port", type=int, default=None)
    p_proxy.set_defaults(func=cmd_proxy)

    p_bench = sub.add_parser("bench", help="benchmark experiments")
    bench_sub = p_bench.add_subparsers(dest="bench_kind", required=True)
    for kind in ("local", "full", "comm"):
        p_b = bench_sub.add_parser(kind)
        p_b.add_argument("--spec", required=True, help="benchmark spec JSON")
        p_b.add_argument("--out", required=True, help="report path (.csv or .json)")
        p_b.add_argument("--creds", help="credential bundle directory")
        p_b.set_defaults(func=cmd_bench)

    p_exp = sub.add_parser("exp", help="network-wide experiments")
    exp_sub = p_exp.add_subparsers(dest="exp_kind", required=True)
    p_reconf = exp_sub.add_parser("reconfig", help="dynamic reconfiguration experiment")
    p_reconf.add_argument("--intent", required=True)
    p_reconf.add_argument("--schedule", required=True)
    p_reconf.add_argument("--interval", type=float, required=True, help="flow interval [s]")
    p_reconf.add_argument("--flow", default="S,D", help="src,dst host ids")
    p_reconf.add_argument("--mode", default="remote", choices=["local", "remote"])
    p_reconf.add_argument("--out", required=True)
    p_reconf.add_argument("--creds", help="credential bundle directory")
    p_reconf.set_defaults(func=cmd_exp_reconfig)

    return parser


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 1
    except Exception as e:
        if args.json_errors:
            print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        else:
            print(f"srv6kit: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
