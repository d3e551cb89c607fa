"""Intent-driven in-process network emulation.

An intent file names routers, hosts, links and a controller attachment;
build_network turns it into simulated nodes with a deterministic IPv6
address plan, plain-IPv6 routes along shortest paths (standing in for the
IGP), and a running southbound agent per router bound to loopback ports.

Flows are generated on a real-time clock and forwarded packet by packet
through the simulated data plane, counting arrivals per ingress interface
at the egress router - the measurement the reconfiguration experiment is
built on.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import threading
import time
from dataclasses import dataclass, field

from .agent import Agent, AgentConfig, DirectBackend, PolicyStore, TransportConfig
from .controller import (
    ReconfigSchedule,
    TopoEdge,
    TopoNode,
    TopologyGraph,
    local_enforcer,
    run_reconfig,
    shortest_path,
    transport_enforcer,
    PolicyClient,
)
from .creds import CredentialBundle
from .dataplane import Deliver, Drop, Forward, SimNode, SimPacket, node_forward
from .lpm import FibEntry, PlainForward
from .model import Ipv6Prefix
from .transports import ClientCreds, HandshakeMode, InteractionMode, SecurityMode, TransportKind

log = logging.getLogger("srv6kit.emulation")

MAX_HOPS = 64


class InvalidIntent(ValueError):
    pass


@dataclass(frozen=True)
class HostSpec:
    id: str
    router: str


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    cost: int = 1
    latency_s: float = 0.0
    loss: float = 0.0


@dataclass(frozen=True)
class IntentTopology:
    routers: tuple[str, ...]
    hosts: tuple[HostSpec, ...] = ()
    links: tuple[LinkSpec, ...] = ()
    controller: str | None = None

    @classmethod
    def from_json(cls, path: str) -> "IntentTopology":
        with open(path) as f:
            raw = json.load(f)
        hosts = tuple(HostSpec(h["id"], h["router"]) for h in raw.get("hosts", []))
        links = []
        for link in raw.get("links", []):
            if isinstance(link, dict):
                links.append(
                    LinkSpec(
                        link["a"],
                        link["b"],
                        int(link.get("cost", 1)),
                        float(link.get("latency_s", 0.0)),
                        float(link.get("loss", 0.0)),
                    )
                )
            else:
                links.append(LinkSpec(link[0], link[1]))
        return cls(
            routers=tuple(raw["routers"]),
            hosts=hosts,
            links=tuple(links),
            controller=raw.get("controller"),
        )

    def validate(self) -> list[str]:
        problems = []
        routers = set(self.routers)
        if len(routers) != len(self.routers):
            problems.append("duplicate router ids")
        names = routers | {h.id for h in self.hosts}
        if len(names) != len(self.routers) + len(self.hosts):
            problems.append("host ids must not collide with router ids")
        for host in self.hosts:
            if host.router not in routers:
                problems.append(f"host {host.id} attaches to unknown router {host.router}")
        seen_pairs = set()
        for link in self.links:
            for end in (link.a, link.b):
                if end not in routers:
                    problems.append(f"link {link.a}-{link.b} references unknown router {end}")
            if link.a == link.b:
                problems.append(f"link {link.a}-{link.b} is a self-loop")
            pair = tuple(sorted((link.a, link.b)))
            if pair in seen_pairs:
                problems.append(f"duplicate link {link.a}-{link.b}")
            seen_pairs.add(pair)
        if self.controller is not None and self.controller not in routers:
            problems.append(f"controller attaches to unknown router {self.controller}")
        return problems


@dataclass(frozen=True)
class AddressPlan:
    """Deterministic function of the intent: routers, links and hosts are
    numbered in input order."""

    node_sids: dict
    link_prefixes: dict
    host_prefixes: dict
    host_addrs: dict

    @classmethod
    def build(cls, intent: IntentTopology) -> "AddressPlan":
        node_sids = {
            router: Ipv6Prefix.parse(f"fcff:{i}::1/128")
            for i, router in enumerate(intent.routers, start=1)
        }
        link_prefixes = {
            i: Ipv6Prefix.parse(f"fd00:0:{i}::/64")
            for i, _ in enumerate(intent.links, start=1)
        }
        host_prefixes = {
            h.id: Ipv6Prefix.parse(f"fd00:1:{i}::/64")
            for i, h in enumerate(intent.hosts, start=1)
        }
        host_addrs = {
            h.id: ipaddress.IPv6Address(f"fd00:1:{i}::2")
            for i, h in enumerate(intent.hosts, start=1)
        }
        return cls(node_sids, link_prefixes, host_prefixes, host_addrs)

    def to_json_obj(self) -> dict:
        return {
            "node_sids": {k: str(v) for k, v in sorted(self.node_sids.items())},
            "link_prefixes": {str(k): str(v) for k, v in sorted(self.link_prefixes.items())},
            "host_prefixes": {k: str(v) for k, v in sorted(self.host_prefixes.items())},
            "host_addrs": {k: str(v) for k, v in sorted(self.host_addrs.items())},
        }


@dataclass
class FlowSpec:
    src_host: str
    dst_host: str
    interval_s: float
    count: int | None = None
    duration_s: float | None = None
    flow_id: int = 1
    payload_len: int = 64

    def packet_count(self) -> int:
        if self.count is not None:
            return self.count
        if self.duration_s is not None:
            return max(1, round(self.duration_s / self.interval_s))
        raise ValueError("flow needs count or duration_s")


@dataclass
class FlowReport:
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    ingress_counts: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "sent": self.sent,
            "delivered": self.delivered,
            "lost": self.lost,
            "ingress_counts": dict(sorted(self.ingress_counts.items())),
        }


@dataclass
class SplitReport:
    """Table-style result of a reconfiguration run: arrivals at the egress
    router keyed by ingress interface, one interface per segment list."""

    sent: int
    lost: int
    received: dict
    switch_jitter_s: list = field(default_factory=list)

    @property
    def delivered(self) -> int:
        return sum(self.received.values())

    def to_json_obj(self) -> dict:
        return {
            "sent": self.sent,
            "lost": self.lost,
            "delivered": self.delivered,
            "received_per_interface": dict(sorted(self.received.items())),
            "switch_jitter_ms": [round(j * 1000, 3) for j in self.switch_jitter_s],
        }

    def render_table(self) -> str:
        lines = ["interface        received"]
        for iface, count in sorted(self.received.items()):
            lines.append(f"{iface:16s} {count}")
        lines.append(f"{'lost':16s} {self.lost}")
        lines.append(f"{'sent':16s} {self.sent}")
        return "\n".join(lines)


class EmulatedNetwork:
    def __init__(self, intent: IntentTopology, plan: AddressPlan):
        self.intent = intent
        self.plan = plan
        self.nodes: dict[str, SimNode] = {}
        self.adjacency: dict[tuple[str, str], tuple] = {}
        self.host_at: dict[str, str] = {h.id: h.router for h in intent.hosts}
        self.agents: dict[str, Agent] = {}
        self.links: dict[tuple[str, str], LinkSpec] = {}
        self._lock = threading.Lock()

    # interface naming: to-<peer> on each side
    @staticmethod
    def iface(peer: str) -> str:
        return f"to-{peer}"

    def topology_graph(self) -> TopologyGraph:
        nodes = frozenset(TopoNode(r, self.plan.node_sids[r]) for r in self.intent.routers)
        edges = frozenset(
            TopoEdge(*sorted((l.a, l.b)), cost=l.cost, prefix=self.plan.link_prefixes[i])
            for i, l in enumerate(self.intent.links, start=1)
        )
        return TopologyGraph(nodes, edges)

    def lsdb_dump(self) -> str:
        """The canonical link-state dump of this network (the text a
        topology-extraction poller would fetch)."""
        lines = [f"# lsdb dump of {len(self.intent.routers)} routers"]
        for router in self.intent.routers:
            lines.append(f"router {router} sid {self.plan.node_sids[router]}")
        for i, link in enumerate(self.intent.links, start=1):
            lines.append(
                f"link {link.a} {link.b} cost {link.cost} prefix {self.plan.link_prefixes[i]}"
            )
        return "\n".join(lines) + "\n"

    def sid_owner(self, segment: ipaddress.IPv6Address) -> str | None:
        for router, sid in self.plan.node_sids.items():
            if sid.address == segment:
                return router
        return None

    def host_addr(self, host_id: str) -> ipaddress.IPv6Address:
        return self.plan.host_addrs[host_id]

    def forward_packet(self, pkt: SimPacket, src_host: str) -> tuple[str, str, str] | None:
        """Push one packet from a host through the network.

        Returns (dst_host, egress_router, ingress_iface_at_egress) on
        delivery, None on drop. Counters on every traversed node are
        updated as a side effect.
        """
        router = self.host_at[src_host]
        node = self.nodes[router]
        iface_in = self.iface(src_host)
        for _ in range(MAX_HOPS):
            node.count(iface_in, "rx")
            node.emit_trace(iface_in, "rx", pkt)
            decision = node_forward(node, pkt)
            if isinstance(decision, Drop):
                return None
            if isinstance(decision, Deliver):
                # addressed to the router itself (nothing to forward)
                return None
            assert isinstance(decision, Forward)
            pkt = decision.packet
            egress = decision.egress
            node.count(egress, "tx")
            node.emit_trace(egress, "tx", pkt)
            peer = self.adjacency.get((node.node_id, egress))
            if peer is None:
                return None
            peer_kind, peer_id, peer_iface = peer
            if peer_kind == "host":
                return (peer_id, node.node_id, iface_in)
            link = self.links[(node.node_id, egress)]
            if link.latency_s > 0:
                time.sleep(link.latency_s)
            node = self.nodes[peer_id]
            iface_in = peer_iface
        return None

    def shutdown(self) -> None:
        for agent in self.agents.values():
            agent.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def build_network(
    intent: IntentTopology,
    *,
    bundle: CredentialBundle | None = None,
    agent_transports: tuple[str, ...] = (),
) -> EmulatedNetwork:
    """Instantiate the intent: nodes, addresses, plain routes, agents.

    After this, every host pair is reachable over plain IPv6 before any
    steering policy exists. Starting agents requires a credential bundle
    when agent_transports includes a TLS or SSH based transport.
    """
    problems = intent.validate()
    if problems:
        raise InvalidIntent("; ".join(problems))
    plan = AddressPlan.build(intent)
    net = EmulatedNetwork(intent, plan)
    graph = net.topology_graph()

    for router in intent.routers:
        node = SimNode(router)
        node.add_local(plan.node_sids[router].address)
        net.nodes[router] = node

    for i, link in enumerate(intent.links, start=1):
        prefix = plan.link_prefixes[i]
        base = int(prefix.address)
        ia, ib = net.iface(link.b), net.iface(link.a)
        net.adjacency[(link.a, ia)] = ("router", link.b, ib)
        net.adjacency[(link.b, ib)] = ("router", link.a, ia)
        net.links[(link.a, ia)] = link
        net.links[(link.b, ib)] = link
        net.nodes[link.a].add_local(ipaddress.IPv6Address(base + 1))
        net.nodes[link.b].add_local(ipaddress.IPv6Address(base + 2))

    for host in intent.hosts:
        iface = net.iface(host.id)
        net.adjacency[(host.router, iface)] = ("host", host.id, "eth0")
        prefix = plan.host_prefixes[host.id]
        net.nodes[host.router].add_local(ipaddress.IPv6Address(int(prefix.address) + 1))

    # plain IPv6 routes along shortest paths (the IGP stand-in)
    hosts_of: dict[str, list[HostSpec]] = {}
    for host in intent.hosts:
        hosts_of.setdefault(host.router, []).append(host)
    for router in intent.routers:
        node = net.nodes[router]
        for host in hosts_of.get(router, []):
            node.fib.add(
                FibEntry(plan.host_prefixes[host.id], PlainForward(None, net.iface(host.id)))
            )
        for other in intent.routers:
            if other == router:
                continue
            try:
                path = shortest_path(graph, router, other)
            except Exception:
                continue  # disconnected graphs are reported, not rejected
            egress = net.iface(path[1])
            hop = PlainForward(None, egress)
            node.fib.add(FibEntry(plan.node_sids[other], hop))
            for host in hosts_of.get(other, []):
                node.fib.add(FibEntry(plan.host_prefixes[host.id], hop))

    if agent_transports:
        needs_tls = any(t in ("rpc-bin", "rest") for t in agent_transports)
        needs_ssh = any(t in ("netconf", "ssh-cli") for t in agent_transports)
        if bundle is None and (needs_ssh or needs_tls):
            raise InvalidIntent("starting agents needs a credential bundle")
        for router in intent.routers:
            config = AgentConfig(
                node_id=router,
                transports={t: TransportConfig("127.0.0.1:0") for t in agent_transports},
                ssh_host_key=bundle.ssh_host_key if bundle else None,
                authorized_keys=bundle.authorized_keys if bundle else None,
                tls_cert=bundle.tls_cert if bundle else None,
                tls_key=bundle.tls_key if bundle else None,
            )
            net.agents[router] = Agent(config, fib=net.nodes[router].fib).start()
    return net


def run_flow(
    net: EmulatedNetwork,
    flow: FlowSpec,
    *,
    stop: threading.Event | None = None,
) -> FlowReport:
    """Emit the flow on a real-time clock, forwarding each packet through
    the simulator; arrivals are tallied per ingress interface at the
    destination's router."""
    if flow.interval_s < 0.001:
        raise ValueError("flow intervals below 1 ms are rejected")
    if flow.src_host not in net.host_at or flow.dst_host not in net.host_at:
        raise ValueError("unknown src or dst host")
    src_addr = net.host_addr(flow.src_host)
    dst_addr = net.host_addr(flow.dst_host)
    report = FlowReport()
    total = flow.packet_count()
    start = time.monotonic()
    for i in range(total):
        deadline = start + i * flow.interval_s
        while True:
            now = time.monotonic()
            if now >= deadline:
                break
            if stop is not None and stop.is_set():
                return report
            time.sleep(min(0.002, deadline - now))
        pkt = SimPacket(
            src=src_addr,
            dst=dst_addr,
            payload_len=flow.payload_len,
            flow_id=flow.flow_id,
        )
        report.sent += 1
        outcome = net.forward_packet(pkt, flow.src_host)
        if outcome is None:
            report.lost += 1
            continue
        dst_host, _egress_router, iface_in = outcome
        if dst_host == flow.dst_host:
            report.delivered += 1
            report.ingress_counts[iface_in] = report.ingress_counts.get(iface_in, 0) + 1
        else:
            report.lost += 1
    return report


def run_reconfig_experiment(
    net: EmulatedNetwork,
    flow: FlowSpec,
    schedule: ReconfigSchedule,
    *,
    mode: str = "remote",
    bundle: CredentialBundle | None = None,
) -> SplitReport:
    """The dynamic-reconfiguration experiment: a controller rotates the
    steering policy for the flow's destination through the scheduled
    segment lists while the flow runs; arrivals split by ingress interface
    at the egress router show which list carried each packet."""
    problems = schedule.validate()
    if problems:
        raise ValueError("; ".join(problems))
    for seg_list in schedule.segment_lists:
        for segment in seg_list:
            if net.sid_owner(segment) is None:
                raise ValueError(f"segment {segment} is not a SID in this network")

    ingress_router = net.host_at[flow.src_host]
    if mode == "local":
        agent = net.agents.get(ingress_router)
        if agent is not None:
            enforcer = local_enforcer(agent)
        else:
            store = PolicyStore(DirectBackend(net.nodes[ingress_router].fib))
            enforcer = local_enforcer(store)  # store has apply_request too
        client = None
    elif mode == "remote":
        agent = net.agents.get(ingress_router)
        if agent is None:
            raise ValueError(f"no agent running on ingress router {ingress_router}")
        kind = TransportKind(schedule.transport)
        host, port = agent.endpoints[schedule.transport]
        client = PolicyClient(
            host,
            port,
            kind,
            mode=InteractionMode(schedule.mode),
            security=SecurityMode.SECURE if schedule.secure else SecurityMode.INSECURE,
            creds=ClientCreds(
                tls_ca=bundle.tls_ca if bundle else None,
                ssh_client_key=bundle.ssh_client_key if bundle else None,
                ssh_host_pub=bundle.ssh_host_pub if bundle else None,
            ),
            handshake=HandshakeMode.PERSISTENT,
        )
        enforcer = transport_enforcer(client)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    # flow covers the whole schedule unless explicitly sized
    if flow.count is None and flow.duration_s is None:
        flow.duration_s = schedule.dwell_s * len(schedule.segment_lists)

    started = threading.Event()
    failure: list[Exception] = []
    rlog_box: list = []

    def reconfig_thread():
        try:
            rlog_box.append(run_reconfig(schedule, enforcer, started=started))
        except Exception as e:  # surfaced after the flow completes
            failure.append(e)
            started.set()

    runner = threading.Thread(target=reconfig_thread, name="reconfig", daemon=True)
    runner.start()
    if not started.wait(timeout=30):
        raise RuntimeError("initial policy install did not complete")
    if failure:
        raise failure[0]
    flow_report = run_flow(net, flow)
    runner.join(timeout=schedule.dwell_s + 30)
    if failure:
        raise failure[0]
    if client is not None:
        client.close()
    rlog = rlog_box[0] if rlog_box else None
    return SplitReport(
        sent=flow_report.sent,
        lost=flow_report.lost,
        received=dict(flow_report.ingress_counts),
        switch_jitter_s=rlog.jitters() if rlog else [],
    )
