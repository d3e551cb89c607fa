"""Controller-side library: topology extraction from link-state database
dumps, shortest-path computation for compiling intents into segment lists,
a transport-agnostic policy client, and the timed reconfiguration driver.
"""

from __future__ import annotations

import heapq
import json
import logging
import threading
import time
from dataclasses import dataclass, field

from .model import Ipv6Prefix, PathPolicy, PolicyReply, PolicyRequest, ReplyStatus, SegmentList
from .transports import (
    ClientCreds,
    ClientSession,
    HandshakeMode,
    InteractionMode,
    SecurityMode,
    TransportError,
    TransportKind,
    open_session,
)

log = logging.getLogger("srv6kit.controller")


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SourceUnavailable(RuntimeError):
    pass


class Unreachable(Exception):
    pass


class EnforcementFailed(RuntimeError):
    def __init__(self, message: str, log_so_far: "ReconfigLog"):
        super().__init__(message)
        self.partial_log = log_so_far


@dataclass(frozen=True)
class TopoNode:
    node_id: str
    sid: Ipv6Prefix


@dataclass(frozen=True)
class TopoEdge:
    a: str
    b: str
    cost: int
    prefix: Ipv6Prefix


@dataclass(frozen=True)
class TopologyGraph:
    nodes: frozenset[TopoNode]
    edges: frozenset[TopoEdge]
    generation: int = 0

    def node_ids(self) -> set[str]:
        return {n.node_id for n in self.nodes}

    def neighbors(self, node_id: str) -> list[tuple[str, int]]:
        out = []
        for e in self.edges:
            if e.a == node_id:
                out.append((e.b, e.cost))
            elif e.b == node_id:
                out.append((e.a, e.cost))
        return out

    def same_topology(self, other: "TopologyGraph") -> bool:
        return self.nodes == other.nodes and self.edges == other.edges


def parse_lsdb_dump(text: str) -> TopologyGraph:
    """Parse the canonical LSDB dump grammar:

        router <id> sid <ipv6/len>
        link <id-a> <id-b> cost <int> prefix <ipv6/len>

    Lines starting with # are comments. Line order is irrelevant except
    that links may only reference declared routers.
    """
    nodes: dict[str, TopoNode] = {}
    edges: set[TopoEdge] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        toks = line.split()
        if toks[0] == "router":
            if len(toks) != 4 or toks[2] != "sid":
                raise ParseError(line_no, f"bad router line: {raw!r}")
            try:
                sid = Ipv6Prefix.parse(toks[3])
            except ValueError as e:
                raise ParseError(line_no, f"bad sid: {e}") from e
            if toks[1] in nodes:
                raise ParseError(line_no, f"router {toks[1]} declared twice")
            nodes[toks[1]] = TopoNode(toks[1], sid)
        elif toks[0] == "link":
            if len(toks) != 7 or toks[3] != "cost" or toks[5] != "prefix":
                raise ParseError(line_no, f"bad link line: {raw!r}")
            a, b = toks[1], toks[2]
            for r in (a, b):
                if r not in nodes:
                    raise ParseError(line_no, f"link references undeclared router {r}")
            try:
                cost = int(toks[4])
                prefix = Ipv6Prefix.parse(toks[6])
            except ValueError as e:
                raise ParseError(line_no, f"bad link attributes: {e}") from e
            # store undirected edges canonically
            if a > b:
                a, b = b, a
            edges.add(TopoEdge(a, b, cost, prefix))
        else:
            raise ParseError(line_no, f"unknown record {toks[0]!r}")
    return TopologyGraph(frozenset(nodes.values()), frozenset(edges))


def poll_topology(source, interval: float, max_failures: int = 3):
    """Poll an LSDB source (a callable returning dump text) and yield a new
    TopologyGraph generation whenever the parsed topology changes.

    Transient source failures are retried with backoff; after max_failures
    consecutive failures SourceUnavailable is raised.
    """
    if interval < 0.1:
        raise ValueError("poll interval must be >= 100 ms")
    previous: TopologyGraph | None = None
    generation = 0
    failures = 0
    while True:
        try:
            text = source()
        except Exception as e:
            failures += 1
            if failures >= max_failures:
                raise SourceUnavailable(f"{failures} consecutive failures: {e}") from e
            time.sleep(interval * failures)
            continue
        failures = 0
        graph = parse_lsdb_dump(text)
        if previous is None or not graph.same_topology(previous):
            generation += 1
            graph = TopologyGraph(graph.nodes, graph.edges, generation)
            previous = graph
            yield graph
        time.sleep(interval)


def shortest_path(graph: TopologyGraph, src: str, dst: str) -> list[str]:
    """Minimum-cost path; equal-cost ties break to the lexicographically
    smallest node sequence so results are deterministic."""
    ids = graph.node_ids()
    if src not in ids or dst not in ids:
        raise Unreachable(f"unknown node {src if src not in ids else dst}")
    if src == dst:
        return [src]
    heap: list[tuple[int, tuple[str, ...]]] = [(0, (src,))]
    best: dict[str, tuple[int, tuple[str, ...]]] = {}
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node == dst:
            return list(path)
        seen = best.get(node)
        if seen is not None and seen <= (cost, path):
            continue
        best[node] = (cost, path)
        for neighbor, edge_cost in graph.neighbors(node):
            if neighbor in path:
                continue
            heapq.heappush(heap, (cost + edge_cost, path + (neighbor,)))
    raise Unreachable(f"no path {src} -> {dst}")


# -------------------------------------------------------- policy client ----


class PolicyClient:
    """Thin convenience wrapper over a transport session: create, remove,
    update and get mirroring the agent's request handling."""

    def __init__(
        self,
        host: str,
        port: int,
        kind: TransportKind,
        *,
        mode: InteractionMode = InteractionMode.P_CONN,
        security: SecurityMode = SecurityMode.INSECURE,
        creds: ClientCreds | None = None,
        handshake: HandshakeMode = HandshakeMode.PERSISTENT,
        timeout: float = 30.0,
    ):
        self.session: ClientSession = open_session(
            kind,
            host,
            port,
            mode=mode,
            security=security,
            creds=creds,
            handshake=handshake,
            timeout=timeout,
        )

    def create(self, *paths: PathPolicy) -> PolicyReply:
        return self.session.send(PolicyRequest.create(*paths))[0]

    def remove(self, *paths: PathPolicy) -> PolicyReply:
        return self.session.send(PolicyRequest.remove(*paths))[0]

    def update(self, *paths: PathPolicy) -> PolicyReply:
        return self.session.send(PolicyRequest.update(*paths))[0]

    def get(self) -> list[PathPolicy]:
        reply = self.session.send(PolicyRequest.get())[0]
        return list(reply.paths)

    def close(self) -> None:
        self.session.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ------------------------------------------------------ reconfiguration ----


@dataclass(frozen=True)
class ReconfigSchedule:
    """Rotate a destination through segment lists, one dwell interval each."""

    destination: Ipv6Prefix
    segment_lists: tuple[SegmentList, ...]
    dwell_s: float
    device: str = "sr0"
    table: int = 254
    transport: str = "ssh-cli"  # or "local" to bypass the southbound API
    mode: str = "p-conn"
    secure: bool = True

    def validate(self) -> list[str]:
        problems = []
        if len(self.segment_lists) < 2:
            problems.append("schedule needs at least 2 segment lists")
        if self.dwell_s <= 0:
            problems.append("dwell must be > 0")
        if any(len(sl) == 0 for sl in self.segment_lists):
            problems.append("segment lists must be non-empty")
        return problems

    @classmethod
    def from_json(cls, path: str) -> "ReconfigSchedule":
        with open(path) as f:
            raw = json.load(f)
        return cls(
            destination=Ipv6Prefix.parse(raw["destination"]),
            segment_lists=tuple(SegmentList.of(*sl) for sl in raw["segment_lists"]),
            dwell_s=float(raw["dwell_s"]),
            device=raw.get("device", "sr0"),
            table=int(raw.get("table", 254)),
            transport=raw.get("transport", "ssh-cli"),
            mode=raw.get("mode", "p-conn"),
            secure=raw.get("secure", True),
        )


@dataclass
class ReconfigLog:
    """Per-switch record: (switch index, planned monotonic time, completion
    monotonic time, reply status)."""

    started_at: float = 0.0
    switches: list[tuple[int, float, float, str]] = field(default_factory=list)

    def jitters(self) -> list[float]:
        return [done - planned for _, planned, done, _ in self.switches]


class _Enforcer:
    """Either a transport-backed policy client or a local apply function."""

    def __init__(self, apply_fn):
        self.apply = apply_fn


def local_enforcer(agent) -> _Enforcer:
    return _Enforcer(agent.apply_request)


def transport_enforcer(client: PolicyClient) -> _Enforcer:
    return _Enforcer(lambda req: client.session.send(req)[0])


def run_reconfig(
    schedule: ReconfigSchedule,
    enforcer: _Enforcer,
    *,
    stop: threading.Event | None = None,
    started: threading.Event | None = None,
) -> ReconfigLog:
    """Install the first segment list, then at each dwell boundary update
    the destination to the next list. Returns per-switch timing; raises
    EnforcementFailed (carrying the partial log) if an update is rejected.

    The started event (when given) fires once the initial list is in
    place, so traffic can begin exactly then. Boundaries are computed from
    the start time, not cumulatively, so scheduler jitter does not
    accumulate across switches.
    """
    problems = schedule.validate()
    if problems:
        raise ValueError("; ".join(problems))
    rlog = ReconfigLog()

    def path_for(sl: SegmentList) -> PathPolicy:
        return PathPolicy(
            destination=schedule.destination,
            segments=sl,
            device=schedule.device,
            table=schedule.table,
        )

    first = enforcer.apply(PolicyRequest.create(path_for(schedule.segment_lists[0])))
    if first.status not in (ReplyStatus.OK, ReplyStatus.ALREADY_EXISTS):
        raise EnforcementFailed(f"initial install failed: {first.status.value}", rlog)
    if first.status is ReplyStatus.ALREADY_EXISTS:
        first = enforcer.apply(PolicyRequest.update(path_for(schedule.segment_lists[0])))
        if first.status is not ReplyStatus.OK:
            raise EnforcementFailed(f"initial install failed: {first.status.value}", rlog)

    rlog.started_at = time.monotonic()
    if started is not None:
        started.set()
    for i, seg_list in enumerate(schedule.segment_lists[1:], start=1):
        boundary = rlog.started_at + i * schedule.dwell_s
        while True:
            now = time.monotonic()
            if now >= boundary:
                break
            if stop is not None and stop.is_set():
                return rlog
            time.sleep(min(0.005, boundary - now))
        try:
            reply = enforcer.apply(PolicyRequest.update(path_for(seg_list)))
        except TransportError as e:
            raise EnforcementFailed(f"switch {i}: {e}", rlog) from e
        done = time.monotonic()
        rlog.switches.append((i, boundary, done, reply.status.value))
        if reply.status is not ReplyStatus.OK:
            raise EnforcementFailed(f"switch {i} failed: {reply.status.value}", rlog)
        log.info(
            "reconfig switch %d -> %s (jitter %.1f ms)",
            i,
            seg_list,
            (done - boundary) * 1000,
        )
    return rlog
