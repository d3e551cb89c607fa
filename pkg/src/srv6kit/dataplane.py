"""Packet-level SRv6 data plane simulator.

Replaces the Linux kernel data path for experiments that need no
privileges: an LPM FIB per node plus the three SRH operations
(encapsulation, segment-endpoint processing, decapsulation).

Packets and SRHs are immutable; every operation returns a new packet.
The segment list of an SRH is never modified after creation, only the
Segments Left index and the IPv6 destination address change as the packet
traverses segment endpoints.
"""

from __future__ import annotations

import ipaddress
import threading
import time
from dataclasses import dataclass, replace

from .lpm import Fib, FibEntry, PlainForward, Srv6Steer
from .model import SegmentList

# Safety budget for re-lookups within one node (steer -> lookup -> steer...).
# Real traffic never needs more than a handful; a misconfigured FIB must not
# spin forever.
_MAX_TRANSFORMS = 16


class SrhError(Exception):
    pass


class NotActiveSegment(SrhError):
    """Packet destination is not the SRH's active segment."""


class SrhExhausted(SrhError):
    """Segments Left is already 0; no further segment to activate."""


class NotDecapsulatable(SrhError):
    """No inner packet, or the segment list is not fully consumed."""


@dataclass(frozen=True)
class Srh:
    """Segment Routing Header: segment list in application order plus the
    Segments Left index. segments_left counts the segments still to visit,
    so the active segment is indexed from the end of the list."""

    segments: SegmentList
    segments_left: int

    def __post_init__(self):
        if not 0 <= self.segments_left < len(self.segments):
            raise SrhError(
                f"segments_left {self.segments_left} out of range for "
                f"{len(self.segments)} segments"
            )

    @property
    def active_segment(self) -> ipaddress.IPv6Address:
        return self.segments[len(self.segments) - 1 - self.segments_left]


@dataclass(frozen=True)
class SimPacket:
    src: ipaddress.IPv6Address
    dst: ipaddress.IPv6Address
    srh: Srh | None = None
    inner: "SimPacket | None" = None
    payload_len: int = 64
    flow_id: int = 0


def srv6_encap(pkt: SimPacket, segs: SegmentList, outer_src: ipaddress.IPv6Address) -> SimPacket:
    """Push an outer IPv6 header carrying an SRH; the original packet
    travels unmodified as the inner packet."""
    if len(segs) == 0:
        raise SrhError("segment list must be non-empty")
    return SimPacket(
        src=outer_src,
        dst=segs[0],
        srh=Srh(segs, len(segs) - 1),
        inner=pkt,
        payload_len=pkt.payload_len,
        flow_id=pkt.flow_id,
    )


def srv6_insert(pkt: SimPacket, segs: SegmentList) -> SimPacket:
    """Push an SRH into the original packet: the original destination
    becomes the last segment of the list and the first segment becomes the
    new destination. No inner packet is created."""
    if len(segs) == 0:
        raise SrhError("segment list must be non-empty")
    full = SegmentList(tuple(segs) + (pkt.dst,))
    return replace(pkt, dst=segs[0], srh=Srh(full, len(full) - 1))


def process_segment_endpoint(pkt: SimPacket) -> SimPacket:
    """At the active segment's node: decrement Segments Left and copy the
    newly active segment into the destination address."""
    if pkt.srh is None:
        raise SrhError("packet carries no SRH")
    if pkt.srh.segments_left == 0:
        raise SrhExhausted("segments_left is already 0")
    if pkt.dst != pkt.srh.active_segment:
        raise NotActiveSegment(f"dst {pkt.dst} != active segment {pkt.srh.active_segment}")
    srh = Srh(pkt.srh.segments, pkt.srh.segments_left - 1)
    return replace(pkt, dst=srh.active_segment, srh=srh)


def srv6_decap(pkt: SimPacket) -> SimPacket:
    """Strip the outer header once the segment list is consumed."""
    if pkt.inner is None:
        raise NotDecapsulatable("no inner packet")
    if pkt.srh is not None and pkt.srh.segments_left != 0:
        raise NotDecapsulatable(f"segments_left is {pkt.srh.segments_left}, not 0")
    return pkt.inner


@dataclass(frozen=True)
class Forward:
    egress: str
    packet: SimPacket


@dataclass(frozen=True)
class Deliver:
    packet: SimPacket


@dataclass(frozen=True)
class Drop:
    reason: str
    packet: SimPacket


ForwardDecision = Forward | Deliver | Drop


class SimNode:
    """A forwarding node: local addresses, a FIB and per-interface counters."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.fib = Fib()
        self.local_addrs: set[ipaddress.IPv6Address] = set()
        self._counters: dict[tuple[str, str], int] = {}
        self._clock = threading.Lock()
        self.trace = None  # optional callable(line: str)

    def add_local(self, addr: ipaddress.IPv6Address | str) -> None:
        self.local_addrs.add(ipaddress.IPv6Address(addr))

    def count(self, iface: str, direction: str) -> None:
        with self._clock:
            key = (iface, direction)
            self._counters[key] = self._counters.get(key, 0) + 1

    def counters(self) -> dict[tuple[str, str], int]:
        """Atomic snapshot of per-interface rx/tx counters."""
        with self._clock:
            return dict(self._counters)

    def emit_trace(self, iface: str, direction: str, pkt: SimPacket) -> None:
        if self.trace is not None:
            sl = pkt.srh.segments_left if pkt.srh is not None else "-"
            self.trace(
                f"{time.monotonic_ns()} {self.node_id} {iface} {direction} "
                f"{pkt.dst} {sl} {pkt.flow_id}"
            )


def node_forward(node: SimNode, pkt: SimPacket) -> ForwardDecision:
    """One node's forwarding decision for a packet.

    Local destination with pending segments -> advance the SRH and look up
    again; consumed encapsulation -> decap and look up again; an LPM hit on
    a steering entry -> encap/insert and look up again; a plain entry ->
    forward; no match -> drop.
    """
    for _ in range(_MAX_TRANSFORMS):
        if pkt.dst in node.local_addrs:
            if pkt.srh is not None and pkt.srh.segments_left > 0:
                pkt = process_segment_endpoint(pkt)
                continue
            if pkt.inner is not None:
                pkt = srv6_decap(pkt)
                continue
            return Deliver(pkt)
        entry = _lookup_any_table(node.fib, pkt.dst)
        if entry is None:
            return Drop("no-route", pkt)
        if isinstance(entry.action, Srv6Steer):
            if entry.action.encapmode.value == "encap":
                src = next(iter(node.local_addrs), pkt.src)
                pkt = srv6_encap(pkt, entry.action.segments, src)
            else:
                pkt = srv6_insert(pkt, entry.action.segments)
            continue
        return Forward(entry.action.device, pkt)
    return Drop("loop-guard", pkt)


def _lookup_any_table(fib: Fib, addr: ipaddress.IPv6Address) -> FibEntry | None:
    # Main table first; a steering policy installed in another table is
    # still honored (tables beyond "main" exist for the API surface, not
    # for policy routing rules, which the simulator does not model).
    entry = fib.lookup(addr)
    if entry is not None:
        return entry
    for tid in fib.tables():
        if tid == 254:
            continue
        entry = fib.lookup(addr, table=tid)
        if entry is not None:
            return entry
    return None
