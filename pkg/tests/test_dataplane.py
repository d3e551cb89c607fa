import ipaddress

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import segment_lists
from srv6kit.dataplane import (
    Deliver,
    Drop,
    Forward,
    NotActiveSegment,
    NotDecapsulatable,
    SimNode,
    SimPacket,
    Srh,
    SrhError,
    SrhExhausted,
    node_forward,
    process_segment_endpoint,
    srv6_decap,
    srv6_encap,
    srv6_insert,
)
from srv6kit.lpm import FibEntry, PlainForward, Srv6Steer
from srv6kit.model import EncapMode, Ipv6Prefix, SegmentList

A1, A2, A3, A4 = (ipaddress.IPv6Address(f"fc00::{i}") for i in (1, 2, 3, 4))


def test_srh_rejects_bad_index():
    with pytest.raises(SrhError):
        Srh(SegmentList.of(str(A2)), 1)


class TestWorkedExample:
    """A1 sends to A4 through intermediate segments A2 and A3: the pointer
    walks 2 -> 1 -> 0 while the destination walks A2 -> A3 -> A4."""

    def test_full_walk(self):
        pkt = SimPacket(src=A1, dst=A4)
        enc = srv6_encap(pkt, SegmentList((A2, A3, A4)), outer_src=A1)
        assert (enc.dst, enc.srh.segments_left) == (A2, 2)
        hop1 = process_segment_endpoint(enc)
        assert (hop1.dst, hop1.srh.segments_left) == (A3, 1)
        hop2 = process_segment_endpoint(hop1)
        assert (hop2.dst, hop2.srh.segments_left) == (A4, 0)
        # segment list itself never changed
        assert hop2.srh.segments == enc.srh.segments
        assert srv6_decap(hop2) == pkt

    def test_single_segment_encap(self):
        enc = srv6_encap(SimPacket(src=A1, dst=A4), SegmentList((A4,)), outer_src=A1)
        assert (enc.dst, enc.srh.segments_left) == (A4, 0)

    def test_wrong_active_segment(self):
        from dataclasses import replace

        enc = srv6_encap(SimPacket(src=A1, dst=A4), SegmentList((A2, A3)), outer_src=A1)
        with pytest.raises(NotActiveSegment):
            process_segment_endpoint(replace(enc, dst=A3))

    def test_exhausted(self):
        enc = srv6_encap(SimPacket(src=A1, dst=A4), SegmentList((A4,)), outer_src=A1)
        with pytest.raises(SrhExhausted):
            process_segment_endpoint(enc)


class TestInsert:
    def test_original_destination_becomes_last_segment(self):
        pkt = SimPacket(src=A1, dst=A4)
        ins = srv6_insert(pkt, SegmentList((A2, A3)))
        assert ins.dst == A2
        assert tuple(ins.srh.segments) == (A2, A3, A4)
        assert ins.srh.segments_left == 2
        assert ins.inner is None

    def test_minimal_insert(self):
        ins = srv6_insert(SimPacket(src=A1, dst=A4), SegmentList((A2,)))
        assert ins.dst == A2
        assert ins.srh.segments_left == 1
        assert tuple(ins.srh.segments) == (A2, A4)

    def test_full_traversal_restores_destination(self):
        pkt = SimPacket(src=A1, dst=A4)
        cur = srv6_insert(pkt, SegmentList((A2, A3)))
        while cur.srh.segments_left > 0:
            cur = process_segment_endpoint(cur)
        assert cur.dst == A4
        assert cur.srh.segments_left == 0

    @given(segment_lists(min_size=1, max_size=6))
    def test_traversal_property(self, segs):
        pkt = SimPacket(src=A1, dst=A4)
        cur = srv6_insert(pkt, segs)
        seen = [cur.dst]
        while cur.srh.segments_left > 0:
            cur = process_segment_endpoint(cur)
            seen.append(cur.dst)
        assert seen == list(segs) + [A4]


class TestDecap:
    def test_roundtrip_identity(self):
        pkt = SimPacket(src=A1, dst=A4, payload_len=99, flow_id=7)
        enc = srv6_encap(pkt, SegmentList((A4,)), outer_src=A1)
        assert srv6_decap(enc) == pkt

    def test_rejects_pending_segments(self):
        enc = srv6_encap(SimPacket(src=A1, dst=A4), SegmentList((A2, A4)), outer_src=A1)
        with pytest.raises(NotDecapsulatable):
            srv6_decap(enc)

    def test_rejects_insert_mode(self):
        ins = srv6_insert(SimPacket(src=A1, dst=A4), SegmentList((A2,)))
        done = process_segment_endpoint(ins)
        with pytest.raises(NotDecapsulatable):
            srv6_decap(done)

    @given(segment_lists(min_size=1, max_size=6))
    def test_encap_decap_property(self, segs):
        pkt = SimPacket(src=A1, dst=A4)
        cur = srv6_encap(pkt, segs, outer_src=A1)
        while cur.srh.segments_left > 0:
            cur = process_segment_endpoint(cur)
        assert srv6_decap(cur) == pkt


class TestNodeForward:
    def make_node(self):
        node = SimNode("N1")
        node.add_local("fcff:1::1")
        return node

    def test_plain_forward(self):
        node = self.make_node()
        node.fib.add(FibEntry(Ipv6Prefix.parse("fc00:d::/64"), PlainForward(None, "to-N2")))
        decision = node_forward(node, SimPacket(src=A1, dst=ipaddress.IPv6Address("fc00:d::5")))
        assert isinstance(decision, Forward) and decision.egress == "to-N2"

    def test_no_route_drops(self):
        decision = node_forward(self.make_node(), SimPacket(src=A1, dst=A4))
        assert isinstance(decision, Drop) and decision.reason == "no-route"

    def test_steer_encapsulates_then_forwards(self):
        node = self.make_node()
        node.fib.add(
            FibEntry(
                Ipv6Prefix.parse("fc00:d::/64"),
                Srv6Steer(SegmentList.of("fcff:2::1", "fcff:4::1"), EncapMode.ENCAP, "sr0"),
            )
        )
        node.fib.add(FibEntry(Ipv6Prefix.parse("fcff:2::/64"), PlainForward(None, "to-N2")))
        decision = node_forward(node, SimPacket(src=A1, dst=ipaddress.IPv6Address("fc00:d::5")))
        assert isinstance(decision, Forward)
        assert decision.egress == "to-N2"
        assert decision.packet.dst == ipaddress.IPv6Address("fcff:2::1")
        assert decision.packet.srh.segments_left == 1
        assert decision.packet.inner is not None

    def test_segment_endpoint_advances_and_relooks(self):
        node = SimNode("N2")
        node.add_local("fcff:2::1")
        node.fib.add(FibEntry(Ipv6Prefix.parse("fcff:4::/64"), PlainForward(None, "to-N4")))
        inner = SimPacket(src=A1, dst=ipaddress.IPv6Address("fc00:d::5"))
        pkt = srv6_encap(inner, SegmentList.of("fcff:2::1", "fcff:4::1"), outer_src=A1)
        decision = node_forward(node, pkt)
        assert isinstance(decision, Forward) and decision.egress == "to-N4"
        assert decision.packet.dst == ipaddress.IPv6Address("fcff:4::1")
        assert decision.packet.srh.segments_left == 0

    def test_egress_decapsulates_and_forwards_inner(self):
        node = SimNode("N4")
        node.add_local("fcff:4::1")
        node.fib.add(FibEntry(Ipv6Prefix.parse("fc00:d::/64"), PlainForward(None, "to-D")))
        inner = SimPacket(src=A1, dst=ipaddress.IPv6Address("fc00:d::5"))
        pkt = srv6_encap(inner, SegmentList.of("fcff:4::1"), outer_src=A1)
        decision = node_forward(node, pkt)
        assert isinstance(decision, Forward) and decision.egress == "to-D"
        assert decision.packet == inner

    def test_local_delivery(self):
        node = self.make_node()
        decision = node_forward(node, SimPacket(src=A1, dst=ipaddress.IPv6Address("fcff:1::1")))
        assert isinstance(decision, Deliver)

    def test_counters_snapshot(self):
        node = self.make_node()
        node.count("to-N2", "rx")
        node.count("to-N2", "rx")
        node.count("to-N2", "tx")
        assert node.counters() == {("to-N2", "rx"): 2, ("to-N2", "tx"): 1}

    def test_trace_line_format(self):
        node = self.make_node()
        lines = []
        node.trace = lines.append
        pkt = srv6_encap(SimPacket(src=A1, dst=A4, flow_id=9), SegmentList((A2, A4)), outer_src=A1)
        node.emit_trace("to-N2", "tx", pkt)
        fields = lines[0].split()
        assert len(fields) == 7
        assert fields[1:4] == ["N1", "to-N2", "tx"]
        assert fields[4] == str(A2)
        assert fields[5] == "1"
        assert fields[6] == "9"
