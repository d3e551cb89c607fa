import ipaddress
import random
import threading

import pytest

from srv6kit.lpm import Fib, FibAlreadyExists, FibEntry, FibNotFound, PlainForward, Srv6Steer
from srv6kit.model import EncapMode, Ipv6Prefix, SegmentList


def entry(prefix: str, dev: str = "eth0") -> FibEntry:
    return FibEntry(Ipv6Prefix.parse(prefix), PlainForward(None, dev))


def steer(prefix: str, *segs: str) -> FibEntry:
    return FibEntry(
        Ipv6Prefix.parse(prefix),
        Srv6Steer(SegmentList.of(*segs), EncapMode.ENCAP, "eth0"),
    )


class TestBasics:
    def test_single_entry_hit(self):
        fib = Fib()
        fib.add(entry("fc00:4::/64"))
        assert fib.lookup(ipaddress.IPv6Address("fc00:4::d")).destination.prefix_len == 64

    def test_longest_match_wins(self):
        fib = Fib()
        fib.add(entry("fc00::/16", "short"))
        fib.add(entry("fc00:4::/64", "long"))
        assert fib.lookup(ipaddress.IPv6Address("fc00:4::d")).action.device == "long"
        assert fib.lookup(ipaddress.IPv6Address("fc00:5::d")).action.device == "short"

    def test_default_route(self):
        fib = Fib()
        fib.add(entry("::/0", "default"))
        assert fib.lookup(ipaddress.IPv6Address("1234::1")).action.device == "default"

    def test_duplicate_raises(self):
        fib = Fib()
        fib.add(entry("fc00::/64"))
        with pytest.raises(FibAlreadyExists):
            fib.add(entry("fc00::/64"))

    def test_same_prefix_other_table_ok(self):
        fib = Fib()
        fib.add(entry("fc00::/64"), table=254)
        fib.add(entry("fc00::/64"), table=100)
        assert fib.lookup(ipaddress.IPv6Address("fc00::1"), table=100) is not None

    def test_remove_falls_back(self):
        fib = Fib()
        fib.add(entry("fc00::/16", "short"))
        fib.add(entry("fc00:4::/64", "long"))
        fib.remove(Ipv6Prefix.parse("fc00:4::/64"))
        assert fib.lookup(ipaddress.IPv6Address("fc00:4::d")).action.device == "short"
        fib.remove(Ipv6Prefix.parse("fc00::/16"))
        assert fib.lookup(ipaddress.IPv6Address("fc00:4::d")) is None

    def test_remove_missing(self):
        with pytest.raises(FibNotFound):
            Fib().remove(Ipv6Prefix.parse("fc00::/64"))

    def test_update_replaces(self):
        fib = Fib()
        fib.add(steer("fc00::/64", "fcff:2::1"))
        fib.update(steer("fc00::/64", "fcff:3::1", "fcff:4::1"))
        got = fib.lookup(ipaddress.IPv6Address("fc00::1"))
        assert len(got.action.segments) == 2

    def test_update_missing(self):
        with pytest.raises(FibNotFound):
            Fib().update(entry("fc00::/64"))

    def test_list_sorted_and_tracks_membership(self):
        fib = Fib()
        a, b = entry("fc00:b::/64", "b"), entry("fc00:a::/64", "a")
        fib.add(a)
        fib.add(b)
        fib.remove(a.destination)
        assert fib.list() == [b]

    def test_list_sorted_by_prefix_then_len(self):
        fib = Fib()
        for p in ("fc00:2::/64", "fc00::/16", "fc00::/64"):
            fib.add(entry(p))
        listed = [str(e.destination) for e in fib.list()]
        assert listed == ["fc00::/16", "fc00::/64", "fc00:2::/64"]


class TestOracle:
    """LPM equivalence against a linear-scan longest-match oracle."""

    @staticmethod
    def oracle_lookup(entries, addr: int):
        best = None
        best_len = -1
        for net, plen, e in entries:
            if plen > best_len and (plen == 0 or (addr >> (128 - plen)) == (net >> (128 - plen))):
                best, best_len = e, plen
        return best

    def test_random_prefixes_match_oracle(self):
        rng = random.Random(1234)
        fib = Fib()
        entries = []
        seen = set()
        while len(entries) < 1000:
            plen = rng.randint(0, 128)
            addr = rng.getrandbits(128)
            net = addr if plen == 128 else (addr >> (128 - plen)) << (128 - plen) if plen else 0
            if (net, plen) in seen:
                continue
            seen.add((net, plen))
            e = entry(f"{ipaddress.IPv6Address(net)}/{plen}", dev=str(len(entries)))
            fib.add(e)
            entries.append((net, plen, e))
        for _ in range(10_000):
            if rng.random() < 0.5:
                # probe near an installed prefix so long matches get exercised
                net, plen, _ = entries[rng.randrange(len(entries))]
                addr = net | (rng.getrandbits(128 - plen) if plen < 128 else 0)
            else:
                addr = rng.getrandbits(128)
            assert fib.lookup(ipaddress.IPv6Address(addr)) is self.oracle_lookup(entries, addr)


class TestConcurrency:
    def test_update_is_atomic_under_readers(self):
        """Readers racing an update must never see a half-written entry."""
        fib = Fib()
        dest = Ipv6Prefix.parse("fc00::/64")
        variants = [steer("fc00::/64", f"fcff:{i}::1", f"fcff:{i}::2") for i in range(1, 6)]
        fib.add(variants[0])
        stop = threading.Event()
        bad = []

        def reader():
            addr = ipaddress.IPv6Address("fc00::1")
            while not stop.is_set():
                got = fib.lookup(addr)
                if got is None or got not in variants:
                    bad.append(got)
                    return

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for t in threads:
            t.start()
        for _ in range(2000):
            fib.update(variants[_ % 5])
        stop.set()
        for t in threads:
            t.join()
        assert bad == []

    def test_add_remove_visible_to_readers(self):
        fib = Fib()
        fib.add(entry("fc00::/16", "fallback"))
        stop = threading.Event()
        bad = []

        def reader():
            addr = ipaddress.IPv6Address("fc00:4::1")
            while not stop.is_set():
                got = fib.lookup(addr)
                if got is None or got.action.device not in ("fallback", "specific"):
                    bad.append(got)
                    return

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for t in threads:
            t.start()
        specific = entry("fc00:4::/64", "specific")
        for _ in range(1000):
            fib.add(specific)
            fib.remove(specific.destination)
        stop.set()
        for t in threads:
            t.join()
        assert bad == []
