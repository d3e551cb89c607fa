"""Longest-prefix-match FIB: a binary trie over prefix bits, one trie per
routing table.

Concurrency: one writer at a time (internal lock); readers traverse without
locking. Every mutation becomes visible through a single reference
assignment (linking a fully-built subtree, or setting/clearing a leaf's
entry), so a concurrent lookup observes either the old or the new state of
an entry, never a mixture. Removed entries leave their interior nodes in
place; at desk scale the memory cost is irrelevant.
"""

from __future__ import annotations

import ipaddress
import threading
from dataclasses import dataclass

from .model import DEFAULT_TABLE, EncapMode, Ipv6Prefix, SegmentList


class FibAlreadyExists(KeyError):
    pass


class FibNotFound(KeyError):
    pass


@dataclass(frozen=True)
class PlainForward:
    """Ordinary IPv6 forwarding toward a next hop out of a device."""

    next_hop: ipaddress.IPv6Address | None
    device: str


@dataclass(frozen=True)
class Srv6Steer:
    """Steer matching traffic into an SRv6 path (encap or insert)."""

    segments: SegmentList
    encapmode: EncapMode
    device: str


@dataclass(frozen=True)
class FibEntry:
    destination: Ipv6Prefix
    action: PlainForward | Srv6Steer


class _Node:
    __slots__ = ("zero", "one", "entry")

    def __init__(self):
        self.zero = None
        self.one = None
        self.entry = None


class _Table:
    def __init__(self):
        self.root = _Node()
        self.entries: dict[tuple[int, int], FibEntry] = {}


class Fib:
    """Multi-table LPM structure keyed by (destination prefix, table id)."""

    def __init__(self):
        self._tables: dict[int, _Table] = {}
        self._lock = threading.Lock()

    def _table(self, table: int) -> _Table:
        t = self._tables.get(table)
        if t is None:
            with self._lock:
                t = self._tables.setdefault(table, _Table())
        return t

    def add(self, entry: FibEntry, table: int = DEFAULT_TABLE) -> None:
        net = entry.destination.network_int()
        plen = entry.destination.prefix_len
        t = self._table(table)
        with self._lock:
            if (net, plen) in t.entries:
                raise FibAlreadyExists(str(entry.destination))
            node = t.root
            depth = 0
            while depth < plen:
                bit = (net >> (127 - depth)) & 1
                nxt = node.one if bit else node.zero
                if nxt is None:
                    break
                node = nxt
                depth += 1
            if depth == plen:
                t.entries[(net, plen)] = entry
                node.entry = entry  # single-assignment publish
                return
            # Build the missing chain detached, then link it in one step.
            head = _Node()
            cur = head
            for d in range(depth + 1, plen):
                bit = (net >> (127 - d)) & 1
                child = _Node()
                if bit:
                    cur.one = child
                else:
                    cur.zero = child
                cur = child
            cur.entry = entry
            t.entries[(net, plen)] = entry
            bit = (net >> (127 - depth)) & 1
            if bit:
                node.one = head  # publish
            else:
                node.zero = head

    def remove(self, destination: Ipv6Prefix, table: int = DEFAULT_TABLE) -> FibEntry:
        net = destination.network_int()
        plen = destination.prefix_len
        t = self._table(table)
        with self._lock:
            old = t.entries.pop((net, plen), None)
            if old is None:
                raise FibNotFound(str(destination))
            node = t.root
            for depth in range(plen):
                bit = (net >> (127 - depth)) & 1
                node = node.one if bit else node.zero
            node.entry = None  # publish
            return old

    def update(self, entry: FibEntry, table: int = DEFAULT_TABLE) -> FibEntry:
        net = entry.destination.network_int()
        plen = entry.destination.prefix_len
        t = self._table(table)
        with self._lock:
            old = t.entries.get((net, plen))
            if old is None:
                raise FibNotFound(str(entry.destination))
            t.entries[(net, plen)] = entry
            node = t.root
            for depth in range(plen):
                bit = (net >> (127 - depth)) & 1
                node = node.one if bit else node.zero
            node.entry = entry  # publish: readers see old or new, whole
            return old

    def lookup(
        self, addr: ipaddress.IPv6Address | int, table: int = DEFAULT_TABLE
    ) -> FibEntry | None:
        """Longest matching entry for addr, or None. Lock-free."""
        t = self._tables.get(table)
        if t is None:
            return None
        a = int(addr)
        node = t.root
        best = node.entry
        for depth in range(128):
            node = node.one if (a >> (127 - depth)) & 1 else node.zero
            if node is None:
                break
            if node.entry is not None:
                best = node.entry
        return best

    def list(self, table: int = DEFAULT_TABLE) -> list[FibEntry]:
        """Entries sorted by (prefix, prefix_len) for deterministic output."""
        t = self._tables.get(table)
        if t is None:
            return []
        with self._lock:
            items = sorted(t.entries.items())
        return [e for _, e in items]

    def tables(self) -> list[int]:
        with self._lock:
            return sorted(tid for tid, t in self._tables.items() if t.entries)

    def clear(self, table: int | None = None) -> None:
        with self._lock:
            if table is None:
                self._tables = {}
            else:
                self._tables.pop(table, None)
