"""Userspace impairment proxy: a TCP relay that applies a fixed one-way
delay per direction, plus a loss model, while counting relayed traffic.

Each direction is a delay line: a reader thread stamps every chunk with a
delivery time (arrival + one-way delay) and a writer thread releases
chunks in order at their stamps, so back-to-back chunks are each delayed
but not serialized.

Because the relay carries a reliable byte stream, true segment loss is
invisible to the application except as added latency; a "lost" chunk is
modeled as a retransmission-timeout penalty of max(200 ms, 2 x RTT) added
to its delivery time (later chunks queue behind it, like a TCP stall).
Loss draws are deterministic given the profile seed and the chunk
sequence.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import socket
import threading
import time
from dataclasses import dataclass, field

log = logging.getLogger("srv6kit.netem")

CHUNK = 16 * 1024


class ProxyError(OSError):
    pass


@dataclass(frozen=True)
class ImpairmentProfile:
    one_way_delay_ms: int = 0
    loss_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.one_way_delay_ms < 0:
            raise ValueError("delay must be >= 0")
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError("loss probability must be in [0, 1)")

    @property
    def loss_penalty_s(self) -> float:
        rtt_s = 2 * self.one_way_delay_ms / 1000.0
        return max(0.2, 2 * rtt_s)

    @property
    def identity(self) -> bool:
        return self.one_way_delay_ms == 0 and self.loss_prob == 0.0


@dataclass
class ProxyCounters:
    chunks: dict[str, int] = field(default_factory=lambda: {"c2s": 0, "s2c": 0})
    bytes: dict[str, int] = field(default_factory=lambda: {"c2s": 0, "s2c": 0})
    loss_events: dict[str, int] = field(default_factory=lambda: {"c2s": 0, "s2c": 0})
    added_delay_s: dict[str, float] = field(default_factory=lambda: {"c2s": 0.0, "s2c": 0.0})
    connections: int = 0

    def snapshot(self) -> dict:
        return {
            "connections": self.connections,
            "chunks": dict(self.chunks),
            "bytes": dict(self.bytes),
            "loss_events": dict(self.loss_events),
            "added_delay_s": dict(self.added_delay_s),
        }


class _Relay:
    """One direction of one proxied connection."""

    def __init__(
        self,
        src: socket.socket,
        dst: socket.socket,
        direction: str,
        profile: ImpairmentProfile,
        counters: ProxyCounters,
        lock: threading.Lock,
    ):
        self.src = src
        self.dst = dst
        self.direction = direction
        self.profile = profile
        self.counters = counters
        self.lock = lock
        self.rng = random.Random((profile.rng_seed << 1) ^ (1 if direction == "c2s" else 2))
        self._queue: queue.Queue[tuple[float, bytes] | None] = queue.Queue()

    def start(self) -> list[threading.Thread]:
        threads = [
            threading.Thread(target=self._read_loop, daemon=True),
            threading.Thread(target=self._write_loop, daemon=True),
        ]
        for t in threads:
            t.start()
        return threads

    def _read_loop(self) -> None:
        delay = self.profile.one_way_delay_ms / 1000.0
        try:
            while True:
                data = self.src.recv(CHUNK)
                if not data:
                    break
                deliver_at = time.monotonic() + delay
                added = delay
                if self.profile.loss_prob > 0 and self.rng.random() < self.profile.loss_prob:
                    deliver_at += self.profile.loss_penalty_s
                    added += self.profile.loss_penalty_s
                    with self.lock:
                        self.counters.loss_events[self.direction] += 1
                with self.lock:
                    self.counters.chunks[self.direction] += 1
                    self.counters.bytes[self.direction] += len(data)
                    self.counters.added_delay_s[self.direction] += added
                self._queue.put((deliver_at, data))
        except OSError:
            pass
        finally:
            self._queue.put(None)

    def _write_loop(self) -> None:
        try:
            while True:
                item = self._queue.get()
                if item is None:
                    break
                deliver_at, data = item
                wait = deliver_at - time.monotonic()
                if wait > 0:
                    time.sleep(wait)
                self.dst.sendall(data)
        except OSError:
            pass
        finally:
            try:
                self.dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass


class NetemProxy:
    """Relays listen_endpoint -> upstream_endpoint with impairments."""

    def __init__(
        self,
        listen: tuple[str, int],
        upstream: tuple[str, int],
        profile: ImpairmentProfile | None = None,
    ):
        self.profile = profile or ImpairmentProfile()
        self.upstream = upstream
        self.counters = ProxyCounters()
        self._lock = threading.Lock()
        self._stop = False
        self._socks: set[socket.socket] = set()
        try:
            self._listener = socket.create_server(listen)
        except OSError as e:
            raise ProxyError(f"cannot bind {listen}: {e}") from e
        self.port = self._listener.getsockname()[1]
        threading.Thread(target=self._accept_loop, name=f"netem-{self.port}", daemon=True).start()

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                client, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._open_relay, args=(client,), daemon=True).start()

    def _open_relay(self, client: socket.socket) -> None:
        try:
            server = socket.create_connection(self.upstream, timeout=30)
        except OSError as e:
            log.warning("upstream %s unreachable: %s", self.upstream, e)
            client.close()
            return
        for sock in (client, server):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._lock:
            self.counters.connections += 1
            self._socks.update((client, server))
        _Relay(client, server, "c2s", self.profile, self.counters, self._lock).start()
        _Relay(server, client, "s2c", self.profile, self.counters, self._lock).start()

    def counters_snapshot(self) -> dict:
        with self._lock:
            return self.counters.snapshot()

    def shutdown(self) -> None:
        self._stop = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            for sock in self._socks:
                try:
                    sock.close()
                except OSError:
                    pass
            self._socks.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def run_proxy(
    listen: tuple[str, int],
    upstream: tuple[str, int],
    profile: ImpairmentProfile,
    *,
    status_port: int | None = None,
) -> NetemProxy:
    """Start a proxy; optionally expose counters as JSON on a local status
    port (one snapshot per connection)."""
    proxy = NetemProxy(listen, upstream, profile)
    if status_port is not None:
        status_listener = socket.create_server(("127.0.0.1", status_port))
        proxy.status_port = status_listener.getsockname()[1]

        def status_loop():
            while not proxy._stop:
                try:
                    conn, _ = status_listener.accept()
                except OSError:
                    return
                with conn:
                    try:
                        conn.sendall(json.dumps(proxy.counters_snapshot()).encode() + b"\n")
                    except OSError:
                        pass

        threading.Thread(target=status_loop, daemon=True).start()
        orig_shutdown = proxy.shutdown

        def shutdown_with_status():
            orig_shutdown()
            try:
                status_listener.close()
            except OSError:
                pass

        proxy.shutdown = shutdown_with_status  # type: ignore[method-assign]
    return proxy
