"""Byte streams with wire accounting.

All transports speak through a Stream so that tx/rx byte counters are
measured at the socket boundary: for TLS that means ciphertext including
the handshake, which is what a capture on the link would see. TLS is run
through memory BIOs for exactly that reason - the stdlib SSLSocket owns
the fd and would hide the bytes from us.
"""

from __future__ import annotations

import socket
import ssl
import threading


class StreamClosed(ConnectionError):
    pass


class ByteCounters:
    """Monotonic tx/rx byte and message counters. Thread-safe."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes_tx = 0
        self.bytes_rx = 0
        self.messages_tx = 0
        self.messages_rx = 0

    def add_tx(self, n: int) -> None:
        with self._lock:
            self.bytes_tx += n

    def add_rx(self, n: int) -> None:
        with self._lock:
            self.bytes_rx += n

    def count_message(self, direction: str) -> None:
        with self._lock:
            if direction == "tx":
                self.messages_tx += 1
            else:
                self.messages_rx += 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {
                "messages_tx": self.messages_tx,
                "messages_rx": self.messages_rx,
                "bytes_tx": self.bytes_tx,
                "bytes_rx": self.bytes_rx,
            }


class Stream:
    """A plain TCP stream with counters and buffered reads."""

    def __init__(self, sock: socket.socket, counters: ByteCounters | None = None):
        self.sock = sock
        self.counters = counters or ByteCounters()
        self._rbuf = b""
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def settimeout(self, t: float | None) -> None:
        self.sock.settimeout(t)

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)
        self.counters.add_tx(len(data))

    def _recv_raw(self, n: int) -> bytes:
        data = self.sock.recv(n)
        self.counters.add_rx(len(data))
        return data

    def recv_some(self, limit: int = 65536) -> bytes:
        """At least one byte unless the peer closed."""
        if self._rbuf:
            out, self._rbuf = self._rbuf, b""
            return out
        return self._recv_raw(limit)

    def read_exactly(self, n: int) -> bytes:
        while len(self._rbuf) < n:
            chunk = self._recv_raw(65536)
            if not chunk:
                raise StreamClosed(f"peer closed with {len(self._rbuf)}/{n} bytes buffered")
            self._rbuf += chunk
        out, self._rbuf = self._rbuf[:n], self._rbuf[n:]
        return out

    def read_until(self, delim: bytes, max_bytes: int = 1 << 20) -> bytes:
        """Read up to and including delim."""
        while True:
            idx = self._rbuf.find(delim)
            if idx >= 0:
                end = idx + len(delim)
                out, self._rbuf = self._rbuf[:end], self._rbuf[end:]
                return out
            if len(self._rbuf) > max_bytes:
                raise ValueError(f"delimiter not found within {max_bytes} bytes")
            chunk = self._recv_raw(65536)
            if not chunk:
                raise StreamClosed("peer closed before delimiter")
            self._rbuf += chunk

    def read_line(self, max_bytes: int = 65536) -> bytes:
        return self.read_until(b"\n", max_bytes)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class TlsStream(Stream):
    """TLS over a socket via memory BIOs; counters see ciphertext."""

    def __init__(
        self,
        sock: socket.socket,
        context: ssl.SSLContext,
        *,
        server_side: bool,
        server_hostname: str | None = None,
        counters: ByteCounters | None = None,
    ):
        super().__init__(sock, counters)
        self._in = ssl.MemoryBIO()
        self._out = ssl.MemoryBIO()
        self._ssl = context.wrap_bio(
            self._in, self._out, server_side=server_side, server_hostname=server_hostname
        )
        self._handshake()

    def _pump_out(self) -> None:
        data = self._out.read()
        if data:
            self.sock.sendall(data)
            self.counters.add_tx(len(data))

    def _pump_in(self) -> None:
        chunk = self.sock.recv(65536)
        self.counters.add_rx(len(chunk))
        if chunk:
            self._in.write(chunk)
        else:
            self._in.write_eof()

    def _handshake(self) -> None:
        while True:
            try:
                self._ssl.do_handshake()
                self._pump_out()
                return
            except ssl.SSLWantReadError:
                self._pump_out()
                self._pump_in()
            except ssl.SSLWantWriteError:
                self._pump_out()

    def send(self, data: bytes) -> None:
        self._ssl.write(data)
        self._pump_out()

    def _recv_raw(self, n: int) -> bytes:
        while True:
            try:
                return self._ssl.read(n)
            except ssl.SSLWantReadError:
                self._pump_in()
            except ssl.SSLZeroReturnError:
                return b""

    def recv_some(self, limit: int = 65536) -> bytes:
        if self._rbuf:
            out, self._rbuf = self._rbuf, b""
            return out
        try:
            return self._recv_raw(limit)
        except ssl.SSLEOFError:
            return b""

    def close(self) -> None:
        try:
            self._ssl.unwrap()
            self._pump_out()
        except (ssl.SSLError, OSError):
            pass
        super().close()


def client_tls_context(ca_path: str) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.load_verify_locations(ca_path)
    ctx.check_hostname = False  # endpoints are addressed by IP in the lab
    return ctx


def server_tls_context(cert_path: str, key_path: str) -> ssl.SSLContext:
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.minimum_version = ssl.TLSVersion.TLSv1_2
    ctx.load_cert_chain(cert_path, key_path)
    return ctx


def connect_stream(
    host: str,
    port: int,
    *,
    tls_ctx: ssl.SSLContext | None = None,
    counters: ByteCounters | None = None,
    timeout: float = 30.0,
) -> Stream:
    sock = socket.create_connection((host, port), timeout=timeout)
    if tls_ctx is None:
        return Stream(sock, counters)
    return TlsStream(sock, tls_ctx, server_side=False, counters=counters)


class ThreadedTcpServer:
    """Accept loop plus one thread per connection; optional TLS.

    Subclasses implement serve_stream(stream) for one connection's
    lifetime. In-flight request handlers are tracked so a shutdown can
    drain them before tearing sessions down.
    """

    def __init__(self, host: str, port: int, *, tls_ctx: ssl.SSLContext | None = None, name: str = "tcp"):
        self._tls_ctx = tls_ctx
        self._listener = socket.create_server((host, port))
        self.port = self._listener.getsockname()[1]
        self.host = host
        self.stopping = False
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._inflight = 0
        self._idle = threading.Event()
        self._idle.set()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"{name}-accept-{self.port}", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self.stopping:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            with self._lock:
                self._conns.add(sock)
            threading.Thread(target=self._run_conn, args=(sock,), daemon=True).start()

    def _run_conn(self, sock: socket.socket) -> None:
        try:
            if self._tls_ctx is not None:
                stream: Stream = TlsStream(sock, self._tls_ctx, server_side=True)
            else:
                stream = Stream(sock)
            self.serve_stream(stream)
        except (OSError, ssl.SSLError, StreamClosed, ValueError):
            pass
        finally:
            try:
                sock.close()
            except OSError:
                pass
            with self._lock:
                self._conns.discard(sock)

    def serve_stream(self, stream: Stream) -> None:
        raise NotImplementedError

    def track_request(self):
        return _Inflight(self)

    def drain(self, timeout: float = 1.0) -> bool:
        """Wait for in-flight request handlers to finish."""
        return self._idle.wait(timeout)

    def close(self, drain_timeout: float = 1.0) -> None:
        self.stopping = True
        try:
            self._listener.close()
        except OSError:
            pass
        self.drain(drain_timeout)
        with self._lock:
            for sock in list(self._conns):
                try:
                    sock.close()
                except OSError:
                    pass


class _Inflight:
    def __init__(self, server: ThreadedTcpServer):
        self._server = server

    def __enter__(self):
        with self._server._lock:
            self._server._inflight += 1
            self._server._idle.clear()
        return self

    def __exit__(self, *exc):
        with self._server._lock:
            self._server._inflight -= 1
            if self._server._inflight == 0:
                self._server._idle.set()
