"""Minimal SSH-style secure channel used by the NETCONF and SSH/CLI
transports.

Both endpoints of these transports ship in this package (the agent runs
its own server rather than reusing a system SSH daemon), so the protocol
is a compact self-contained design rather than RFC 4253 on the wire. It
keeps the properties that the transport comparison depends on:

* multi-round-trip handshake: banner exchange, X25519 key agreement
  authenticated by an RSA-3072 host-key signature, then client public-key
  authentication (Ed25519) against an authorized-keys list;
* encrypted, authenticated records after key agreement
  (ChaCha20-Poly1305, per-direction keys and sequence numbers);
* cheap channels on an authenticated session: a channel open or an exec
  costs round trips and symmetric crypto only, no public-key operations.

Channel ids are chosen by the opener, so a client can pipeline
open + exec + eof in a single flight and an exec costs one round trip.
"""

from __future__ import annotations

import hashlib
import os
import queue
import socket
import struct
import threading
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding as rsa_padding
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .. import creds as credmod
from .streams import ByteCounters, Stream, StreamClosed

BANNER = b"SSHLITE-1.0 srv6kit\n"
_MAX_RECORD = (1 << 20) + 1024

MSG_KEXINIT = 1
MSG_KEXREPLY = 2
MSG_AUTH_REQUEST = 50
MSG_AUTH_OK = 51
MSG_AUTH_FAIL = 52
MSG_CHAN_OPEN = 90
MSG_CHAN_OPEN_OK = 91
MSG_CHAN_OPEN_FAIL = 92
MSG_CHAN_REQUEST = 93
MSG_CHAN_REQUEST_OK = 94
MSG_CHAN_REQUEST_FAIL = 95
MSG_CHAN_DATA = 96
MSG_CHAN_EOF = 97
MSG_CHAN_EXIT = 98
MSG_CHAN_CLOSE = 99
MSG_DISCONNECT = 100


class SshError(Exception):
    pass


class AuthFailed(SshError):
    pass


class HostKeyMismatch(SshError):
    pass


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise SshError("truncated message")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def lp(self) -> bytes:
        return self.take(self.u32())


class _RecordLayer:
    """Framing below and above NEWKEYS: cleartext during key exchange,
    sealed ChaCha20-Poly1305 records afterwards."""

    def __init__(self, stream: Stream):
        self.stream = stream
        self._send_lock = threading.Lock()
        self._seal = None
        self._open = None
        self._tx_seq = 0
        self._rx_seq = 0
        self._tx_iv = b""
        self._rx_iv = b""

    def enable_crypto(self, tx_key: bytes, tx_iv: bytes, rx_key: bytes, rx_iv: bytes) -> None:
        self._seal = ChaCha20Poly1305(tx_key)
        self._open = ChaCha20Poly1305(rx_key)
        self._tx_iv = tx_iv
        self._rx_iv = rx_iv
        self._tx_seq = 0
        self._rx_seq = 0

    @staticmethod
    def _nonce(iv: bytes, seq: int) -> bytes:
        return (int.from_bytes(iv, "big") ^ seq).to_bytes(12, "big")

    def send_msg(self, msg_type: int, body: bytes = b"", more: list | None = None) -> None:
        """Send one message; 'more' allows pipelining several messages in
        a single socket write."""
        parts = [(msg_type, body)] + (more or [])
        out = bytearray()
        with self._send_lock:
            for mt, mb in parts:
                payload = bytes([mt]) + mb
                if self._seal is not None:
                    header = struct.pack(">I", len(payload) + 16)
                    ct = self._seal.encrypt(
                        self._nonce(self._tx_iv, self._tx_seq), payload, header
                    )
                    self._tx_seq += 1
                    out += header + ct
                else:
                    out += struct.pack(">I", len(payload)) + payload
            self.stream.send(bytes(out))

    def recv_msg(self) -> tuple[int, bytes]:
        header = self.stream.read_exactly(4)
        (length,) = struct.unpack(">I", header)
        if length > _MAX_RECORD:
            raise SshError(f"record too large: {length}")
        body = self.stream.read_exactly(length)
        if self._open is not None:
            try:
                body = self._open.decrypt(self._nonce(self._rx_iv, self._rx_seq), body, header)
            except InvalidTag as e:
                raise SshError("record authentication failed") from e
            self._rx_seq += 1
        if not body:
            raise SshError("empty record")
        return body[0], body[1:]


def _derive_keys(secret: bytes, exchange_hash: bytes, label: bytes) -> tuple[bytes, bytes]:
    okm = HKDF(
        algorithm=hashes.SHA256(), length=44, salt=exchange_hash, info=label
    ).derive(secret)
    return okm[:32], okm[32:44]


def _exchange_hash(
    c_cookie: bytes, s_cookie: bytes, c_pub: bytes, s_pub: bytes, host_pub_pem: bytes, secret: bytes
) -> bytes:
    h = hashlib.sha256()
    for part in (BANNER, BANNER, c_cookie, s_cookie, c_pub, s_pub, host_pub_pem, secret):
        h.update(struct.pack(">I", len(part)) + part)
    return h.digest()


# ------------------------------------------------------------- client ----


class SshClientChannel:
    """Client side of an open channel (subsystem use). Single reader."""

    def __init__(self, client: "SshClient", chan_id: int):
        self._client = client
        self.chan_id = chan_id
        self._eof = False

    def send(self, data: bytes) -> None:
        self._client._records.send_msg(MSG_CHAN_DATA, struct.pack(">I", self.chan_id) + _lp(data))

    def recv(self) -> bytes:
        """Next data chunk; b'' once the peer sent EOF/close."""
        if self._eof:
            return b""
        while True:
            mt, body = self._client._records.recv_msg()
            cur = _Cursor(body)
            if mt == MSG_CHAN_DATA:
                cid = cur.u32()
                data = cur.lp()
                if cid == self.chan_id:
                    return data
            elif mt in (MSG_CHAN_EOF, MSG_CHAN_CLOSE):
                if cur.u32() == self.chan_id:
                    self._eof = True
                    return b""
            elif mt == MSG_DISCONNECT:
                self._eof = True
                return b""
            elif mt == MSG_CHAN_EXIT:
                continue
            else:
                raise SshError(f"unexpected message {mt} on channel")

    def close(self) -> None:
        if not self._eof:
            try:
                self._client._records.send_msg(MSG_CHAN_CLOSE, struct.pack(">I", self.chan_id))
            except (OSError, StreamClosed):
                pass


class SshClient:
    """One authenticated connection to an sshlite server."""

    def __init__(
        self,
        host: str,
        port: int,
        *,
        client_key: Ed25519PrivateKey,
        expected_host_pub: bytes,
        username: str = "srv6",
        timeout: float = 30.0,
        counters: ByteCounters | None = None,
    ):
        self.host = host
        self.port = port
        self.username = username
        self.timeout = timeout
        self._client_key = client_key
        self._expected_host_pub = expected_host_pub
        self.counters = counters or ByteCounters()
        self._records: _RecordLayer | None = None
        self._next_chan = 1

    def connect(self) -> None:
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as e:
            raise SshError(f"connect {self.host}:{self.port}: {e}") from e
        stream = Stream(sock, self.counters)
        stream.settimeout(self.timeout)
        records = _RecordLayer(stream)
        try:
            stream.send(BANNER)
            banner = stream.read_line()
            if not banner.startswith(b"SSHLITE-1.0"):
                raise SshError(f"bad server banner: {banner!r}")

            c_cookie = os.urandom(16)
            eph = X25519PrivateKey.generate()
            c_pub = eph.public_key().public_bytes_raw()
            records.send_msg(MSG_KEXINIT, c_cookie + c_pub)

            mt, body = records.recv_msg()
            if mt != MSG_KEXREPLY:
                raise SshError(f"expected KEXREPLY, got {mt}")
            cur = _Cursor(body)
            s_cookie = cur.take(16)
            s_pub = cur.take(32)
            host_pub_pem = cur.lp()
            signature = cur.lp()

            if host_pub_pem != self._expected_host_pub:
                raise HostKeyMismatch("server host key does not match the pinned key")
            host_pub = serialization.load_pem_public_key(host_pub_pem)
            secret = eph.exchange(X25519PublicKey.from_public_bytes(s_pub))
            hsh = _exchange_hash(c_cookie, s_cookie, c_pub, s_pub, host_pub_pem, secret)
            try:
                host_pub.verify(signature, hsh, rsa_padding.PKCS1v15(), hashes.SHA256())
            except InvalidSignature as e:
                raise HostKeyMismatch("host key signature invalid") from e

            tx = _derive_keys(secret, hsh, b"sshlite c2s")
            rx = _derive_keys(secret, hsh, b"sshlite s2c")
            records.enable_crypto(tx[0], tx[1], rx[0], rx[1])

            user = self.username.encode()
            pub_raw = credmod.public_raw(self._client_key)
            auth_sig = self._client_key.sign(hsh + user + pub_raw)
            records.send_msg(MSG_AUTH_REQUEST, _lp(user) + _lp(pub_raw) + _lp(auth_sig))
            mt, body = records.recv_msg()
            if mt == MSG_AUTH_FAIL:
                raise AuthFailed(_Cursor(body).lp().decode(errors="replace"))
            if mt != MSG_AUTH_OK:
                raise SshError(f"expected AUTH_OK, got {mt}")
        except BaseException:
            stream.close()
            raise
        self._records = records

    def _alloc_chan(self) -> int:
        cid = self._next_chan
        self._next_chan += 1
        return cid

    def exec_command(self, command: str) -> tuple[int, bytes]:
        """Run a command on a fresh channel; returns (exit_status, stdout).

        The open, exec request and EOF are pipelined in one flight.
        """
        if self._records is None:
            raise SshError("not connected")
        cid = self._alloc_chan()
        cid_b = struct.pack(">I", cid)
        self._records.send_msg(
            MSG_CHAN_OPEN,
            cid_b + _lp(b"session"),
            more=[
                (MSG_CHAN_REQUEST, cid_b + _lp(b"exec") + _lp(command.encode())),
                (MSG_CHAN_EOF, cid_b),
            ],
        )
        status = None
        out = bytearray()
        while True:
            mt, body = self._records.recv_msg()
            cur = _Cursor(body)
            if mt == MSG_CHAN_OPEN_OK or mt == MSG_CHAN_REQUEST_OK or mt == MSG_CHAN_EOF:
                continue
            if mt == MSG_CHAN_OPEN_FAIL or mt == MSG_CHAN_REQUEST_FAIL:
                cur.u32()
                raise SshError(f"exec rejected: {cur.lp().decode(errors='replace')}")
            if mt == MSG_CHAN_DATA:
                if cur.u32() == cid:
                    out += cur.lp()
            elif mt == MSG_CHAN_EXIT:
                if cur.u32() == cid:
                    status = cur.u32()
            elif mt == MSG_CHAN_CLOSE:
                if cur.u32() == cid:
                    break
            elif mt == MSG_DISCONNECT:
                raise SshError("server disconnected")
            else:
                raise SshError(f"unexpected message {mt} during exec")
        if status is None:
            raise SshError("exec finished without exit status")
        return status, bytes(out)

    def open_subsystem(self, name: str) -> SshClientChannel:
        if self._records is None:
            raise SshError("not connected")
        cid = self._alloc_chan()
        cid_b = struct.pack(">I", cid)
        self._records.send_msg(
            MSG_CHAN_OPEN,
            cid_b + _lp(b"session"),
            more=[(MSG_CHAN_REQUEST, cid_b + _lp(b"subsystem") + _lp(name.encode()))],
        )
        oks = 0
        while oks < 2:
            mt, body = self._records.recv_msg()
            cur = _Cursor(body)
            if mt in (MSG_CHAN_OPEN_OK, MSG_CHAN_REQUEST_OK):
                oks += 1
            elif mt in (MSG_CHAN_OPEN_FAIL, MSG_CHAN_REQUEST_FAIL):
                cur.u32()
                raise SshError(f"subsystem rejected: {cur.lp().decode(errors='replace')}")
            else:
                raise SshError(f"unexpected message {mt} opening subsystem")
        return SshClientChannel(self, cid)

    def close(self) -> None:
        if self._records is not None:
            try:
                self._records.send_msg(MSG_DISCONNECT, _lp(b"bye"))
            except (OSError, StreamClosed):
                pass
            self._records.stream.close()
            self._records = None


def open_client(
    host: str,
    port: int,
    *,
    client_key_path: str,
    host_pub_path: str,
    username: str = "srv6",
    timeout: float = 30.0,
    counters: ByteCounters | None = None,
) -> SshClient:
    client = SshClient(
        host,
        port,
        client_key=credmod.load_client_key(client_key_path),
        expected_host_pub=credmod.load_host_public(host_pub_path),
        username=username,
        timeout=timeout,
        counters=counters,
    )
    client.connect()
    return client


# ------------------------------------------------------------- server ----


class SshServerChannel:
    """Server side of a subsystem channel: queue-fed reads, locked writes."""

    def __init__(self, records: _RecordLayer, chan_id: int):
        self._records = records
        self.chan_id = chan_id
        self._inbox: queue.Queue[bytes | None] = queue.Queue()
        self.closed = False

    def feed(self, data: bytes | None) -> None:
        self._inbox.put(data)

    def recv(self) -> bytes:
        item = self._inbox.get()
        return b"" if item is None else item

    def send(self, data: bytes) -> None:
        self._records.send_msg(MSG_CHAN_DATA, struct.pack(">I", self.chan_id) + _lp(data))

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self._records.send_msg(MSG_CHAN_CLOSE, struct.pack(">I", self.chan_id))
            except (OSError, StreamClosed):
                pass


@dataclass
class SshHandlers:
    """What the server does with channels.

    exec_handler(command) -> (exit_status, stdout bytes)
    subsystem_handler(name, channel) runs in its own thread; it owns the
    channel until it returns.
    """

    exec_handler: object = None
    subsystem_handler: object = None


class SshServer:
    def __init__(
        self,
        host: str,
        port: int,
        *,
        host_key: rsa.RSAPrivateKey,
        authorized_keys: list[bytes],
        handlers: SshHandlers,
    ):
        self._host_key = host_key
        self._host_pub_pem = credmod.host_public_pem(host_key)
        self._authorized = set(authorized_keys)
        self._handlers = handlers
        self._listener = socket.create_server((host, port))
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._threads: list[threading.Thread] = []
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"sshlite-accept-{self.port}", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            with self._conns_lock:
                self._conns.add(sock)
            t = threading.Thread(target=self._serve_conn, args=(sock,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, sock: socket.socket) -> None:
        stream = Stream(sock)
        records = _RecordLayer(stream)
        try:
            stream.send(BANNER)
            banner = stream.read_line()
            if not banner.startswith(b"SSHLITE-1.0"):
                return

            mt, body = records.recv_msg()
            if mt != MSG_KEXINIT:
                return
            cur = _Cursor(body)
            c_cookie = cur.take(16)
            c_pub = cur.take(32)

            s_cookie = os.urandom(16)
            eph = X25519PrivateKey.generate()
            s_pub = eph.public_key().public_bytes_raw()
            secret = eph.exchange(X25519PublicKey.from_public_bytes(c_pub))
            hsh = _exchange_hash(c_cookie, s_cookie, c_pub, s_pub, self._host_pub_pem, secret)
            signature = self._host_key.sign(hsh, rsa_padding.PKCS1v15(), hashes.SHA256())
            records.send_msg(
                MSG_KEXREPLY, s_cookie + s_pub + _lp(self._host_pub_pem) + _lp(signature)
            )
            rx = _derive_keys(secret, hsh, b"sshlite c2s")
            tx = _derive_keys(secret, hsh, b"sshlite s2c")
            records.enable_crypto(tx[0], tx[1], rx[0], rx[1])

            mt, body = records.recv_msg()
            if mt != MSG_AUTH_REQUEST:
                return
            cur = _Cursor(body)
            user = cur.lp()
            pub_raw = cur.lp()
            auth_sig = cur.lp()
            if pub_raw not in self._authorized or not credmod.verify_ed25519(
                pub_raw, auth_sig, hsh + user + pub_raw
            ):
                records.send_msg(MSG_AUTH_FAIL, _lp(b"publickey rejected"))
                return
            records.send_msg(MSG_AUTH_OK)

            self._channel_loop(records)
        except (SshError, StreamClosed, OSError, ValueError):
            pass
        finally:
            stream.close()
            with self._conns_lock:
                self._conns.discard(sock)

    def _channel_loop(self, records: _RecordLayer) -> None:
        subsystems: dict[int, SshServerChannel] = {}
        while not self._stop.is_set():
            mt, body = records.recv_msg()
            cur = _Cursor(body)
            if mt == MSG_CHAN_OPEN:
                cid = cur.u32()
                records.send_msg(MSG_CHAN_OPEN_OK, struct.pack(">I", cid))
            elif mt == MSG_CHAN_REQUEST:
                cid = cur.u32()
                kind = cur.lp().decode()
                arg = cur.lp().decode()
                cid_b = struct.pack(">I", cid)
                if kind == "exec" and self._handlers.exec_handler is not None:
                    # ok + output + exit + close go out in one flight
                    status, out = self._handlers.exec_handler(arg)
                    more = []
                    if out:
                        more.append((MSG_CHAN_DATA, cid_b + _lp(out)))
                    more.append((MSG_CHAN_EXIT, cid_b + struct.pack(">I", status)))
                    more.append((MSG_CHAN_CLOSE, cid_b))
                    records.send_msg(MSG_CHAN_REQUEST_OK, cid_b, more=more)
                elif kind == "subsystem" and self._handlers.subsystem_handler is not None:
                    chan = SshServerChannel(records, cid)
                    subsystems[cid] = chan
                    records.send_msg(MSG_CHAN_REQUEST_OK, cid_b)
                    threading.Thread(
                        target=self._handlers.subsystem_handler,
                        args=(arg, chan),
                        daemon=True,
                    ).start()
                else:
                    records.send_msg(
                        MSG_CHAN_REQUEST_FAIL, cid_b + _lp(f"unsupported: {kind}".encode())
                    )
            elif mt == MSG_CHAN_DATA:
                cid = cur.u32()
                data = cur.lp()
                chan = subsystems.get(cid)
                if chan is not None:
                    chan.feed(data)
            elif mt in (MSG_CHAN_EOF, MSG_CHAN_CLOSE):
                cid = cur.u32()
                chan = subsystems.pop(cid, None)
                if chan is not None:
                    chan.feed(None)
            elif mt == MSG_DISCONNECT:
                for chan in subsystems.values():
                    chan.feed(None)
                return
            else:
                raise SshError(f"unexpected message {mt}")

    def close(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conns_lock:
            for sock in list(self._conns):
                try:
                    sock.close()
                except OSError:
                    pass
