"""The four southbound transports and their interaction modes.

Each transport module provides a pure codec (bytes <-> PolicyRequest /
PolicyReply) plus a client session class and a server class. Sessions are
single-user: one thread sends at a time. Servers handle many sessions
concurrently.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

from ..model import PolicyReply, PolicyRequest

DEFAULT_PORTS = {
    "rpc-bin": 12345,
    "rest": 8080,
    "rest-tls": 8443,
    "netconf": 830,
    "ssh-cli": 22022,
}

DEFAULT_TIMEOUT = 30.0


class TransportKind(enum.Enum):
    RPC_BIN = "rpc-bin"
    REST = "rest"
    NETCONF = "netconf"
    SSH_CLI = "ssh-cli"


class InteractionMode(enum.Enum):
    P_CONN = "p-conn"
    NP_CONN_SEQ = "np-conn-seq"
    NP_BULK = "np-bulk"


class SecurityMode(enum.Enum):
    INSECURE = "insecure"
    SECURE = "secure"


class HandshakeMode(enum.Enum):
    """SSH/CLI only: redo the secure handshake per command, or keep one
    authenticated session and run each command on a fresh channel."""

    PER_COMMAND = "per-command"
    PERSISTENT = "persistent"


class TransportError(Exception):
    pass


class ConnectError(TransportError):
    pass


class RequestTimeout(TransportError):
    pass


class MalformedMessage(TransportError):
    pass


class MalformedReply(TransportError):
    pass


class EncodingUnsupported(TransportError):
    pass


@dataclass(frozen=True)
class ClientCreds:
    """Client-side material: CA to verify TLS servers, key pair and pinned
    host key for the SSH-based transports."""

    tls_ca: str | None = None
    ssh_client_key: str | None = None
    ssh_host_pub: str | None = None
    username: str = "srv6"


class ClientSession:
    """Common behavior for transport client sessions.

    Concrete sessions implement _send_once (one request over an
    established or per-request connection, per the interaction mode) and
    _send_bulk_once.
    """

    kind: TransportKind

    def __init__(self, mode: InteractionMode, security: SecurityMode):
        self.mode = mode
        self.security = security

    def send(self, req: PolicyRequest) -> tuple[PolicyReply, float]:
        """Send one request; returns (reply, elapsed seconds).

        In np-conn-seq mode the connection setup (and the security
        handshake, when secure) happens inside the timed window.
        """
        t0 = time.perf_counter()
        reply = self._send_once(req)
        return reply, time.perf_counter() - t0

    def send_bulk(self, reqs: list[PolicyRequest]) -> tuple[list[PolicyReply], float]:
        """Send a batch as one application message."""
        t0 = time.perf_counter()
        replies = self._send_bulk_once(reqs)
        return replies, time.perf_counter() - t0

    def wire_counters(self) -> dict[str, int]:
        raise NotImplementedError

    def _send_once(self, req: PolicyRequest) -> PolicyReply:
        raise NotImplementedError

    def _send_bulk_once(self, reqs: list[PolicyRequest]) -> list[PolicyReply]:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def merge_bulk(reqs: list[PolicyRequest]) -> PolicyRequest:
    """A bulk send is one PolicyRequest carrying all paths; every request
    in the batch must share one operation."""
    if not reqs:
        raise ValueError("empty bulk")
    op = reqs[0].operation
    if any(r.operation is not op for r in reqs):
        raise ValueError("bulk requests must share one operation")
    paths: list = []
    for r in reqs:
        paths.extend(r.paths)
    return PolicyRequest(op, tuple(paths))


def open_session(
    kind: TransportKind,
    host: str,
    port: int,
    *,
    mode: InteractionMode = InteractionMode.P_CONN,
    security: SecurityMode = SecurityMode.INSECURE,
    creds: ClientCreds | None = None,
    handshake: HandshakeMode = HandshakeMode.PER_COMMAND,
    timeout: float = DEFAULT_TIMEOUT,
) -> ClientSession:
    """Factory for client sessions of any transport."""
    from . import netconf, rest, rpcbin, sshcli

    creds = creds or ClientCreds()
    if kind is TransportKind.RPC_BIN:
        return rpcbin.RpcBinSession(
            host, port, mode=mode, security=security, creds=creds, timeout=timeout
        )
    if kind is TransportKind.REST:
        return rest.RestSession(
            host, port, mode=mode, security=security, creds=creds, timeout=timeout
        )
    if kind is TransportKind.NETCONF:
        return netconf.NetconfSession(host, port, mode=mode, creds=creds, timeout=timeout)
    if kind is TransportKind.SSH_CLI:
        return sshcli.SshCliSession(
            host, port, mode=mode, creds=creds, handshake=handshake, timeout=timeout
        )
    raise ValueError(f"unknown transport {kind}")
