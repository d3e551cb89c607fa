"""REST transport: HTTP/1.1 POST with a JSON body.

Requests go to ``/srv6-explicit-path?operation=<create|remove|update|get>``
with body ``{"paths": [{"destination": ..., "segments": [...],
"device": ..., "encapmode": ..., "table": ...}]}``; a get sends an empty
body. Replies are ``{"status": ..., "paths": [...]}`` with the status also
mapped onto the HTTP code (200/400/404/409/500).

HTTP parsing is done here rather than through an HTTP library so the
byte counters see exactly what is written to the socket.
"""

from __future__ import annotations

import json
from urllib.parse import parse_qs, urlsplit

from ..model import (
    EncapMode,
    Ipv6Prefix,
    Operation,
    PathPolicy,
    PolicyReply,
    PolicyRequest,
    ReplyStatus,
    SegmentList,
)
from . import (
    ClientCreds,
    ClientSession,
    ConnectError,
    InteractionMode,
    MalformedMessage,
    MalformedReply,
    RequestTimeout,
    SecurityMode,
    TransportKind,
    merge_bulk,
)
from .streams import (
    ByteCounters,
    Stream,
    StreamClosed,
    ThreadedTcpServer,
    client_tls_context,
    connect_stream,
)

BASE_PATH = "/srv6-explicit-path"

_HTTP_CODES = {
    ReplyStatus.OK: (200, "OK"),
    ReplyStatus.INVALID: (400, "Bad Request"),
    ReplyStatus.NOT_FOUND: (404, "Not Found"),
    ReplyStatus.ALREADY_EXISTS: (409, "Conflict"),
    ReplyStatus.INTERNAL_ERROR: (500, "Internal Server Error"),
}


def path_to_json(path: PathPolicy) -> dict:
    return {
        "destination": str(path.destination),
        "segments": [str(s) for s in path.segments],
        "device": path.device,
        "encapmode": path.encapmode.value,
        "table": path.table,
    }


def path_from_json(obj: dict) -> PathPolicy:
    try:
        return PathPolicy(
            destination=Ipv6Prefix.parse(obj["destination"]),
            segments=SegmentList.of(*obj.get("segments", [])),
            device=obj["device"],
            encapmode=EncapMode(obj.get("encapmode", "encap")),
            table=int(obj.get("table", 254)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedMessage(f"bad path object {obj!r}: {e}") from e


def encode_request(req: PolicyRequest, *, host: str = "agent", close: bool = False) -> bytes:
    body = b"" if req.operation is Operation.GET else json.dumps(
        {"paths": [path_to_json(p) for p in req.paths]}
    ).encode()
    head = (
        f"POST {BASE_PATH}?operation={req.operation.value} HTTP/1.1\r\n"
        f"Host: {host}\r\n"
        f"Content-Type: application/json\r\n"
        f"Content-Length: {len(body)}\r\n"
    )
    if close:
        head += "Connection: close\r\n"
    return head.encode() + b"\r\n" + body


def encode_reply(reply: PolicyReply, *, close: bool = False) -> bytes:
    code, phrase = _HTTP_CODES[reply.status]
    payload: dict = {"status": reply.status.value}
    if reply.paths:
        payload["paths"] = [path_to_json(p) for p in reply.paths]
    if reply.detail:
        payload["detail"] = list(reply.detail)
    body = json.dumps(payload).encode()
    head = (
        f"HTTP/1.1 {code} {phrase}\r\n"
        f"Content-Type: application/json\r\n"
        f"Content-Length: {len(body)}\r\n"
    )
    if close:
        head += "Connection: close\r\n"
    return head.encode() + b"\r\n" + body


def _parse_headers(block: bytes) -> tuple[str, dict[str, str]]:
    lines = block.decode("latin-1").split("\r\n")
    headers: dict[str, str] = {}
    for line in lines[1:]:
        if not line:
            continue
        key, _, val = line.partition(":")
        headers[key.strip().lower()] = val.strip()
    return lines[0], headers


def decode_request_bytes(data: bytes) -> tuple[PolicyRequest, bool]:
    """Parse a full HTTP request; returns (request, wants_close)."""
    head, _, body = data.partition(b"\r\n\r\n")
    start, headers = _parse_headers(head)
    parts = start.split(" ")
    if len(parts) != 3 or parts[0] != "POST":
        raise MalformedMessage(f"bad request line: {start!r}")
    return (
        _request_from_target(parts[1], body),
        headers.get("connection", "").lower() == "close",
    )


def _request_from_target(target: str, body: bytes) -> PolicyRequest:
    url = urlsplit(target)
    if url.path != BASE_PATH:
        raise MalformedMessage(f"unknown path {url.path!r}")
    ops = parse_qs(url.query).get("operation", [])
    if len(ops) != 1:
        raise MalformedMessage("operation parameter missing")
    try:
        op = Operation(ops[0])
    except ValueError:
        raise MalformedMessage(f"unknown operation {ops[0]!r}") from None
    if op is Operation.GET:
        return PolicyRequest(op, ())
    try:
        payload = json.loads(body.decode() or "{}")
        raw_paths = payload.get("paths", [])
        if not isinstance(raw_paths, list):
            raise MalformedMessage("paths must be a list")
        paths = tuple(path_from_json(p) for p in raw_paths)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedMessage(f"bad JSON body: {e}") from e
    return PolicyRequest(op, paths)


def decode_reply_bytes(data: bytes) -> PolicyReply:
    head, _, body = data.partition(b"\r\n\r\n")
    start, _headers = _parse_headers(head)
    parts = start.split(" ", 2)
    if len(parts) < 2 or not parts[0].startswith("HTTP/1.1"):
        raise MalformedReply(f"bad status line: {start!r}")
    try:
        payload = json.loads(body.decode() or "{}")
        status = ReplyStatus(payload["status"])
        paths = tuple(path_from_json(p) for p in payload.get("paths", []))
        detail = tuple(payload.get("detail", []))
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, ValueError) as e:
        raise MalformedReply(f"bad reply body: {e}") from e
    return PolicyReply(status, paths, detail)


def _read_http_message(stream: Stream) -> bytes:
    head = stream.read_until(b"\r\n\r\n")
    _, headers = _parse_headers(head[:-4])
    length = int(headers.get("content-length", "0"))
    body = stream.read_exactly(length) if length else b""
    return head + body


class RestSession(ClientSession):
    kind = TransportKind.REST

    def __init__(
        self,
        host: str,
        port: int,
        *,
        mode: InteractionMode,
        security: SecurityMode,
        creds: ClientCreds,
        timeout: float = 30.0,
    ):
        super().__init__(mode, security)
        self.host = host
        self.port = port
        self.timeout = timeout
        self.counters = ByteCounters()
        self._tls_ctx = None
        if security is SecurityMode.SECURE:
            if not creds.tls_ca:
                raise ConnectError("secure rest needs a CA certificate")
            self._tls_ctx = client_tls_context(creds.tls_ca)
        self._stream: Stream | None = None

    def _connect(self) -> Stream:
        try:
            stream = connect_stream(
                self.host,
                self.port,
                tls_ctx=self._tls_ctx,
                counters=self.counters,
                timeout=self.timeout,
            )
        except OSError as e:
            raise ConnectError(f"rest connect {self.host}:{self.port}: {e}") from e
        stream.settimeout(self.timeout)
        return stream

    def _exchange(self, stream: Stream, req: PolicyRequest, close: bool) -> PolicyReply:
        stream.send(encode_request(req, host=f"{self.host}:{self.port}", close=close))
        self.counters.count_message("tx")
        try:
            raw = _read_http_message(stream)
        except TimeoutError as e:
            raise RequestTimeout(str(e)) from e
        except StreamClosed as e:
            self._stream = None
            raise ConnectError(f"connection lost: {e}") from e
        self.counters.count_message("rx")
        return decode_reply_bytes(raw)

    def _send_once(self, req: PolicyRequest) -> PolicyReply:
        if self.mode is InteractionMode.P_CONN:
            if self._stream is None:
                self._stream = self._connect()
            return self._exchange(self._stream, req, close=False)
        stream = self._connect()
        try:
            return self._exchange(stream, req, close=True)
        finally:
            stream.close()

    def _send_bulk_once(self, reqs: list[PolicyRequest]) -> list[PolicyReply]:
        merged = merge_bulk(reqs)
        if self.mode is InteractionMode.P_CONN:
            if self._stream is None:
                self._stream = self._connect()
            reply = self._exchange(self._stream, merged, close=False)
        else:
            stream = self._connect()
            try:
                reply = self._exchange(stream, merged, close=True)
            finally:
                stream.close()
        return [reply] * len(reqs)

    def wire_counters(self) -> dict[str, int]:
        return self.counters.snapshot()

    def close(self) -> None:
        if self._stream is not None:
            self._stream.close()
            self._stream = None


class RestServer(ThreadedTcpServer):
    def __init__(self, host, port, handler, *, tls_ctx=None):
        self.handler = handler
        super().__init__(host, port, tls_ctx=tls_ctx, name="rest")

    def serve_stream(self, stream: Stream) -> None:
        while not self.stopping:
            try:
                raw = _read_http_message(stream)
            except (StreamClosed, OSError):
                return
            try:
                req, wants_close = decode_request_bytes(raw)
            except MalformedMessage as e:
                stream.send(
                    encode_reply(
                        PolicyReply(ReplyStatus.INVALID, detail=(str(e),)), close=True
                    )
                )
                return
            with self.track_request():
                reply = self.handler(req)
            stream.send(encode_reply(reply, close=wants_close))
            if wants_close:
                return
