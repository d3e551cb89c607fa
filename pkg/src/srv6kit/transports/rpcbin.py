"""Binary RPC transport: length-prefixed frames with a TLV payload over a
stream channel, optional TLS.

Connection preamble: the client opens with the 8-byte magic ``SRB1`` +
version/flags word; the server answers with the same. Frames are
``u32 length | u8 type | TLV...`` where length covers everything after
itself. Message types: 1 request, 2 reply.

Top-level tags: 1 operation (u8), 2 path (nested TLV), 3 status (u8).
Path tags: 1 destination (string), 2 segment (string, repeated),
3 device (string), 4 encapmode (u8), 5 table (u32).
All integers big-endian; TLV lengths are u16. The tag assignment is this
artifact's own wire contract.
"""

from __future__ import annotations

import struct

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

PREAMBLE = b"SRB1\x00\x00\x00\x01"

FRAME_REQUEST = 1
FRAME_REPLY = 2

TAG_OPERATION = 1
TAG_PATH = 2
TAG_STATUS = 3

PATH_TAG_DEST = 1
PATH_TAG_SEGMENT = 2
PATH_TAG_DEVICE = 3
PATH_TAG_ENCAPMODE = 4
PATH_TAG_TABLE = 5

_OP_CODES = {
    Operation.CREATE: 1,
    Operation.REMOVE: 2,
    Operation.UPDATE: 3,
    Operation.GET: 4,
}
_OP_FROM_CODE = {v: k for k, v in _OP_CODES.items()}

_STATUS_CODES = {
    ReplyStatus.OK: 0,
    ReplyStatus.NOT_FOUND: 1,
    ReplyStatus.ALREADY_EXISTS: 2,
    ReplyStatus.INVALID: 3,
    ReplyStatus.INTERNAL_ERROR: 4,
}
_STATUS_FROM_CODE = {v: k for k, v in _STATUS_CODES.items()}

_ENCAP_CODES = {EncapMode.ENCAP: 1, EncapMode.INSERT: 2}
_ENCAP_FROM_CODE = {v: k for k, v in _ENCAP_CODES.items()}


def _tlv(tag: int, value: bytes) -> bytes:
    if len(value) > 0xFFFF:
        raise MalformedMessage(f"TLV value too long: {len(value)}")
    return struct.pack(">BH", tag, len(value)) + value


def _encode_path(path: PathPolicy) -> bytes:
    out = bytearray()
    out += _tlv(PATH_TAG_DEST, str(path.destination).encode())
    for seg in path.segments:
        out += _tlv(PATH_TAG_SEGMENT, str(seg).encode())
    out += _tlv(PATH_TAG_DEVICE, path.device.encode())
    out += _tlv(PATH_TAG_ENCAPMODE, bytes([_ENCAP_CODES[path.encapmode]]))
    out += _tlv(PATH_TAG_TABLE, struct.pack(">I", path.table))
    return bytes(out)


def _iter_tlv(data: bytes, base_offset: int = 0):
    off = 0
    while off < len(data):
        if off + 3 > len(data):
            raise MalformedMessage(f"truncated TLV header at byte {base_offset + off}")
        tag, ln = struct.unpack_from(">BH", data, off)
        off += 3
        if off + ln > len(data):
            raise MalformedMessage(f"truncated TLV value at byte {base_offset + off}")
        yield tag, data[off : off + ln], base_offset + off
        off += ln


def _decode_path(data: bytes, base_offset: int) -> PathPolicy:
    dest = None
    segments = []
    device = None
    mode = EncapMode.ENCAP
    table = 254
    for tag, value, off in _iter_tlv(data, base_offset):
        try:
            if tag == PATH_TAG_DEST:
                dest = Ipv6Prefix.parse(value.decode())
            elif tag == PATH_TAG_SEGMENT:
                segments.append(value.decode())
            elif tag == PATH_TAG_DEVICE:
                device = value.decode()
            elif tag == PATH_TAG_ENCAPMODE:
                if len(value) != 1 or value[0] not in _ENCAP_FROM_CODE:
                    raise MalformedMessage(f"bad encapmode at byte {off}")
                mode = _ENCAP_FROM_CODE[value[0]]
            elif tag == PATH_TAG_TABLE:
                if len(value) != 4:
                    raise MalformedMessage(f"bad table length at byte {off}")
                (table,) = struct.unpack(">I", value)
            else:
                raise MalformedMessage(f"unknown path tag {tag} at byte {off}")
        except ValueError as e:
            raise MalformedMessage(f"bad path field at byte {off}: {e}") from e
    if dest is None or device is None:
        raise MalformedMessage(f"path at byte {base_offset} missing destination or device")
    try:
        segs = SegmentList.of(*segments)
    except ValueError as e:
        raise MalformedMessage(f"bad segment in path at byte {base_offset}: {e}") from e
    return PathPolicy(destination=dest, segments=segs, device=device, encapmode=mode, table=table)


def encode_request(req: PolicyRequest) -> bytes:
    body = bytearray()
    body += _tlv(TAG_OPERATION, bytes([_OP_CODES[req.operation]]))
    for path in req.paths:
        body += _tlv(TAG_PATH, _encode_path(path))
    return _frame(FRAME_REQUEST, bytes(body))


def encode_reply(reply: PolicyReply) -> bytes:
    body = bytearray()
    body += _tlv(TAG_STATUS, bytes([_STATUS_CODES[reply.status]]))
    for path in reply.paths:
        body += _tlv(TAG_PATH, _encode_path(path))
    return _frame(FRAME_REPLY, bytes(body))


def _frame(frame_type: int, body: bytes) -> bytes:
    return struct.pack(">IB", len(body) + 1, frame_type) + body


def decode_frame(data: bytes) -> PolicyRequest | PolicyReply:
    """Decode one complete frame (header included)."""
    if len(data) < 5:
        raise MalformedMessage(f"frame shorter than header: {len(data)} bytes")
    (length,) = struct.unpack_from(">I", data)
    if length != len(data) - 4:
        raise MalformedMessage(f"frame length {length} != {len(data) - 4} present")
    return decode_payload(data[4], data[5:])


def decode_payload(frame_type: int, body: bytes) -> PolicyRequest | PolicyReply:
    op = None
    status = None
    paths = []
    for tag, value, off in _iter_tlv(body, 5):
        if tag == TAG_OPERATION:
            if len(value) != 1 or value[0] not in _OP_FROM_CODE:
                raise MalformedMessage(f"unknown operation code at byte {off}")
            op = _OP_FROM_CODE[value[0]]
        elif tag == TAG_STATUS:
            if len(value) != 1 or value[0] not in _STATUS_FROM_CODE:
                raise MalformedMessage(f"unknown status code at byte {off}")
            status = _STATUS_FROM_CODE[value[0]]
        elif tag == TAG_PATH:
            paths.append(_decode_path(value, off))
        else:
            raise MalformedMessage(f"unknown tag {tag} at byte {off}")
    if frame_type == FRAME_REQUEST:
        if op is None:
            raise MalformedMessage("request frame without operation")
        return PolicyRequest(op, tuple(paths))
    if frame_type == FRAME_REPLY:
        if status is None:
            raise MalformedMessage("reply frame without status")
        return PolicyReply(status, tuple(paths))
    raise MalformedMessage(f"unknown frame type {frame_type}")


def read_frame(stream: Stream) -> tuple[int, bytes]:
    header = stream.read_exactly(4)
    (length,) = struct.unpack(">I", header)
    if not 1 <= length <= (1 << 24):
        raise MalformedMessage(f"implausible frame length {length}")
    data = stream.read_exactly(length)
    return data[0], data[1:]


class RpcBinSession(ClientSession):
    kind = TransportKind.RPC_BIN

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
                raise ConnectError("secure rpc-bin needs a CA certificate")
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
            raise ConnectError(f"rpc-bin connect {self.host}:{self.port}: {e}") from e
        stream.settimeout(self.timeout)
        stream.send(PREAMBLE)
        if stream.read_exactly(8) != PREAMBLE:
            stream.close()
            raise ConnectError("server preamble mismatch")
        return stream

    def _persistent(self) -> Stream:
        if self._stream is None:
            self._stream = self._connect()
        return self._stream

    def _exchange(self, stream: Stream, req: PolicyRequest) -> PolicyReply:
        stream.send(encode_request(req))
        self.counters.count_message("tx")
        try:
            frame_type, body = read_frame(stream)
        except TimeoutError as e:
            raise RequestTimeout(str(e)) from e
        except StreamClosed as e:
            self._stream = None
            raise ConnectError(f"connection lost: {e}") from e
        self.counters.count_message("rx")
        try:
            reply = decode_payload(frame_type, body)
        except MalformedMessage as e:
            raise MalformedReply(str(e)) from e
        if not isinstance(reply, PolicyReply):
            raise MalformedReply("server sent a request frame")
        return reply

    def _send_once(self, req: PolicyRequest) -> PolicyReply:
        if self.mode is InteractionMode.P_CONN:
            return self._exchange(self._persistent(), req)
        stream = self._connect()
        try:
            return self._exchange(stream, req)
        finally:
            stream.close()

    def _send_bulk_once(self, reqs: list[PolicyRequest]) -> list[PolicyReply]:
        merged = merge_bulk(reqs)
        if self.mode is InteractionMode.P_CONN:
            reply = self._exchange(self._persistent(), merged)
        else:
            stream = self._connect()
            try:
                reply = self._exchange(stream, merged)
            finally:
                stream.close()
        return [reply] * len(reqs)

    def wire_counters(self) -> dict[str, int]:
        return self.counters.snapshot()

    def close(self) -> None:
        if self._stream is not None:
            self._stream.close()
            self._stream = None


class RpcBinServer(ThreadedTcpServer):
    def __init__(self, host, port, handler, *, tls_ctx=None):
        self.handler = handler
        super().__init__(host, port, tls_ctx=tls_ctx, name="rpcbin")

    def serve_stream(self, stream: Stream) -> None:
        if stream.read_exactly(8) != PREAMBLE:
            return
        stream.send(PREAMBLE)
        while not self.stopping:
            try:
                frame_type, body = read_frame(stream)
            except (StreamClosed, OSError):
                return
            try:
                req = decode_payload(frame_type, body)
                if not isinstance(req, PolicyRequest):
                    raise MalformedMessage("client sent a reply frame")
            except MalformedMessage:
                stream.send(encode_reply(PolicyReply(ReplyStatus.INVALID)))
                return
            with self.track_request():
                reply = self.handler(req)
            stream.send(encode_reply(reply))
