"""NETCONF transport: XML RPCs over an SSH subsystem channel with 1.0
end-of-message framing (``]]>]]>``) and a hello exchange per session.

Only the subset this data model needs is implemented: ``<edit-config>``
on the running datastore with ``<srv6-explicit-path operation=...>`` as
the config root, and ``<get-config>`` for listings.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

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
    SecurityMode,
    TransportKind,
    merge_bulk,
)
from .sshlite import SshClient, SshClientChannel, SshError, SshServerChannel, open_client
from .streams import ByteCounters

BASE_NS = "urn:ietf:params:xml:ns:netconf:base:1.0"
SRV6_NS = "urn:srv6kit:srv6-explicit-path"
EOM = b"]]>]]>"

HELLO = (
    f'<hello xmlns="{BASE_NS}"><capabilities>'
    f"<capability>urn:ietf:params:netconf:base:1.0</capability>"
    f"</capabilities></hello>"
).encode()

_ERROR_TAGS = {
    ReplyStatus.NOT_FOUND: "data-missing",
    ReplyStatus.ALREADY_EXISTS: "data-exists",
    ReplyStatus.INVALID: "invalid-value",
    ReplyStatus.INTERNAL_ERROR: "operation-failed",
}
_STATUS_FROM_TAG = {v: k for k, v in _ERROR_TAGS.items()}


def _local(tag: str) -> str:
    return tag.rpartition("}")[2]


def _find(elem: ET.Element, name: str) -> ET.Element | None:
    for child in elem.iter():
        if _local(child.tag) == name:
            return child
    return None


def _path_xml(path: PathPolicy) -> str:
    segs = "".join(f"<segment>{s}</segment>" for s in path.segments)
    return (
        f"<path><destination>{path.destination}</destination>{segs}"
        f"<device>{path.device}</device>"
        f"<encapmode>{path.encapmode.value}</encapmode>"
        f"<table>{path.table}</table></path>"
    )


def _path_from_xml(elem: ET.Element) -> PathPolicy:
    fields: dict[str, list[str]] = {}
    for child in elem:
        fields.setdefault(_local(child.tag), []).append(child.text or "")
    try:
        return PathPolicy(
            destination=Ipv6Prefix.parse(fields["destination"][0]),
            segments=SegmentList.of(*fields.get("segment", [])),
            device=fields["device"][0],
            encapmode=EncapMode(fields.get("encapmode", ["encap"])[0]),
            table=int(fields.get("table", ["254"])[0]),
        )
    except (KeyError, IndexError, ValueError) as e:
        raise MalformedMessage(f"bad <path> element: {e}") from e


def encode_rpc_request(req: PolicyRequest, msg_id: int = 1) -> bytes:
    if req.operation is Operation.GET:
        body = "<get-config><source><running/></source></get-config>"
    else:
        paths = "".join(_path_xml(p) for p in req.paths)
        body = (
            f"<edit-config><target><running/></target><config>"
            f'<srv6-explicit-path xmlns="{SRV6_NS}" operation="{req.operation.value}">'
            f"{paths}</srv6-explicit-path></config></edit-config>"
        )
    return f'<rpc message-id="{msg_id}" xmlns="{BASE_NS}">{body}</rpc>'.encode()


def decode_rpc_request(data: bytes) -> tuple[PolicyRequest, str]:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise MalformedMessage(f"bad XML: {e}") from e
    if _local(root.tag) != "rpc":
        raise MalformedMessage(f"expected <rpc>, got <{_local(root.tag)}>")
    msg_id = root.get("message-id", "0")
    if _find(root, "get-config") is not None:
        return PolicyRequest(Operation.GET, ()), msg_id
    sep = _find(root, "srv6-explicit-path")
    if sep is None:
        raise MalformedMessage("no <srv6-explicit-path> element in <edit-config>")
    op_name = sep.get("operation", "")
    try:
        op = Operation(op_name)
    except ValueError:
        raise MalformedMessage(f"unknown operation {op_name!r}") from None
    paths = tuple(_path_from_xml(c) for c in sep if _local(c.tag) == "path")
    return PolicyRequest(op, paths), msg_id


def encode_rpc_reply(reply: PolicyReply, msg_id: str = "1") -> bytes:
    if reply.status is ReplyStatus.OK and not reply.paths:
        body = "<ok/>"
    elif reply.status is ReplyStatus.OK:
        paths = "".join(_path_xml(p) for p in reply.paths)
        body = f'<data><srv6-explicit-path xmlns="{SRV6_NS}">{paths}</srv6-explicit-path></data>'
    else:
        detail = reply.detail[0] if reply.detail else reply.status.value
        body = (
            f"<rpc-error><error-tag>{_ERROR_TAGS[reply.status]}</error-tag>"
            f"<error-message>{detail}</error-message></rpc-error>"
        )
    return f'<rpc-reply message-id="{msg_id}" xmlns="{BASE_NS}">{body}</rpc-reply>'.encode()


def decode_rpc_reply(data: bytes) -> PolicyReply:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as e:
        raise MalformedReply(f"bad XML: {e}") from e
    if _local(root.tag) != "rpc-reply":
        raise MalformedReply(f"expected <rpc-reply>, got <{_local(root.tag)}>")
    err = _find(root, "rpc-error")
    if err is not None:
        tag_elem = _find(err, "error-tag")
        tag = (tag_elem.text or "").strip() if tag_elem is not None else ""
        status = _STATUS_FROM_TAG.get(tag, ReplyStatus.INTERNAL_ERROR)
        msg = _find(err, "error-message")
        detail = ((msg.text or "").strip(),) if msg is not None else ()
        return PolicyReply(status, detail=detail)
    data_elem = _find(root, "data")
    if data_elem is not None:
        paths = tuple(
            _path_from_xml(p)
            for sep in data_elem.iter()
            if _local(sep.tag) == "srv6-explicit-path"
            for p in sep
            if _local(p.tag) == "path"
        )
        return PolicyReply(ReplyStatus.OK, paths)
    if _find(root, "ok") is not None:
        return PolicyReply(ReplyStatus.OK)
    raise MalformedReply("rpc-reply carries neither <ok/>, <data> nor <rpc-error>")


class _FramedChannel:
    """]]>]]>-framed messages over an SSH channel."""

    def __init__(self, chan: SshClientChannel | SshServerChannel):
        self.chan = chan
        self._buf = b""

    def send_msg(self, payload: bytes) -> None:
        self.chan.send(payload + EOM)

    def recv_msg(self) -> bytes | None:
        while EOM not in self._buf:
            chunk = self.chan.recv()
            if not chunk:
                return None
            self._buf += chunk
        msg, self._buf = self._buf.split(EOM, 1)
        return msg


class NetconfSession(ClientSession):
    """Secure only: NETCONF runs over the SSH subsystem channel."""

    kind = TransportKind.NETCONF

    def __init__(
        self,
        host: str,
        port: int,
        *,
        mode: InteractionMode,
        creds: ClientCreds,
        timeout: float = 30.0,
    ):
        super().__init__(mode, SecurityMode.SECURE)
        if not creds.ssh_client_key or not creds.ssh_host_pub:
            raise ConnectError("netconf needs an SSH client key and pinned host key")
        self.host = host
        self.port = port
        self.creds = creds
        self.timeout = timeout
        self.counters = ByteCounters()
        self._client: SshClient | None = None
        self._framed: _FramedChannel | None = None
        self._msg_id = 0

    def _open(self) -> _FramedChannel:
        try:
            client = open_client(
                self.host,
                self.port,
                client_key_path=self.creds.ssh_client_key,
                host_pub_path=self.creds.ssh_host_pub,
                username=self.creds.username,
                timeout=self.timeout,
                counters=self.counters,
            )
        except SshError as e:
            raise ConnectError(f"netconf connect {self.host}:{self.port}: {e}") from e
        framed = _FramedChannel(client.open_subsystem("netconf"))
        framed.send_msg(HELLO)
        hello = framed.recv_msg()
        if hello is None or b"<hello" not in hello:
            client.close()
            raise ConnectError("no NETCONF hello from server")
        self._client = client
        return framed

    def _persistent(self) -> _FramedChannel:
        if self._framed is None:
            self._framed = self._open()
        return self._framed

    def _exchange(self, framed: _FramedChannel, req: PolicyRequest) -> PolicyReply:
        self._msg_id += 1
        framed.send_msg(encode_rpc_request(req, self._msg_id))
        self.counters.count_message("tx")
        raw = framed.recv_msg()
        if raw is None:
            self._framed = None
            raise ConnectError("netconf session closed mid-request")
        self.counters.count_message("rx")
        return decode_rpc_reply(raw)

    def _send_once(self, req: PolicyRequest) -> PolicyReply:
        if self.mode is InteractionMode.P_CONN:
            return self._exchange(self._persistent(), req)
        framed = self._open()
        try:
            return self._exchange(framed, req)
        finally:
            self._teardown()

    def _send_bulk_once(self, reqs: list[PolicyRequest]) -> list[PolicyReply]:
        merged = merge_bulk(reqs)
        if self.mode is InteractionMode.P_CONN:
            reply = self._exchange(self._persistent(), merged)
        else:
            framed = self._open()
            try:
                reply = self._exchange(framed, merged)
            finally:
                self._teardown()
        return [reply] * len(reqs)

    def _teardown(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None
        self._framed = None

    def wire_counters(self) -> dict[str, int]:
        return self.counters.snapshot()

    def close(self) -> None:
        self._teardown()


def make_subsystem_handler(handler):
    """Server side: returns a subsystem handler enforcing PolicyRequests
    through handler(req) -> PolicyReply."""

    def netconf_subsystem(name: str, chan: SshServerChannel) -> None:
        if name != "netconf":
            chan.close()
            return
        framed = _FramedChannel(chan)
        framed.send_msg(HELLO)
        hello = framed.recv_msg()
        if hello is None:
            chan.close()
            return
        while True:
            raw = framed.recv_msg()
            if raw is None:
                break
            if b"close-session" in raw:
                framed.send_msg(encode_rpc_reply(PolicyReply(ReplyStatus.OK), "0"))
                break
            try:
                req, msg_id = decode_rpc_request(raw)
            except MalformedMessage as e:
                framed.send_msg(
                    encode_rpc_reply(PolicyReply(ReplyStatus.INVALID, detail=(str(e),)), "0")
                )
                continue
            reply = handler(req)
            framed.send_msg(encode_rpc_reply(reply, msg_id))
        chan.close()

    return netconf_subsystem
