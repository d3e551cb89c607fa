"""SSH/CLI transport: iproute2-style command strings over an SSH exec
channel. The reply is the process exit status plus stdout; a listing
returns one policy per line in the same grammar.

Two handshake behaviors are supported. ``per-command`` tears the secure
session down after every command, repeating the whole handshake each time;
``persistent`` authenticates once and runs each command on a fresh channel
of the same session, which is drastically cheaper.

Exit status codes: 0 ok, 3 not-found, 4 already-exists, 5 invalid,
6 internal-error.
"""

from __future__ import annotations

from .. import cligrammar
from ..model import Operation, PolicyReply, PolicyRequest, ReplyStatus
from . import (
    ClientCreds,
    ClientSession,
    ConnectError,
    EncodingUnsupported,
    HandshakeMode,
    InteractionMode,
    MalformedReply,
    SecurityMode,
    TransportKind,
    merge_bulk,
)
from .sshlite import SshClient, SshError, open_client
from .streams import ByteCounters

EXIT_CODES = {
    ReplyStatus.OK: 0,
    ReplyStatus.NOT_FOUND: 3,
    ReplyStatus.ALREADY_EXISTS: 4,
    ReplyStatus.INVALID: 5,
    ReplyStatus.INTERNAL_ERROR: 6,
}
_STATUS_FROM_EXIT = {v: k for k, v in EXIT_CODES.items()}


def encode_command(req: PolicyRequest) -> str:
    """One request as a command string; a multi-path request becomes a
    ;-joined command list executed in one remote invocation."""
    if req.operation is Operation.GET:
        return cligrammar.encode_show()
    if not req.paths:
        raise EncodingUnsupported(f"{req.operation.value} without paths has no CLI form")
    return "; ".join(cligrammar.encode_path(req.operation, p) for p in req.paths)


def decode_command(command: str) -> PolicyRequest:
    """Inverse of encode_command for full-form commands."""
    paths = []
    op = None
    for part in command.split(";"):
        part = part.strip()
        if not part:
            continue
        cmd = cligrammar.parse_command(part)
        if op is None:
            op = cmd.operation
        elif cmd.operation is not op:
            raise cligrammar.GrammarError("mixed operations in one command list")
        if cmd.path is not None:
            paths.append(cmd.path)
    if op is None:
        raise cligrammar.GrammarError("empty command")
    return PolicyRequest(op, tuple(paths))


def decode_exec_reply(
    op: Operation, exit_status: int, stdout: bytes
) -> PolicyReply:
    status = _STATUS_FROM_EXIT.get(exit_status)
    if status is None:
        raise MalformedReply(f"unknown exit status {exit_status}")
    if op is Operation.GET and status is ReplyStatus.OK:
        paths = []
        for line in stdout.decode().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                paths.append(cligrammar.parse_policy_line(line))
            except cligrammar.GrammarError as e:
                raise MalformedReply(f"bad policy line {line!r}: {e}") from e
        return PolicyReply(status, tuple(paths))
    detail = (stdout.decode(errors="replace").strip(),) if stdout else ()
    return PolicyReply(status, detail=detail)


class SshCliSession(ClientSession):
    """Secure only: the CLI rides on the SSH exec channel."""

    kind = TransportKind.SSH_CLI

    def __init__(
        self,
        host: str,
        port: int,
        *,
        mode: InteractionMode,
        creds: ClientCreds,
        handshake: HandshakeMode = HandshakeMode.PER_COMMAND,
        timeout: float = 30.0,
    ):
        super().__init__(mode, SecurityMode.SECURE)
        if not creds.ssh_client_key or not creds.ssh_host_pub:
            raise ConnectError("ssh-cli needs an SSH client key and pinned host key")
        self.host = host
        self.port = port
        self.creds = creds
        self.handshake = handshake
        self.timeout = timeout
        self.counters = ByteCounters()
        self._client: SshClient | None = None

    def _connect(self) -> SshClient:
        try:
            return open_client(
                self.host,
                self.port,
                client_key_path=self.creds.ssh_client_key,
                host_pub_path=self.creds.ssh_host_pub,
                username=self.creds.username,
                timeout=self.timeout,
                counters=self.counters,
            )
        except SshError as e:
            raise ConnectError(f"ssh-cli connect {self.host}:{self.port}: {e}") from e

    def _exec(self, command: str) -> tuple[int, bytes]:
        ephemeral = (
            self.mode is InteractionMode.NP_CONN_SEQ
            or self.handshake is HandshakeMode.PER_COMMAND
        )
        if ephemeral:
            client = self._connect()
            try:
                result = client.exec_command(command)
            except SshError as e:
                raise ConnectError(str(e)) from e
            finally:
                client.close()
            return result
        if self._client is None:
            self._client = self._connect()
        try:
            return self._client.exec_command(command)
        except SshError as e:
            self._client = None
            raise ConnectError(str(e)) from e

    def _send_once(self, req: PolicyRequest) -> PolicyReply:
        command = encode_command(req)
        self.counters.count_message("tx")
        exit_status, stdout = self._exec(command)
        self.counters.count_message("rx")
        return decode_exec_reply(req.operation, exit_status, stdout)

    def _send_bulk_once(self, reqs: list[PolicyRequest]) -> list[PolicyReply]:
        merged = merge_bulk(reqs)
        reply = self._send_once(merged)
        return [reply] * len(reqs)

    def wire_counters(self) -> dict[str, int]:
        return self.counters.snapshot()

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None


def make_exec_handler(command_runner):
    """Server side: exec handler mapping command strings through
    command_runner(line) -> PolicyReply. A ;-joined list runs every command
    and reports the first non-ok status (no rollback)."""

    def exec_handler(command: str) -> tuple[int, bytes]:
        worst = ReplyStatus.OK
        out = bytearray()
        ran_any = False
        for part in command.split(";"):
            part = part.strip()
            if not part:
                continue
            ran_any = True
            try:
                reply = command_runner(part)
            except cligrammar.GrammarError as e:
                out += f"{e}\n".encode()
                if worst is ReplyStatus.OK:
                    worst = ReplyStatus.INVALID
                continue
            if reply.paths:
                for path in reply.paths:
                    out += (cligrammar.policy_line(path) + "\n").encode()
            if reply.status is not ReplyStatus.OK and worst is ReplyStatus.OK:
                worst = reply.status
                if reply.detail:
                    out += f"{reply.detail[0]}\n".encode()
        if not ran_any:
            worst = ReplyStatus.INVALID
        return EXIT_CODES[worst], bytes(out)

    return exec_handler
