"""The node-side SRv6 manager: enforcement backends, the policy store and
the multi-transport southbound server.

Two enforcement strategies are provided. DirectBackend applies commands
in-process against the simulated FIB. PerProcessBackend mirrors the
shell-style enforcement path: every command spawns a short-lived helper
process that connects back to the agent's local FIB service over a
loopback stream socket, sends one grammar line, reads the status and
exits. Both backends produce identical FIB end-states for identical
command sequences.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import socket
import struct
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field, replace

from . import cligrammar
from .cligrammar import Command, GrammarError
from .creds import CredentialError, load_authorized_keys, load_host_key
from .lpm import Fib, FibAlreadyExists, FibEntry, FibNotFound, Srv6Steer
from .model import (
    Operation,
    PathPolicy,
    PolicyReply,
    PolicyRequest,
    ReplyStatus,
    validate_request,
)
from .model import _validate_path  # shared path checks for CLI-originated ops
from .transports import netconf as netconf_mod
from .transports import rest as rest_mod
from .transports import rpcbin as rpcbin_mod
from .transports import sshcli as sshcli_mod
from .transports.sshlite import SshHandlers, SshServer
from .transports.streams import Stream, StreamClosed, server_tls_context

log = logging.getLogger("srv6kit.agent")


class BindError(OSError):
    pass


class BackendUnavailable(RuntimeError):
    pass


# ------------------------------------------------------------ backends ----


class DirectBackend:
    """In-process enforcement straight into the FIB."""

    def __init__(self, fib: Fib):
        self.fib = fib

    def execute(self, op: Operation, path: PathPolicy) -> ReplyStatus:
        try:
            if op is Operation.CREATE:
                self.fib.add(_entry_for(path), path.table)
            elif op is Operation.REMOVE:
                self.fib.remove(path.destination, path.table)
            elif op is Operation.UPDATE:
                self.fib.update(_entry_for(path), path.table)
            else:
                return ReplyStatus.INVALID
        except FibAlreadyExists:
            return ReplyStatus.ALREADY_EXISTS
        except FibNotFound:
            return ReplyStatus.NOT_FOUND
        except Exception:
            log.exception("backend failure on %s %s", op.value, path.destination)
            return ReplyStatus.INTERNAL_ERROR
        return ReplyStatus.OK

    def run_line(self, line: str) -> PolicyReply:
        """Apply one iproute2-grammar line (the CLI and helper path)."""
        try:
            cmd = cligrammar.parse_command(line)
        except GrammarError as e:
            return PolicyReply(ReplyStatus.INVALID, detail=(str(e),))
        return self.run_command(cmd)

    def run_command(self, cmd: Command) -> PolicyReply:
        if cmd.operation is Operation.GET:
            return PolicyReply(ReplyStatus.OK, tuple(self.dump()))
        if cmd.path is None:
            # short-form delete: destination and table identify the entry
            try:
                self.fib.remove(cmd.destination, cmd.table)
            except FibNotFound:
                return PolicyReply(ReplyStatus.NOT_FOUND)
            return PolicyReply(ReplyStatus.OK)
        violations: list[str] = []
        _validate_path(cmd.path, "path", violations)
        if violations:
            return PolicyReply(ReplyStatus.INVALID, detail=tuple(violations))
        status = self.execute(cmd.operation, cmd.path)
        return PolicyReply(status)

    def dump(self) -> list[PathPolicy]:
        """Installed steering policies across all tables, sorted by
        destination."""
        out = []
        for table in self.fib.tables() or [254]:
            for entry in self.fib.list(table):
                if isinstance(entry.action, Srv6Steer):
                    out.append(
                        PathPolicy(
                            destination=entry.destination,
                            segments=entry.action.segments,
                            device=entry.action.device,
                            encapmode=entry.action.encapmode,
                            table=table,
                        )
                    )
        out.sort(key=PathPolicy.key)
        return out

    def close(self) -> None:
        pass


def _entry_for(path: PathPolicy) -> FibEntry:
    return FibEntry(
        destination=path.destination,
        action=Srv6Steer(path.segments, path.encapmode, path.device),
    )


# ------------------------------------------------- per-process backend ----

# The helper is the stand-in for the external configuration command that a
# shell-style manager spawns per operation. It must be cheap to start, so a
# tiny C program is compiled on first use; bash (via /dev/tcp) and a Python
# one-liner serve as fallbacks when no compiler is around.
_HELPER_C_SOURCE = r"""
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>
#include <sys/socket.h>
#include <netinet/in.h>
#include <arpa/inet.h>

int main(int argc, char **argv) {
    if (argc < 3) return 2;
    int port = atoi(argv[1]);
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return 2;
    struct sockaddr_in sa = {0};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    inet_pton(AF_INET, "127.0.0.1", &sa.sin_addr);
    if (connect(fd, (struct sockaddr *)&sa, sizeof sa) != 0) return 2;
    char buf[65536];
    int n = snprintf(buf, sizeof buf, "%s\n", argv[2]);
    if (n >= (int)sizeof buf) return 2;
    if (write(fd, buf, n) != n) return 2;
    int got = 0;
    while (got < (int)sizeof buf - 1) {
        int r = read(fd, buf + got, sizeof buf - 1 - got);
        if (r <= 0) break;
        got += r;
        if (memchr(buf, '\n', got)) break;
    }
    if (got <= 0) return 2;
    buf[got] = 0;
    if (strncmp(buf, "ok", 2) == 0) return 0;
    if (strncmp(buf, "not-found", 9) == 0) return 3;
    if (strncmp(buf, "already-exists", 14) == 0) return 4;
    if (strncmp(buf, "invalid", 7) == 0) return 5;
    if (strncmp(buf, "internal-error", 14) == 0) return 6;
    return 1;
}
"""

_HELPER_BASH_SCRIPT = (
    'exec 3<>"/dev/tcp/127.0.0.1/$0" || exit 2\n'
    "printf '%s\\n' \"$1\" >&3 || exit 2\n"
    "IFS= read -r reply <&3 || exit 2\n"
    'case "$reply" in\n'
    "  ok*) exit 0;;\n"
    "  not-found*) exit 3;;\n"
    "  already-exists*) exit 4;;\n"
    "  invalid*) exit 5;;\n"
    "  internal-error*) exit 6;;\n"
    "  *) exit 1;;\n"
    "esac\n"
)

_HELPER_PY_SCRIPT = (
    "import socket,sys\n"
    's=socket.create_connection(("127.0.0.1",int(sys.argv[1])))\n'
    's.sendall(sys.argv[2].encode()+b"\\n")\n'
    'r=s.makefile("rb").readline().decode().split()\n'
    'm={"ok":0,"not-found":3,"already-exists":4,"invalid":5,"internal-error":6}\n'
    'sys.exit(m.get(r[0] if r else "",1))\n'
)

_STATUS_FROM_EXIT = {v: k for k, v in sshcli_mod.EXIT_CODES.items()}


@dataclass(frozen=True)
class Helper:
    """A resolved helper program: argv = prefix + [port, command]."""

    name: str
    argv_prefix: tuple[str, ...]

    def run(self, port: int, line: str) -> int:
        argv = list(self.argv_prefix) + [str(port), line]
        pid = os.posix_spawn(argv[0], argv, {})
        _, status = os.waitpid(pid, 0)
        return os.waitstatus_to_exitcode(status)


def _helper_cache_dir() -> str:
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(
        tempfile.gettempdir(), f"srv6kit-{os.getuid()}"
    )
    path = os.path.join(base, "helper")
    os.makedirs(path, exist_ok=True)
    return path


def _build_c_helper() -> Helper | None:
    cc = shutil.which("cc") or shutil.which("gcc") or shutil.which("clang")
    if cc is None:
        return None
    out = os.path.join(_helper_cache_dir(), "fib-helper")
    if not os.path.exists(out):
        src = out + ".c"
        with open(src, "w") as f:
            f.write(_HELPER_C_SOURCE)
        tmp = out + ".tmp"
        try:
            subprocess.run(
                [cc, "-O2", "-o", tmp, src],
                check=True,
                capture_output=True,
                timeout=60,
            )
        except (subprocess.SubprocessError, OSError):
            return None
        os.replace(tmp, out)
    return Helper("c", (out,))


def _bash_helper() -> Helper | None:
    bash = shutil.which("bash")
    if bash is None:
        return None
    return Helper("bash", (bash, "-c", _HELPER_BASH_SCRIPT))


def _python_helper() -> Helper:
    return Helper("python", (sys.executable, "-S", "-E", "-c", _HELPER_PY_SCRIPT))


def _candidate_helpers() -> list[Helper]:
    forced = os.environ.get("SRV6_KIT_HELPER")
    table = {"c": _build_c_helper, "bash": _bash_helper, "python": _python_helper}
    if forced:
        builder = table.get(forced)
        if builder is None:
            raise BackendUnavailable(f"unknown SRV6_KIT_HELPER {forced!r}")
        helper = builder()
        if helper is None:
            raise BackendUnavailable(f"forced helper {forced!r} is unavailable")
        return [helper]
    out = []
    for builder in (table["c"], table["bash"], table["python"]):
        helper = builder()
        if helper is not None:
            out.append(helper)
    return out


class FibService:
    """Local stream-socket service: one grammar line per connection in,
    one status line out. The enforcement target of the helper processes."""

    def __init__(self, backend: DirectBackend, host: str = "127.0.0.1"):
        self._backend = backend
        self._listener = socket.create_server((host, 0))
        self.port = self._listener.getsockname()[1]
        self._stop = False
        threading.Thread(
            target=self._accept_loop, name=f"fib-service-{self.port}", daemon=True
        ).start()

    def _accept_loop(self) -> None:
        while not self._stop:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(sock,), daemon=True).start()

    def _serve(self, sock: socket.socket) -> None:
        try:
            with sock:
                stream = Stream(sock)
                line = stream.read_line().decode().strip()
                if line == "ping":
                    stream.send(b"ok\n")
                    return
                reply = self._backend.run_line(line)
                word = reply.status.value
                if reply.paths:
                    listing = ";".join(cligrammar.policy_line(p) for p in reply.paths)
                    stream.send(f"{word} {listing}\n".encode())
                else:
                    stream.send(f"{word}\n".encode())
        except (OSError, StreamClosed, UnicodeDecodeError):
            pass

    def close(self) -> None:
        self._stop = True
        try:
            self._listener.close()
        except OSError:
            pass


class PerProcessBackend:
    """One short-lived helper process per command, enforcing through the
    agent's FIB service."""

    def __init__(self, fib: Fib, helper: Helper | None = None):
        self._direct = DirectBackend(fib)
        self.service = FibService(self._direct)
        if helper is not None:
            self.helper = helper
            if self.helper.run(self.service.port, "ping") != 0:
                raise BackendUnavailable(f"helper {helper.name!r} cannot reach the FIB service")
        else:
            self.helper = self._probe()

    def _probe(self) -> Helper:
        for helper in _candidate_helpers():
            try:
                if helper.run(self.service.port, "ping") == 0:
                    log.info("per-process backend using %s helper", helper.name)
                    return helper
            except OSError:
                continue
        raise BackendUnavailable("no working helper (tried c, bash, python)")

    def execute(self, op: Operation, path: PathPolicy) -> ReplyStatus:
        line = cligrammar.encode_path(op, path)
        try:
            code = self.helper.run(self.service.port, line)
        except OSError as e:
            raise BackendUnavailable(f"helper spawn failed: {e}") from e
        if code == 2:
            raise BackendUnavailable("helper could not reach the FIB service")
        return _STATUS_FROM_EXIT.get(code, ReplyStatus.INTERNAL_ERROR)

    def run_line(self, line: str) -> PolicyReply:
        try:
            cmd = cligrammar.parse_command(line)
        except GrammarError as e:
            return PolicyReply(ReplyStatus.INVALID, detail=(str(e),))
        if cmd.operation is Operation.GET:
            # listings do not spawn; only enforcement mirrors the shell path
            return PolicyReply(ReplyStatus.OK, tuple(self.dump()))
        code = self.helper.run(self.service.port, line)
        if code == 2:
            raise BackendUnavailable("helper could not reach the FIB service")
        return PolicyReply(_STATUS_FROM_EXIT.get(code, ReplyStatus.INTERNAL_ERROR))

    def dump(self) -> list[PathPolicy]:
        return self._direct.dump()

    def close(self) -> None:
        self.service.close()


# --------------------------------------------------------- policy store ----


class PolicyStore:
    """Serialization point for the shared policy state: transports from
    every session funnel through apply_request, one request at a time."""

    def __init__(self, backend):
        self.backend = backend
        self._lock = threading.Lock()

    def apply_request(self, req: PolicyRequest) -> PolicyReply:
        violations = validate_request(req)
        if violations:
            return PolicyReply(ReplyStatus.INVALID, detail=tuple(violations))
        with self._lock:
            if req.operation is Operation.GET:
                return PolicyReply(ReplyStatus.OK, tuple(self.backend.dump()))
            statuses = [self.backend.execute(req.operation, p) for p in req.paths]
        first_bad = next((s for s in statuses if s is not ReplyStatus.OK), ReplyStatus.OK)
        detail = tuple(
            f"paths[{i}]: {s.value}" for i, s in enumerate(statuses) if s is not ReplyStatus.OK
        )
        return PolicyReply(first_bad, detail=detail)

    def run_line(self, line: str) -> PolicyReply:
        with self._lock:
            return self.backend.run_line(line)


class NoopStore:
    """Communication-only mode: reply without touching any backend."""

    def apply_request(self, req: PolicyRequest) -> PolicyReply:
        return PolicyReply(ReplyStatus.OK)

    def run_line(self, line: str) -> PolicyReply:
        return PolicyReply(ReplyStatus.OK)


# -------------------------------------------------------- batch driver ----


@dataclass
class BatchTiming:
    total_s: float
    per_command_s: list[float]
    statuses: list[ReplyStatus]


def enforce_batch(backend, op: Operation, paths: list[PathPolicy]) -> BatchTiming:
    """Run a command batch sequentially, timing with the monotonic clock."""
    per: list[float] = []
    statuses: list[ReplyStatus] = []
    t0 = time.perf_counter()
    for path in paths:
        t1 = time.perf_counter()
        statuses.append(backend.execute(op, path))
        per.append(time.perf_counter() - t1)
    return BatchTiming(time.perf_counter() - t0, per, statuses)


# -------------------------------------------------------------- agent ----


@dataclass(frozen=True)
class TransportConfig:
    listen: str = "127.0.0.1:0"
    tls: bool = False

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


@dataclass(frozen=True)
class AgentConfig:
    node_id: str = "node"
    transports: dict = field(default_factory=lambda: {"rpc-bin": TransportConfig()})
    backend: str = "direct"  # "direct" | "per-process"
    noop: bool = False
    tls_cert: str | None = None
    tls_key: str | None = None
    ssh_host_key: str | None = None
    authorized_keys: str | None = None

    @classmethod
    def from_json(cls, path: str) -> "AgentConfig":
        with open(path) as f:
            raw = json.load(f)
        creds = raw.get("credentials", {})
        transports = {
            name: TransportConfig(tc.get("listen", "127.0.0.1:0"), tc.get("tls", False))
            for name, tc in raw.get("transports", {}).items()
        }
        cfg = cls(
            node_id=raw.get("node_id", "node"),
            transports=transports,
            backend=raw.get("backend", "direct"),
            noop=raw.get("noop", False),
            tls_cert=creds.get("tls_cert"),
            tls_key=creds.get("tls_key"),
            ssh_host_key=creds.get("ssh_host_key"),
            authorized_keys=creds.get("authorized_keys"),
        )
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "AgentConfig":
        transports = dict(self.transports)
        for name, tc in list(transports.items()):
            env = "SRV6_KIT_%s_LISTEN" % name.upper().replace("-", "_")
            override = os.environ.get(env)
            if override:
                transports[name] = replace(tc, listen=override)
        return replace(self, transports=transports)


class Agent:
    """One SRv6 node's manager: a policy store plus all enabled southbound
    servers. Use serve() or the context manager form."""

    def __init__(self, config: AgentConfig, fib: Fib | None = None):
        if not config.transports:
            raise ValueError("at least one transport must be enabled")
        self.config = config
        self.fib = fib if fib is not None else Fib()
        self.backend = None
        self.store = None
        self.endpoints: dict[str, tuple[str, int]] = {}
        self._servers: list = []
        self._started = False

    def start(self) -> "Agent":
        cfg = self.config
        if cfg.backend == "per-process":
            self.backend = PerProcessBackend(self.fib)
        elif cfg.backend == "direct":
            self.backend = DirectBackend(self.fib)
        else:
            raise ValueError(f"unknown backend {cfg.backend!r}")
        self.store = NoopStore() if cfg.noop else PolicyStore(self.backend)

        ssh_material = None
        try:
            for name, tc in cfg.transports.items():
                host, port = tc.host_port()
                if name in ("rpc-bin", "rest"):
                    tls_ctx = None
                    if tc.tls:
                        if not cfg.tls_cert or not cfg.tls_key:
                            raise CredentialError(f"{name}: TLS enabled but cert/key missing")
                        try:
                            tls_ctx = server_tls_context(cfg.tls_cert, cfg.tls_key)
                        except (OSError, ValueError) as e:
                            raise CredentialError(f"{name}: cannot load TLS material: {e}") from e
                    server_cls = (
                        rpcbin_mod.RpcBinServer if name == "rpc-bin" else rest_mod.RestServer
                    )
                    try:
                        server = server_cls(host, port, self.store.apply_request, tls_ctx=tls_ctx)
                    except OSError as e:
                        raise BindError(f"{name}: cannot bind {tc.listen}: {e}") from e
                elif name in ("netconf", "ssh-cli"):
                    if ssh_material is None:
                        if not cfg.ssh_host_key or not cfg.authorized_keys:
                            raise CredentialError(f"{name}: SSH host key or authorized keys missing")
                        ssh_material = (
                            load_host_key(cfg.ssh_host_key),
                            load_authorized_keys(cfg.authorized_keys),
                        )
                    handlers = SshHandlers(
                        exec_handler=sshcli_mod.make_exec_handler(self.store.run_line),
                        subsystem_handler=netconf_mod.make_subsystem_handler(
                            self.store.apply_request
                        ),
                    )
                    try:
                        server = SshServer(
                            host,
                            port,
                            host_key=ssh_material[0],
                            authorized_keys=ssh_material[1],
                            handlers=handlers,
                        )
                    except OSError as e:
                        raise BindError(f"{name}: cannot bind {tc.listen}: {e}") from e
                else:
                    raise ValueError(f"unknown transport {name!r}")
                self._servers.append(server)
                self.endpoints[name] = (host, server.port)
                log.info("agent %s: %s listening on %s:%d", cfg.node_id, name, host, server.port)
        except BaseException:
            self.shutdown()
            raise
        self._started = True
        return self

    def apply_request(self, req: PolicyRequest) -> PolicyReply:
        """In-process request path (used by local experiment modes)."""
        return self.store.apply_request(req)

    def reset(self) -> None:
        """Remove every installed policy, keeping servers and sessions up."""
        self.fib.clear()

    def shutdown(self) -> None:
        for server in self._servers:
            try:
                server.close()
            except OSError:
                pass
        self._servers = []
        if self.backend is not None:
            self.backend.close()
        self._started = False

    def __enter__(self) -> "Agent":
        return self.start() if not self._started else self

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve(config: AgentConfig, fib: Fib | None = None) -> Agent:
    """Start an agent; returns the running handle (shutdown() to stop)."""
    return Agent(config, fib).start()
