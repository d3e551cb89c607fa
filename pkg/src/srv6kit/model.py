"""Domain types shared by every component: prefixes, segment lists, steering
policies and the request/reply pair spoken by all four southbound transports.

All types are immutable values; they can be freely shared between threads.
Validation is centralized in :func:`validate_request`, which reports
violations instead of raising, so that servers can turn bad requests into
an ``invalid`` reply rather than a stack trace.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field

# Linux IFNAMSIZ is 16 including the trailing NUL; interface names are kept
# within that so a real-kernel backend remains a drop-in extension.
MAX_DEVICE_LEN = 15

DEFAULT_TABLE = 254  # the "main" routing table of iproute2
MAX_TABLE = 2**32 - 1

_IPV4_MAPPED = ipaddress.IPv6Network("::ffff:0:0/96")


class InvalidPrefixLen(ValueError):
    """Prefix length outside [0, 128]."""


class Operation(enum.Enum):
    CREATE = "create"
    REMOVE = "remove"
    UPDATE = "update"
    GET = "get"


class EncapMode(enum.Enum):
    ENCAP = "encap"
    INSERT = "insert"


class ReplyStatus(enum.Enum):
    OK = "ok"
    NOT_FOUND = "not-found"
    ALREADY_EXISTS = "already-exists"
    INVALID = "invalid"
    INTERNAL_ERROR = "internal-error"


@dataclass(frozen=True, order=True)
class Ipv6Prefix:
    """An IPv6 prefix. Canonical form has all bits beyond prefix_len zero."""

    address: ipaddress.IPv6Address
    prefix_len: int

    @classmethod
    def parse(cls, text: str) -> "Ipv6Prefix":
        addr, _, plen = text.partition("/")
        if not plen:
            raise ValueError(f"prefix must be addr/len: {text!r}")
        return cls(ipaddress.IPv6Address(addr), int(plen))

    @property
    def is_canonical(self) -> bool:
        return canonicalize_prefix(self) == self

    def network_int(self) -> int:
        """Network address as an int with host bits cleared."""
        return int(canonicalize_prefix(self).address)

    def contains(self, addr: ipaddress.IPv6Address) -> bool:
        if self.prefix_len == 0:
            return True
        shift = 128 - self.prefix_len
        return (int(addr) >> shift) == (int(self.address) >> shift)

    def __str__(self) -> str:
        return f"{self.address}/{self.prefix_len}"


def canonicalize_prefix(p: Ipv6Prefix) -> Ipv6Prefix:
    """Clear all address bits beyond the prefix length. Idempotent."""
    if not 0 <= p.prefix_len <= 128:
        raise InvalidPrefixLen(f"prefix_len {p.prefix_len} out of [0, 128]")
    if p.prefix_len == 0:
        masked = 0
    else:
        mask = ((1 << p.prefix_len) - 1) << (128 - p.prefix_len)
        masked = int(p.address) & mask
    if masked == int(p.address):
        return p
    return Ipv6Prefix(ipaddress.IPv6Address(masked), p.prefix_len)


@dataclass(frozen=True)
class SegmentList:
    """Ordered segments in application order: segments[0] is traversed first."""

    segments: tuple[ipaddress.IPv6Address, ...]

    @classmethod
    def of(cls, *addrs: str | ipaddress.IPv6Address) -> "SegmentList":
        return cls(tuple(ipaddress.IPv6Address(a) for a in addrs))

    @classmethod
    def parse(cls, text: str) -> "SegmentList":
        """Parse a comma-separated segment list, e.g. ``fcff:2::1,fcff:4::1``."""
        parts = [t for t in text.split(",") if t]
        return cls(tuple(ipaddress.IPv6Address(p) for p in parts))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def __str__(self) -> str:
        return ",".join(str(s) for s in self.segments)


@dataclass(frozen=True)
class PathPolicy:
    """One SRv6 steering rule: destination prefix -> segment list."""

    destination: Ipv6Prefix
    segments: SegmentList
    device: str
    encapmode: EncapMode = EncapMode.ENCAP
    table: int = DEFAULT_TABLE

    def key(self) -> tuple[int, int, int]:
        """Identity of the installed rule: (network, prefix_len, table)."""
        return (self.destination.network_int(), self.destination.prefix_len, self.table)


@dataclass(frozen=True)
class PolicyRequest:
    operation: Operation
    paths: tuple[PathPolicy, ...] = ()

    @classmethod
    def create(cls, *paths: PathPolicy) -> "PolicyRequest":
        return cls(Operation.CREATE, tuple(paths))

    @classmethod
    def remove(cls, *paths: PathPolicy) -> "PolicyRequest":
        return cls(Operation.REMOVE, tuple(paths))

    @classmethod
    def update(cls, *paths: PathPolicy) -> "PolicyRequest":
        return cls(Operation.UPDATE, tuple(paths))

    @classmethod
    def get(cls) -> "PolicyRequest":
        return cls(Operation.GET, ())


@dataclass(frozen=True)
class PolicyReply:
    status: ReplyStatus
    paths: tuple[PathPolicy, ...] = ()
    # optional per-path diagnostics for batch requests; not part of the wire
    # status itself, carried only by transports that can express it
    detail: tuple[str, ...] = field(default=(), compare=False)


def _validate_path(path: PathPolicy, where: str, out: list[str]) -> None:
    if not 0 <= path.destination.prefix_len <= 128:
        out.append(f"{where}: prefix_len {path.destination.prefix_len} out of [0, 128]")
        return
    if not path.destination.is_canonical:
        out.append(f"{where}: destination {path.destination} not in canonical form")
    if len(path.segments) == 0:
        out.append(f"{where}: segment list must be non-empty")
    if not path.device:
        out.append(f"{where}: device must be non-empty")
    elif len(path.device.encode()) > MAX_DEVICE_LEN:
        out.append(f"{where}: device {path.device!r} longer than {MAX_DEVICE_LEN} bytes")
    if not 0 <= path.table <= MAX_TABLE:
        out.append(f"{where}: table {path.table} out of range")
    if path.encapmode is EncapMode.INSERT and _is_ipv4_mapped(path.destination):
        out.append(f"{where}: insert requires IPv6 traffic")


def _is_ipv4_mapped(prefix: Ipv6Prefix) -> bool:
    return prefix.prefix_len >= _IPV4_MAPPED.prefixlen and prefix.address in _IPV4_MAPPED


def validate_request(req: PolicyRequest) -> list[str]:
    """Check every invariant of a request; returns [] when it is valid."""
    violations: list[str] = []
    if req.operation is Operation.GET:
        if req.paths:
            violations.append("paths must be empty for Get")
    else:
        if not req.paths:
            violations.append(f"paths must be non-empty for {req.operation.value.capitalize()}")
    for i, path in enumerate(req.paths):
        _validate_path(path, f"paths[{i}]", violations)
    return violations
