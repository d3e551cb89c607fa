"""iproute2-style command grammar for SRv6 steering rules.

This is the line format spoken by the SSH/CLI transport and by the local
FIB service used by the per-process enforcement backend:

    ip -6 route add <dest> encap seg6 mode <encap|insert> segs <s1,s2> dev <dev> [table <id>]
    ip -6 route change <dest> encap seg6 mode <m> segs <...> dev <dev> [table <id>]
    ip -6 route del <dest> [encap seg6 mode <m> segs <...> dev <dev>] [table <id>]
    ip -6 route show [table <id>]

Policy listings are emitted one per line in the same attribute grammar:

    <dest> encap seg6 mode <m> segs <s1,s2> dev <dev> table <id>
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import (
    DEFAULT_TABLE,
    EncapMode,
    Ipv6Prefix,
    Operation,
    PathPolicy,
    SegmentList,
)

_VERB_TO_OP = {
    "add": Operation.CREATE,
    "del": Operation.REMOVE,
    "delete": Operation.REMOVE,
    "change": Operation.UPDATE,
    "show": Operation.GET,
}
_OP_TO_VERB = {
    Operation.CREATE: "add",
    Operation.REMOVE: "del",
    Operation.UPDATE: "change",
    Operation.GET: "show",
}


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Command:
    """A parsed route command. path is None for show and for short-form
    deletes, which carry only destination/table."""

    operation: Operation
    path: PathPolicy | None = None
    destination: Ipv6Prefix | None = None
    table: int = DEFAULT_TABLE


def encode_path(op: Operation, path: PathPolicy) -> str:
    if op is Operation.GET:
        raise GrammarError("show takes no path")
    verb = _OP_TO_VERB[op]
    return (
        f"ip -6 route {verb} {path.destination} encap seg6 "
        f"mode {path.encapmode.value} segs {path.segments} "
        f"dev {path.device} table {path.table}"
    )


def encode_show() -> str:
    return "ip -6 route show"


def policy_line(path: PathPolicy) -> str:
    """One installed policy in listing form."""
    return (
        f"{path.destination} encap seg6 mode {path.encapmode.value} "
        f"segs {path.segments} dev {path.device} table {path.table}"
    )


def parse_policy_line(line: str) -> PathPolicy:
    toks = line.split()
    if not toks:
        raise GrammarError("empty policy line")
    return _parse_attrs(toks[0], toks[1:])


def parse_command(line: str) -> Command:
    toks = line.split()
    if len(toks) < 4 or toks[0] != "ip" or toks[1] != "-6" or toks[2] != "route":
        raise GrammarError(f"not an ip -6 route command: {line!r}")
    verb = toks[3]
    op = _VERB_TO_OP.get(verb)
    if op is None:
        raise GrammarError(f"unknown route verb {verb!r}")
    rest = toks[4:]
    if op is Operation.GET:
        table = DEFAULT_TABLE
        if rest:
            if len(rest) != 2 or rest[0] != "table":
                raise GrammarError(f"bad show arguments: {' '.join(rest)!r}")
            table = _parse_table(rest[1])
        return Command(op, table=table)
    if not rest:
        raise GrammarError(f"{verb} needs a destination")
    dest = _parse_dest(rest[0])
    attrs = rest[1:]
    if op is Operation.REMOVE and (not attrs or attrs[0] == "table"):
        # short-form delete: destination (and optional table) only
        table = DEFAULT_TABLE
        if attrs:
            if len(attrs) != 2:
                raise GrammarError(f"bad delete arguments: {' '.join(attrs)!r}")
            table = _parse_table(attrs[1])
        return Command(op, destination=dest, table=table)
    path = _parse_attrs(rest[0], attrs)
    return Command(op, path=path, destination=dest, table=path.table)


def _parse_dest(tok: str) -> Ipv6Prefix:
    try:
        if "/" in tok:
            return Ipv6Prefix.parse(tok)
        return Ipv6Prefix.parse(tok + "/128")
    except ValueError as e:
        raise GrammarError(f"bad destination {tok!r}: {e}") from e


def _parse_table(tok: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise GrammarError(f"bad table id {tok!r}") from None


def _parse_attrs(dest_tok: str, attrs: list[str]) -> PathPolicy:
    dest = _parse_dest(dest_tok)
    mode = None
    segs = None
    dev = None
    table = DEFAULT_TABLE
    i = 0
    while i < len(attrs):
        key = attrs[i]
        if key == "encap":
            if i + 1 >= len(attrs) or attrs[i + 1] != "seg6":
                raise GrammarError("only 'encap seg6' is supported")
            i += 2
            continue
        if i + 1 >= len(attrs):
            raise GrammarError(f"attribute {key!r} needs a value")
        val = attrs[i + 1]
        if key == "mode":
            try:
                mode = EncapMode(val)
            except ValueError:
                raise GrammarError(f"bad mode {val!r}") from None
        elif key == "segs":
            try:
                segs = SegmentList.parse(val)
            except ValueError as e:
                raise GrammarError(f"bad segs {val!r}: {e}") from e
        elif key == "dev":
            dev = val
        elif key == "table":
            table = _parse_table(val)
        else:
            raise GrammarError(f"unknown attribute {key!r}")
        i += 2
    if mode is None or segs is None or dev is None:
        raise GrammarError("route needs mode, segs and dev attributes")
    return PathPolicy(destination=dest, segments=segs, device=dev, encapmode=mode, table=table)
