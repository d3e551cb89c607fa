"""Benchmark harness: local enforcement, full-configuration and
communication-only experiments, with mean / coefficient-of-variation /
95%-confidence-interval summaries and CSV/JSON reports.

Student-t 0.975 quantiles are embedded for 1-30 degrees of freedom (normal
approximation above) so the confidence intervals are reproducible without
a statistics dependency.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

from .agent import Agent, AgentConfig, DirectBackend, PerProcessBackend, TransportConfig, enforce_batch
from .creds import CredentialBundle
from .model import (
    Ipv6Prefix,
    Operation,
    PathPolicy,
    PolicyRequest,
    ReplyStatus,
    SegmentList,
)
from .netem import ImpairmentProfile, NetemProxy
from .transports import (
    ClientCreds,
    HandshakeMode,
    InteractionMode,
    SecurityMode,
    TransportKind,
    open_session,
)

log = logging.getLogger("srv6kit.bench")

# t(0.975, df) for df = 1..30; normal quantile above.
_T_975 = (
    12.706204736432095, 4.302652729696142, 3.182446305284263,
    2.7764451051977987, 2.570581835636314, 2.4469118511449692,
    2.3646242515927844, 2.306004135204166, 2.2621571628540993,
    2.2281388519649385, 2.200985160082949, 2.1788128296634177,
    2.1603686564610127, 2.1447866879169273, 2.131449545559323,
    2.1199052992210112, 2.1098155778331806, 2.10092204024096,
    2.093024054408263, 2.0859634472658364, 2.079613844727662,
    2.0738730679040147, 2.0686576104190406, 2.0638985616280205,
    2.059538552753294, 2.055529438642871, 2.0518305164802833,
    2.048407141795244, 2.045229642132703, 2.0422724563012373,
)
_Z_975 = 1.959963984540054


class InsufficientSamples(ValueError):
    pass


def t_quantile_975(df: int) -> float:
    if df < 1:
        raise InsufficientSamples("need at least 1 degree of freedom")
    if df <= 30:
        return _T_975[df - 1]
    return _Z_975


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    cv_pct: float
    ci95_rel_pct: float
    n: int


def summarize(samples: list[float]) -> SummaryStats:
    """Mean, CV = s/mean and the relative 95% confidence-interval
    half-width (percent of the mean), with s the n-1 sample deviation."""
    n = len(samples)
    if n < 2:
        raise InsufficientSamples(f"need >= 2 samples, got {n}")
    mean = math.fsum(samples) / n
    var = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    s = math.sqrt(var)
    if mean == 0:
        raise InsufficientSamples("zero mean; relative statistics undefined")
    cv = s / mean * 100.0
    ci95 = t_quantile_975(n - 1) * s / (math.sqrt(n) * mean) * 100.0
    return SummaryStats(mean=mean, cv_pct=cv, ci95_rel_pct=ci95, n=n)


# ---------------------------------------------------------------- specs ----


@dataclass(frozen=True)
class BenchSpec:
    experiment: str  # "local-enforce" | "full-config" | "comm-only"
    n_commands: int = 100
    repetitions: int = 20
    operation: str = "add"  # "add" | "delete" | "both" (local only)
    backend: str = "direct"  # local: "direct" | "per-process" | "both"
    transports: tuple[str, ...] = ("rpc-bin",)
    mode: str = "p-conn"
    security: str = "insecure"
    handshake: str = "per-command"
    impairments: ImpairmentProfile | None = None
    warmup: int = 1

    def __post_init__(self):
        if self.n_commands < 1 or self.repetitions < 1:
            raise ValueError("n_commands and repetitions must be >= 1")

    @classmethod
    def from_json(cls, path: str) -> "BenchSpec":
        with open(path) as f:
            raw = json.load(f)
        imp = raw.get("impairments")
        profile = ImpairmentProfile(**imp) if imp else None
        transports = raw.get("transports") or [raw.get("transport", "rpc-bin")]
        return cls(
            experiment=raw["experiment"],
            n_commands=int(raw.get("n_commands", 100)),
            repetitions=int(raw.get("repetitions", 20)),
            operation=raw.get("operation", "add"),
            backend=raw.get("backend", "direct"),
            transports=tuple(transports),
            mode=raw.get("mode", "p-conn"),
            security=raw.get("security", "insecure"),
            handshake=raw.get("handshake", "per-command"),
            impairments=profile,
            warmup=int(raw.get("warmup", 1)),
        )


@dataclass
class BenchReport:
    experiment: str
    transport: str  # transport kind, or backend name for local runs
    mode: str
    security: str
    operation: str
    n: int
    m: int
    samples: list[float]
    stats: SummaryStats
    wire: dict[str, int] = field(default_factory=dict)
    proxy: dict | None = None

    @property
    def ops_per_s(self) -> float:
        return self.n / self.stats.mean

    @property
    def median(self) -> float:
        ordered = sorted(self.samples)
        mid = len(ordered) // 2
        if len(ordered) % 2:
            return ordered[mid]
        return (ordered[mid - 1] + ordered[mid]) / 2

    def to_json_obj(self) -> dict:
        return {
            "experiment": self.experiment,
            "transport": self.transport,
            "mode": self.mode,
            "security": self.security,
            "operation": self.operation,
            "n": self.n,
            "m": self.m,
            "samples": self.samples,
            "stats": asdict(self.stats),
            "ops_per_s": self.ops_per_s,
            "wire": self.wire,
            "proxy": self.proxy,
        }


def bench_paths(n: int, device: str = "veth0") -> list[PathPolicy]:
    """n distinct steering rules for benchmark batches."""
    segs = SegmentList.of("fcff:2::1", "fcff:4::1")
    return [
        PathPolicy(
            destination=Ipv6Prefix.parse(f"fc00:b:{i:x}::/64"),
            segments=segs,
            device=device,
        )
        for i in range(1, n + 1)
    ]


# -------------------------------------------------------- local bench ----


def run_local_bench(spec: BenchSpec) -> list[BenchReport]:
    """Enforcement-in-isolation timing. Repetitions of the requested
    backend/operation combinations are interleaved round by round so host
    drift hits every combination equally."""
    if spec.experiment != "local-enforce":
        raise ValueError("spec is not a local-enforce experiment")
    backends = ("direct", "per-process") if spec.backend == "both" else (spec.backend,)
    operations = ("add", "delete") if spec.operation == "both" else (spec.operation,)
    paths = bench_paths(spec.n_commands)

    instances = {}
    for name in backends:
        if name == "direct":
            from .lpm import Fib

            instances[name] = DirectBackend(Fib())
        elif name == "per-process":
            from .lpm import Fib

            instances[name] = PerProcessBackend(Fib())
        else:
            raise ValueError(f"unknown backend {name!r}")

    combos = [(b, op) for b in backends for op in operations]
    samples: dict[tuple[str, str], list[float]] = {c: [] for c in combos}

    def one_round(record: bool) -> None:
        for backend_name, op in combos:
            backend = instances[backend_name]
            fib = backend.fib if backend_name == "direct" else backend._direct.fib
            fib.clear()
            if op == "delete":
                # install the rules untimed, then time their removal
                enforce_batch(backend, Operation.CREATE, paths)
                timing = enforce_batch(backend, Operation.REMOVE, paths)
            else:
                timing = enforce_batch(backend, Operation.CREATE, paths)
            bad = [s for s in timing.statuses if s is not ReplyStatus.OK]
            if bad:
                raise RuntimeError(f"{backend_name} {op}: {len(bad)} failed commands")
            if record:
                samples[(backend_name, op)].append(timing.total_s)

    for _ in range(spec.warmup):
        one_round(record=False)
    for _ in range(spec.repetitions):
        one_round(record=True)

    for inst in instances.values():
        inst.close()

    return [
        BenchReport(
            experiment=spec.experiment,
            transport=backend_name,
            mode="-",
            security="-",
            operation=op,
            n=spec.n_commands,
            m=spec.repetitions,
            samples=samples[(backend_name, op)],
            stats=summarize(samples[(backend_name, op)])
            if spec.repetitions >= 2
            else SummaryStats(samples[(backend_name, op)][0], 0.0, 0.0, 1),
        )
        for backend_name, op in combos
    ]


# ------------------------------------------------------- remote bench ----


def _agent_config_for(transport: str, security: str, bundle: CredentialBundle, noop: bool) -> AgentConfig:
    # the CLI transport runs its commands through the per-process (shell
    # style) path; the structured transports enforce in-process
    backend = "per-process" if transport == "ssh-cli" and not noop else "direct"
    return AgentConfig(
        node_id="bench-agent",
        transports={transport: TransportConfig("127.0.0.1:0", tls=(security == "secure"))},
        backend=backend,
        noop=noop,
        tls_cert=bundle.tls_cert,
        tls_key=bundle.tls_key,
        ssh_host_key=bundle.ssh_host_key,
        authorized_keys=bundle.authorized_keys,
    )


def _client_creds(bundle: CredentialBundle) -> ClientCreds:
    return ClientCreds(
        tls_ca=bundle.tls_ca,
        ssh_client_key=bundle.ssh_client_key,
        ssh_host_pub=bundle.ssh_host_pub,
    )


def run_remote_bench(spec: BenchSpec, bundle: CredentialBundle) -> list[BenchReport]:
    """Full-config or communication-only run over real sockets. One report
    per requested transport; the agent (and impairment proxy, when the
    spec carries impairments) is managed by the harness on loopback."""
    if spec.experiment not in ("full-config", "comm-only"):
        raise ValueError(f"not a remote experiment: {spec.experiment}")
    noop = spec.experiment == "comm-only"
    reports = []
    for transport in spec.transports:
        reports.append(_run_remote_one(spec, transport, bundle, noop))
    return reports


def _run_remote_one(
    spec: BenchSpec, transport: str, bundle: CredentialBundle, noop: bool
) -> BenchReport:
    kind = TransportKind(transport)
    security = SecurityMode(spec.security)
    if kind in (TransportKind.NETCONF, TransportKind.SSH_CLI):
        security = SecurityMode.SECURE
    mode = InteractionMode(spec.mode)
    handshake = HandshakeMode(spec.handshake)
    paths = bench_paths(spec.n_commands)
    requests = [PolicyRequest.create(p) for p in paths]

    agent = Agent(_agent_config_for(transport, security.value, bundle, noop)).start()
    proxy = None
    try:
        host, port = agent.endpoints[transport]
        if spec.impairments is not None and not spec.impairments.identity:
            proxy = NetemProxy(("127.0.0.1", 0), (host, port), spec.impairments)
            host, port = "127.0.0.1", proxy.port

        samples: list[float] = []
        wire: dict[str, int] = {}
        rounds = spec.warmup + spec.repetitions
        for rnd in range(rounds):
            record = rnd >= spec.warmup
            agent.reset()
            session = open_session(
                kind,
                host,
                port,
                mode=mode,
                security=security,
                creds=_client_creds(bundle),
                handshake=handshake,
            )
            try:
                if mode is InteractionMode.NP_BULK:
                    replies, elapsed = session.send_bulk(requests)
                    _check_ok(replies[:1])
                else:
                    t0 = time.perf_counter()
                    replies = [session.send(r)[0] for r in requests]
                    elapsed = time.perf_counter() - t0
                    _check_ok(replies)
            finally:
                wire = session.wire_counters()
                session.close()
            if record:
                samples.append(elapsed)
    finally:
        if proxy is not None:
            proxy.shutdown()
        agent.shutdown()

    return BenchReport(
        experiment=spec.experiment,
        transport=transport,
        mode=spec.mode,
        security=security.value,
        operation="add",
        n=spec.n_commands,
        m=spec.repetitions,
        samples=samples,
        stats=summarize(samples)
        if len(samples) >= 2
        else SummaryStats(samples[0], 0.0, 0.0, 1),
        wire=wire,
        proxy=proxy.counters_snapshot() if proxy is not None else None,
    )


def _check_ok(replies) -> None:
    bad = [r for r in replies if r.status is not ReplyStatus.OK]
    if bad:
        raise RuntimeError(f"{len(bad)} commands failed ({bad[0].status.value})")


def run_comm_only_bench(spec: BenchSpec, bundle: CredentialBundle) -> list[BenchReport]:
    if spec.experiment != "comm-only":
        raise ValueError("spec is not a comm-only experiment")
    return run_remote_bench(spec, bundle)


# -------------------------------------------------------------- report ----

CSV_COLUMNS = [
    "experiment",
    "transport",
    "mode",
    "security",
    "n",
    "m",
    "mean_s",
    "cv_pct",
    "ci95_pct",
    "ops_per_s",
    "bytes_tx",
    "bytes_rx",
]


def report_row(report: BenchReport) -> list[str]:
    return [
        report.experiment,
        report.transport,
        report.mode,
        report.security,
        str(report.n),
        str(report.m),
        f"{report.stats.mean:.6f}",
        f"{report.stats.cv_pct:.3f}",
        f"{report.stats.ci95_rel_pct:.3f}",
        f"{report.ops_per_s:.1f}",
        str(report.wire.get("bytes_tx", 0)),
        str(report.wire.get("bytes_rx", 0)),
    ]


def emit_report(reports: list[BenchReport], path: str, fmt: str = "csv") -> None:
    if fmt == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for report in reports:
                writer.writerow(report_row(report))
    elif fmt == "json":
        with open(path, "w") as f:
            json.dump([r.to_json_obj() for r in reports], f, indent=2)
            f.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
