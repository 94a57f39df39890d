"""DNS ``A`` probes and the DNS-level mitigation test.

A domain counts as mitigated when its ``A`` lookup returns NXDOMAIN or its
registration data carries a clientHold/serverHold status.  SERVFAIL and
timeouts are inconclusive and never count as mitigation.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from .artifacts import dumps, read_ndjson
from .core import (DomainName, EppStatus, format_timestamp, normalize_domain,
                   parse_epp_status, parse_timestamp, to_utc)


class DnsOutcome(str, Enum):
    ANSWERED = "answered"
    NXDOMAIN = "nxdomain"
    SERVFAIL = "servfail"
    TIMEOUT = "timeout"

    @property
    def conclusive(self) -> bool:
        return self in (DnsOutcome.ANSWERED, DnsOutcome.NXDOMAIN)


class ResolverUnreachable(RuntimeError):
    pass


def is_dns_mitigated(dns_outcome, statuses: Iterable[EppStatus] = ()) -> bool:
    """True iff the lookup was NXDOMAIN or a hold status is present."""
    if DnsOutcome(dns_outcome) is DnsOutcome.NXDOMAIN:
        return True
    return any(s.is_hold for s in statuses)


@dataclass(frozen=True)
class ProbeResult:
    domain: DomainName
    offset: timedelta
    dns_outcome: DnsOutcome
    holds: frozenset = frozenset()
    notified: bool = False
    probed_at: datetime | None = None

    def __post_init__(self):
        if self.offset < timedelta(0):
            raise ValueError("probe offset must be non-negative")
        if any(not s.is_hold for s in self.holds):
            raise ValueError("holds may only contain clientHold/serverHold")

    @property
    def mitigated(self) -> bool:
        return is_dns_mitigated(self.dns_outcome, self.holds)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.registered_part,
            "offset_s": int(self.offset.total_seconds()),
            "dns": self.dns_outcome.value,
            "holds": sorted(str(h) for h in self.holds),
            "notified": self.notified,
            "probed_at": format_timestamp(self.probed_at) if self.probed_at else None,
        }

    @classmethod
    def from_dict(cls, d: dict, rules=None) -> "ProbeResult":
        return cls(
            domain=normalize_domain(d["domain"], rules),
            offset=timedelta(seconds=float(d["offset_s"])),
            dns_outcome=DnsOutcome(d["dns"]),
            holds=frozenset(parse_epp_status(h) for h in d.get("holds", [])),
            notified=bool(d.get("notified", False)),
            probed_at=parse_timestamp(d["probed_at"]) if d.get("probed_at") else None,
        )


def make_probe(domain: DomainName, offset: timedelta, dns_outcome, statuses=(),
               notified: bool = False, probed_at: datetime | None = None) -> ProbeResult:
    """Build a ProbeResult keeping only hold statuses from `statuses`."""
    return ProbeResult(domain, offset, DnsOutcome(dns_outcome),
                       frozenset(s for s in statuses if s.is_hold), notified, probed_at)


# --------------------------------------------------------------------------
# Resolution
# --------------------------------------------------------------------------

class DnsFixtures:
    """Recorded ``A`` outcomes: ``{"domain", "at", "rcode"}`` NDJSON records."""

    def __init__(self, records: Iterable[dict] = ()):
        self._by_domain: dict[str, list[tuple[datetime, DnsOutcome]]] = {}
        for r in records:
            self.add(r["domain"], parse_timestamp(r["at"]), DnsOutcome(r["rcode"]))

    @classmethod
    def from_file(cls, path) -> "DnsFixtures":
        return cls(read_ndjson(path)[1])

    def add(self, domain: str, at: datetime, outcome: DnsOutcome) -> None:
        rows = self._by_domain.setdefault(domain.lower(), [])
        rows.append((to_utc(at), DnsOutcome(outcome)))
        rows.sort(key=lambda t: t[0])

    def lookup(self, domain: str, at: datetime) -> DnsOutcome:
        at = to_utc(at)
        rows = [o for t, o in self._by_domain.get(domain.lower(), []) if t <= at]
        if not rows:
            raise LookupError(f"no recorded answer for {domain} at or before {at}")
        return rows[-1]


def _dnspython_query(name: str, nameserver: str, timeout: float) -> DnsOutcome:
    """One ``A`` query; `nameserver` may carry a port as ``host#port``."""
    import dns.exception
    import dns.resolver

    host, _, port = nameserver.partition("#")
    res = dns.resolver.Resolver(configure=False)
    res.nameservers = [host]
    if port:
        res.port = int(port)
    res.lifetime = timeout
    try:
        res.resolve(name, "A")
    except dns.resolver.NXDOMAIN:
        return DnsOutcome.NXDOMAIN
    except dns.resolver.NoAnswer:
        return DnsOutcome.ANSWERED
    except dns.resolver.NoNameservers:
        return DnsOutcome.SERVFAIL
    except dns.exception.Timeout:
        return DnsOutcome.TIMEOUT
    return DnsOutcome.ANSWERED


def combine_outcomes(outcomes: list[DnsOutcome]) -> DnsOutcome:
    """Merge per-resolver outcomes, preferring conclusive answers.

    When resolvers disagree conclusively the name is treated as answered,
    since mitigation needs a positive signal.
    """
    conclusive = [o for o in outcomes if o.conclusive]
    if conclusive:
        return DnsOutcome.ANSWERED if DnsOutcome.ANSWERED in conclusive else DnsOutcome.NXDOMAIN
    if DnsOutcome.SERVFAIL in outcomes:
        return DnsOutcome.SERVFAIL
    return DnsOutcome.TIMEOUT


def probe_a(domain: DomainName | str, mode: str = "fixture", at: datetime | None = None,
            fixtures: DnsFixtures | None = None,
            resolvers: tuple[str, ...] = ("1.1.1.1", "8.8.8.8"),
            timeout: float = 5.0,
            query: Callable[[str, str, float], DnsOutcome] = _dnspython_query) -> DnsOutcome:
    """Resolve the ``A`` record of `domain` and classify the response code."""
    name = domain.ascii_name if isinstance(domain, DomainName) else str(domain)
    if mode == "fixture":
        if fixtures is None or at is None:
            raise ValueError("fixture mode needs fixtures and a probe instant")
        return fixtures.lookup(name, at)
    if mode != "live":
        raise ValueError(f"unknown mode {mode!r}")
    outcomes, errors = [], []
    for ns in resolvers:
        try:
            outcomes.append(query(name, ns, timeout))
        except OSError as exc:
            errors.append(f"{ns}: {exc}")
    if not outcomes:
        raise ResolverUnreachable("; ".join(errors))
    return combine_outcomes(outcomes)


# --------------------------------------------------------------------------
# Probe log
# --------------------------------------------------------------------------

@dataclass
class ProbeLog:
    """Append-only NDJSON probe log with a single writer."""

    path: Path
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.path = Path(self.path)

    def append(self, result: ProbeResult) -> None:
        line = dumps(result.to_dict()) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)

    def read(self, rules=None) -> list[ProbeResult]:
        if not self.path.exists():
            return []
        return [ProbeResult.from_dict(r, rules) for r in read_ndjson(self.path)[1]]


def probe_many(tasks: Iterable, probe_fn: Callable[..., ProbeResult], log: ProbeLog | None = None,
               max_workers: int = 16) -> list[ProbeResult]:
    """Run ``probe_fn(*task)`` for every task on a bounded worker pool."""
    tasks = list(tasks)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda t: probe_fn(*t), tasks))
    if log is not None:
        for r in results:
            log.append(r)
    return results


def group_probes(probes: Iterable[ProbeResult]) -> dict[str, list[ProbeResult]]:
    """Group probes per registered domain, each list sorted by offset."""
    out: dict[str, list[ProbeResult]] = {}
    for p in probes:
        out.setdefault(p.domain.registered_part, []).append(p)
    for v in out.values():
        v.sort(key=lambda p: p.offset)
    return out


def mitigation_offset(probes: Iterable[ProbeResult]) -> timedelta | None:
    """Offset of the earliest mitigated probe (sticky: later probes never move it)."""
    first = None
    for p in probes:
        if p.mitigated and (first is None or p.offset < first):
            first = p.offset
    return first
