"""Probe schedule, per-domain uptimes and registrar/TLD median uptimes."""
from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import Iterable, Mapping

from .artifacts import csv_text
from .core import DomainName, to_utc
from .dns_probe import ProbeResult

_m = lambda n: timedelta(minutes=n)
_h = lambda n: timedelta(hours=n)

LEADING_OFFSETS = (
    timedelta(0), _m(5), _m(15), _m(30), _h(1), _h(2), _h(3), _h(4), _h(5), _h(6),
    _h(12), _h(24), _h(36), _h(48),
)
TAIL_STEP = _h(12)


class NoProbes(ValueError):
    pass


class EmptyGroup(ValueError):
    pass


class NotifiedFilter(str, Enum):
    NOTIFIED = "notified"
    NOT_NOTIFIED = "not_notified"
    ALL = "all"


@dataclass(frozen=True)
class ProbeSchedule:
    offsets: tuple

    def __post_init__(self):
        if not self.offsets or self.offsets[0] != timedelta(0):
            raise ValueError("schedule must start at offset 0")
        if any(b <= a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError("schedule offsets must be strictly increasing")

    def __len__(self):
        return len(self.offsets)

    def __iter__(self):
        return iter(self.offsets)

    def instants(self, listed_at: datetime) -> list[datetime]:
        listed_at = to_utc(listed_at)
        return [listed_at + o for o in self.offsets]


def build_schedule(horizon_days: int = 30) -> ProbeSchedule:
    """Dense probing for the first two days, then every 12 hours to the horizon."""
    if horizon_days < 3:
        raise ValueError("horizon must be at least 3 days")
    horizon = timedelta(days=horizon_days)
    offsets = list(LEADING_OFFSETS)
    t = LEADING_OFFSETS[-1] + TAIL_STEP
    while t <= horizon:
        offsets.append(t)
        t += TAIL_STEP
    return ProbeSchedule(tuple(offsets))


@dataclass(frozen=True)
class UptimeRecord:
    domain: DomainName
    uptime: timedelta
    censored: bool
    notified: bool

    @property
    def seconds(self) -> float:
        return self.uptime.total_seconds()


def compute_uptime(listed_at: datetime, probes: Iterable[ProbeResult],
                   horizon: timedelta = timedelta(days=30)) -> UptimeRecord:
    """Uptime from blocklisting to the first probe showing DNS-level mitigation.

    Nominal schedule offsets are used, except when the very first probe is
    already mitigated: then the actual delay between listing and that probe
    is the uptime.  Without mitigation inside the horizon the record is
    censored at the horizon.
    """
    probes = sorted(probes, key=lambda p: p.offset)
    if not probes:
        raise NoProbes("no probes supplied")
    domain = probes[0].domain
    notified = any(p.notified for p in probes)
    in_window = [p for p in probes if p.offset <= horizon]
    for i, p in enumerate(in_window):
        if not p.mitigated:
            continue
        if i == 0 and p.offset == timedelta(0):
            if p.probed_at is not None:
                delay = to_utc(p.probed_at) - to_utc(listed_at)
                return UptimeRecord(domain, max(delay, timedelta(0)), False, notified)
        return UptimeRecord(domain, p.offset, False, notified)
    return UptimeRecord(domain, horizon, True, notified)


def _filter(records, notified_filter):
    f = NotifiedFilter(notified_filter)
    if f is NotifiedFilter.ALL:
        return list(records)
    want = f is NotifiedFilter.NOTIFIED
    return [r for r in records if r.notified == want]


def aggregate_median(records: Iterable[UptimeRecord], notified_filter="all",
                     censoring: str = "capped") -> timedelta:
    """Lower median uptime of a group.

    Censored records enter at their horizon value (``capped``) or are left
    out (``dropped``).
    """
    group = _filter(records, notified_filter)
    if censoring == "dropped":
        group = [r for r in group if not r.censored]
    elif censoring != "capped":
        raise ValueError(f"unknown censoring mode {censoring!r}")
    if not group:
        raise EmptyGroup(f"no records for filter {notified_filter!r}")
    values = sorted(r.uptime for r in group)
    return values[(len(values) - 1) // 2]


UPTIME_HEADER = ["registrar_iana", "tld", "notified_filter", "median_uptime_s", "n",
                 "censored_n"]


def uptime_table(records: Iterable[UptimeRecord], keys: Mapping[str, tuple],
                 censoring: str = "capped") -> list[tuple]:
    """Median uptimes per (registrar IANA ID, TLD) and notification filter.

    `keys` maps a registered domain to its ``(registrar_iana, tld)`` pair.
    Groups left empty by a filter are omitted.
    """
    groups: dict[tuple, list[UptimeRecord]] = {}
    for r in records:
        groups.setdefault(tuple(keys[r.domain.registered_part]), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0] if k[0] is not None else -1, k[1])):
        for f in NotifiedFilter:
            sub = _filter(groups[key], f)
            if censoring == "dropped":
                kept = [r for r in sub if not r.censored]
            else:
                kept = sub
            if not kept:
                continue
            med = aggregate_median(sub, f, censoring)
            rows.append((key[0], key[1], f.value, int(med.total_seconds()), len(kept),
                         sum(r.censored for r in kept)))
    return rows


def uptime_table_csv(rows) -> str:
    return csv_text(UPTIME_HEADER, rows)


def read_uptime_table(text: str) -> dict[tuple, dict[str, float]]:
    """Parse an uptime CSV into ``{(iana, tld): {filter: median_seconds}}``."""
    import csv
    import io

    out: dict[tuple, dict[str, float]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        iana = int(row["registrar_iana"]) if row["registrar_iana"] not in ("", "None") else None
        out.setdefault((iana, row["tld"]), {})[row["notified_filter"]] = float(
            row["median_uptime_s"])
    return out
