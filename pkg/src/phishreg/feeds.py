"""Phishing feed ingestion.

Feed exports are reduced to ``listed_at,url`` CSV lines.  Defanged schemes
(``hxxp``/``hxxps``) are restored; bracketed dots are not and make the line
malformed.
"""
from __future__ import annotations

import ipaddress
import re
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit

from .core import (DomainName, PublicSuffixRuleSet, format_timestamp,
                   normalize_domain, parse_timestamp)


class FeedSource(str, Enum):
    APWG = "APWG"
    PHISHTANK = "PhishTank"
    OPENPHISH = "OpenPhish"
    OTHER = "other"

    @classmethod
    def parse(cls, text) -> "FeedSource":
        if isinstance(text, cls):
            return text
        for member in cls:
            if member.value.lower() == str(text).lower():
                return member
        return cls.OTHER


class ExclusionKind(str, Enum):
    URL_SHORTENER = "url_shortener"
    SUBDOMAIN_PROVIDER = "subdomain_provider"


class IpLiteralHost(ValueError):
    pass


class EmptyFeedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BlocklistEntry:
    url: str
    source: FeedSource
    listed_at: datetime

    @property
    def host(self) -> str:
        return urlsplit(self.url).hostname or ""


@dataclass
class FeedParseResult:
    entries: list[BlocklistEntry]
    malformed_count: int = 0
    malformed_lines: list[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.entries

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


_DEFANG = re.compile(r"^hxxp(s?)://", re.IGNORECASE)


def _refang(url: str) -> str:
    return _DEFANG.sub(lambda m: f"http{m.group(1).lower()}://", url.strip())


def parse_feed_line(line: str, source: FeedSource) -> BlocklistEntry | None:
    """Parse one ``listed_at,url`` line; returns None when malformed."""
    if "," not in line:
        return None
    stamp, url = line.split(",", 1)
    url = _refang(url)
    if "[.]" in url or "[dot]" in url.lower():
        return None
    try:
        listed_at = parse_timestamp(stamp)
        parts = urlsplit(url)
    except ValueError:
        return None
    if parts.scheme not in ("http", "https") or not parts.hostname:
        return None
    return BlocklistEntry(url=url, source=source, listed_at=listed_at)


def parse_feed_file(path, source) -> FeedParseResult:
    """Parse a feed export; malformed lines are counted and skipped.

    An :class:`EmptyFeedWarning` is issued when no line parses.
    """
    source = FeedSource.parse(source)
    result = FeedParseResult(entries=[])
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if lineno == 1 and line.lower().replace(" ", "") == "listed_at,url":
                continue
            entry = parse_feed_line(line, source)
            if entry is None:
                result.malformed_count += 1
                result.malformed_lines.append(lineno)
            else:
                result.entries.append(entry)
    if result.empty:
        warnings.warn(f"{path}: no valid feed records", EmptyFeedWarning, stacklevel=2)
    return result


def to_registered_domain(entry: BlocklistEntry | str,
                         rules: PublicSuffixRuleSet | None = None) -> DomainName:
    """Registered domain of an entry's URL host, as a :class:`DomainName`."""
    url = entry.url if isinstance(entry, BlocklistEntry) else _refang(entry)
    host = urlsplit(url).hostname
    if not host:
        raise ValueError(f"no host in {url!r}")
    try:
        ipaddress.ip_address(host.strip("[]"))
    except ValueError:
        pass
    else:
        raise IpLiteralHost(host)
    dn = normalize_domain(host, rules)
    return normalize_domain(dn.registered_part, rules)


# --------------------------------------------------------------------------
# Exclusions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExclusionList:
    kind: ExclusionKind
    domains: frozenset[str]

    def __contains__(self, domain) -> bool:
        key = domain.registered_part if isinstance(domain, DomainName) else str(domain)
        return key in self.domains

    @classmethod
    def from_lines(cls, kind, lines: Iterable[str], rules=None) -> "ExclusionList":
        names = set()
        for line in lines:
            line = line.split("#", 1)[0].strip()
            if line:
                names.add(normalize_domain(line, rules).registered_part)
        return cls(ExclusionKind(kind), frozenset(names))

    @classmethod
    def from_file(cls, kind, path, rules=None) -> "ExclusionList":
        return cls.from_lines(kind, Path(path).read_text(encoding="utf-8").splitlines(), rules)


def default_exclusions(rules=None) -> list[ExclusionList]:
    data = resources.files("phishreg") / "data"
    return [
        ExclusionList.from_lines(ExclusionKind.URL_SHORTENER,
                                 (data / "url_shorteners.txt").read_text().splitlines(), rules),
        ExclusionList.from_lines(ExclusionKind.SUBDOMAIN_PROVIDER,
                                 (data / "subdomain_providers.txt").read_text().splitlines(), rules),
    ]


@dataclass
class ExclusionPartition:
    kept: list[DomainName] = field(default_factory=list)
    excluded_shortener: list[DomainName] = field(default_factory=list)
    excluded_subdomain_provider: list[DomainName] = field(default_factory=list)

    def verdict(self, domain: DomainName) -> str:
        if domain in self.excluded_shortener:
            return "excluded_shortener"
        if domain in self.excluded_subdomain_provider:
            return "excluded_subdomain_provider"
        return "kept"


def exclusion_verdict(domain: DomainName, lists: Iterable[ExclusionList]) -> str:
    """One of ``kept``, ``excluded_shortener``, ``excluded_subdomain_provider``.

    Shortener lists are checked before subdomain-provider lists.
    """
    lists = list(lists)
    for kind, verdict in ((ExclusionKind.URL_SHORTENER, "excluded_shortener"),
                          (ExclusionKind.SUBDOMAIN_PROVIDER, "excluded_subdomain_provider")):
        if any(domain in lst for lst in lists if lst.kind is kind):
            return verdict
    return "kept"


def apply_exclusions(domains: Iterable[DomainName],
                     lists: Iterable[ExclusionList]) -> ExclusionPartition:
    lists = list(lists)
    out = ExclusionPartition()
    for d in domains:
        getattr(out, exclusion_verdict(d, lists)).append(d)
    return out


def dedupe_earliest(entries: Iterable[tuple]) -> dict:
    """Map each domain to the earliest timestamp it was listed at."""
    earliest: dict = {}
    for domain, ts in entries:
        cur = earliest.get(domain)
        if cur is None or ts < cur:
            earliest[domain] = ts
    return earliest


def ingest(entries: Iterable[BlocklistEntry], rules=None,
           lists: Iterable[ExclusionList] | None = None) -> dict:
    """Reduce feed entries to one record per registered domain.

    Returns a dict with ``records`` (earliest listing per domain, NDJSON
    shaped), ``excluded`` (same shape plus an ``exclusion`` field) and
    ``skipped`` (entries whose host is an IP literal or malformed).
    """
    lists = default_exclusions(rules) if lists is None else list(lists)
    first: dict[DomainName, BlocklistEntry] = {}
    skipped = []
    for e in entries:
        try:
            d = to_registered_domain(e, rules)
        except ValueError as exc:
            skipped.append({"url": e.url, "reason": type(exc).__name__})
            continue
        cur = first.get(d)
        if cur is None or (e.listed_at, e.source.value) < (cur.listed_at, cur.source.value):
            first[d] = e
    records, excluded = [], []
    for d in sorted(first):
        e = first[d]
        rec = {"domain": d.registered_part, "tld": d.tld,
               "listed_at": format_timestamp(e.listed_at), "source": e.source.value}
        verdict = exclusion_verdict(d, lists)
        if verdict == "kept":
            records.append(rec)
        else:
            excluded.append(dict(rec, exclusion=verdict))
    return {"records": records, "excluded": excluded, "skipped": skipped}
