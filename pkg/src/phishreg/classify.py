"""Maliciously-registered classification of blocklisted domains.

Rules are applied in a fixed order and the first hit wins:

1. exclusion lists (URL shorteners, subdomain providers)
2. no creation date → ``NoRegistrationData``
3. created more than `window_days` before listing (or more than a day
   after it) → ``RegistrationTooOld``
4. no mitigated probe within `monitor_days` → ``NotDnsMitigated``
5. registrar outside the covered set (only if a covered set is given)
   → ``RegistrarNotCovered``
6. otherwise ``MaliciouslyRegistered``

Evidence for every rule is recorded regardless of which one fires.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable

from .artifacts import write_ndjson
from .core import DomainName, RegistrarAliases, format_timestamp, to_utc
from .dns_probe import ProbeResult
from .regdata import RegistrationRecord

CLOCK_SKEW = timedelta(hours=24)


class Label(str, Enum):
    MALICIOUSLY_REGISTERED = "MaliciouslyRegistered"
    EXCLUDED_SHORTENER = "ExcludedShortener"
    EXCLUDED_SUBDOMAIN_PROVIDER = "ExcludedSubdomainProvider"
    NO_REGISTRATION_DATA = "NoRegistrationData"
    REGISTRATION_TOO_OLD = "RegistrationTooOld"
    NOT_DNS_MITIGATED = "NotDnsMitigated"
    REGISTRAR_NOT_COVERED = "RegistrarNotCovered"


_EXCLUSION_LABELS = {
    "excluded_shortener": Label.EXCLUDED_SHORTENER,
    "excluded_subdomain_provider": Label.EXCLUDED_SUBDOMAIN_PROVIDER,
}


class InconsistentInput(ValueError):
    pass


@dataclass(frozen=True)
class ClassifiedDomain:
    domain: DomainName
    listed_at: datetime
    label: Label
    evidence: tuple = ()

    @property
    def malicious(self) -> bool:
        return self.label is Label.MALICIOUSLY_REGISTERED

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.registered_part,
            "tld": self.domain.tld,
            "listed_at": format_timestamp(self.listed_at),
            "label": self.label.value,
            "evidence": [[k, v] for k, v in self.evidence],
        }


def _covered(iana_id, covered, aliases: RegistrarAliases | None) -> bool:
    if iana_id is None:
        return False
    ids = {getattr(c, "iana_id", c) for c in covered}
    if iana_id in ids:
        return True
    if aliases is not None:
        fam = aliases.family(iana_id)
        return fam is not None and any(aliases.family(i) == fam for i in ids)
    return False


def classify(domain: DomainName, listed_at: datetime, exclusion_verdict: str,
             reg: RegistrationRecord | None, probes: Iterable[ProbeResult],
             window_days: int = 90, monitor_days: int = 30,
             covered_registrars=None,
             aliases: RegistrarAliases | None = None) -> ClassifiedDomain:
    listed_at = to_utc(listed_at)
    probes = list(probes)
    for p in probes:
        if p.domain.registered_part != domain.registered_part:
            raise InconsistentInput(f"probe for {p.domain} passed with {domain}")
    if reg is not None and reg.domain.registered_part != domain.registered_part:
        raise InconsistentInput(f"registration record for {reg.domain} passed with {domain}")

    evidence: list[tuple[str, object]] = [("exclusion", exclusion_verdict)]

    created = reg.created_at if reg is not None else None
    evidence.append(("created_at", format_timestamp(created) if created else None))
    too_old = None
    if created is not None:
        age_days = (listed_at.date() - to_utc(created).date()).days
        too_old = age_days > window_days or to_utc(created) > listed_at + CLOCK_SKEW
        evidence += [("age_days", age_days), ("window_days", window_days)]

    horizon = timedelta(days=monitor_days)
    hits = sorted(p.offset for p in probes if p.offset <= horizon and p.mitigated)
    first = hits[0] if hits else None
    evidence.append(("mitigation_offset_s",
                     int(first.total_seconds()) if first is not None else None))

    iana = reg.registrar.iana_id if reg is not None else None
    evidence.append(("registrar_iana", iana))
    covered = None
    if covered_registrars is not None:
        covered = _covered(iana, covered_registrars, aliases)
        evidence.append(("registrar_covered", covered))

    if exclusion_verdict in _EXCLUSION_LABELS:
        label = _EXCLUSION_LABELS[exclusion_verdict]
    elif created is None:
        label = Label.NO_REGISTRATION_DATA
    elif too_old:
        label = Label.REGISTRATION_TOO_OLD
    elif first is None:
        label = Label.NOT_DNS_MITIGATED
    elif covered is False:
        label = Label.REGISTRAR_NOT_COVERED
    else:
        label = Label.MALICIOUSLY_REGISTERED
    return ClassifiedDomain(domain, listed_at, label, tuple(evidence))


@dataclass
class CorpusItem:
    domain: DomainName
    listed_at: datetime
    exclusion: str = "kept"
    reg: RegistrationRecord | None = None
    probes: list = field(default_factory=list)


@dataclass
class CorpusSummary:
    counts: dict[str, int]
    records: list[ClassifiedDomain]

    def by_label(self, label: Label) -> list[ClassifiedDomain]:
        return [r for r in self.records if r.label is label]

    def write(self, out_dir, meta: dict | None = None) -> dict[str, Path]:
        """One NDJSON file per label, plus ``classified.ndjson`` with all records."""
        out_dir = Path(out_dir)
        paths = {"all": out_dir / "classified.ndjson"}
        write_ndjson(paths["all"], (r.to_dict() for r in self.records), meta)
        for label in Label:
            p = out_dir / f"{label.value}.ndjson"
            write_ndjson(p, (r.to_dict() for r in self.by_label(label)), meta)
            paths[label.value] = p
        return paths


def classify_corpus(items: Iterable[CorpusItem], **kwargs) -> CorpusSummary:
    """Classify every item; records are sorted by domain for determinism."""
    records = [classify(it.domain, it.listed_at, it.exclusion, it.reg, it.probes, **kwargs)
               for it in items]
    records.sort(key=lambda r: (r.domain.registered_part, r.listed_at))
    counts = Counter(r.label.value for r in records)
    return CorpusSummary({lab.value: counts.get(lab.value, 0) for lab in Label}, records)
