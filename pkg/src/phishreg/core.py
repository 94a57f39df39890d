"""Shared vocabulary: domain names, registrar keys, EPP statuses, timestamps.

Domain names are reduced to their registrable part with the public suffix
list bundled in ``phishreg/data``.  The snapshot is pinned so that the
registrar/TLD pairs derived from a corpus never drift between runs.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

import idna

UNKNOWN = None

__all__ = [
    "DomainName",
    "EppStatus",
    "EppCode",
    "MalformedName",
    "NoPublicSuffix",
    "PublicSuffixRuleSet",
    "RegistrarAliases",
    "RegistrarKey",
    "HOLD_CODES",
    "default_rules",
    "load_registrar_aliases",
    "normalize_domain",
    "parse_epp_status",
    "to_utc",
    "parse_timestamp",
    "format_timestamp",
]


class MalformedName(ValueError):
    """Raised for empty labels, illegal characters or overlong names."""


class NoPublicSuffix(ValueError):
    """Raised when a name has no label left over after its public suffix."""


# --------------------------------------------------------------------------
# Timestamps
# --------------------------------------------------------------------------

def to_utc(dt: datetime) -> datetime:
    """Return `dt` as an aware UTC datetime truncated to whole seconds.

    Naive datetimes are taken to already be in UTC.
    """
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def parse_timestamp(text: str) -> datetime:
    from dateutil import parser as dateparser

    return to_utc(dateparser.isoparse(text.strip()))


def format_timestamp(dt: datetime) -> str:
    return to_utc(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# Public suffix list
# --------------------------------------------------------------------------

class PublicSuffixRuleSet:
    """Rules from a public suffix list file.

    Parameters
    ----------
    rules : iterable of str
        One rule per entry, using the ``*`` wildcard and ``!`` exception
        syntax of the public suffix list.
    version : str
        Free-form identifier of the snapshot.
    """

    def __init__(self, rules: Iterable[str], version: str = "unversioned"):
        self.version = version
        self._exact: set[str] = set()
        self._wild: set[str] = set()
        self._exceptions: set[str] = set()
        for rule in _encode_rules(r.strip().lower() for r in rules):
            if not rule:
                continue
            if rule.startswith("!"):
                self._exceptions.add(rule[1:])
            elif rule.startswith("*."):
                self._wild.add(rule[2:])
            else:
                self._exact.add(rule)

    @classmethod
    def from_file(cls, path, icann_only: bool = True) -> "PublicSuffixRuleSet":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_text(text, icann_only=icann_only)

    @classmethod
    def from_text(cls, text: str, icann_only: bool = True) -> "PublicSuffixRuleSet":
        rules = []
        version = "unversioned"
        in_private = False
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("// VERSION:"):
                version = line.split(":", 1)[1].strip()
            if "===BEGIN PRIVATE DOMAINS===" in line:
                in_private = True
            if "===END PRIVATE DOMAINS===" in line:
                in_private = False
            if not line or line.startswith("//"):
                continue
            if in_private and icann_only:
                continue
            # rules end at the first whitespace
            rules.append(line.split()[0])
        return cls(rules, version=version)

    def __len__(self) -> int:
        return len(self._exact) + len(self._wild) + len(self._exceptions)

    def suffix_length(self, labels: list[str]) -> int:
        """Number of trailing labels forming the public suffix of `labels`.

        Implements the longest-match algorithm with exception rules taking
        priority and an implicit ``*`` rule for unlisted TLDs.
        """
        n = len(labels)
        best = 1  # implicit "*" rule
        for i in range(n):
            candidate = ".".join(labels[i:])
            size = n - i
            if candidate in self._exceptions:
                return size - 1
            if candidate in self._exact and size > best:
                best = size
            if i > 0 and candidate in self._wild and size + 1 > best:
                best = size + 1
        return best


def _encode_rules(rules):
    out = []
    for rule in rules:
        if rule.isascii():
            out.append(rule)
            continue
        prefix = ""
        if rule.startswith("!"):
            prefix, rule = "!", rule[1:]
        elif rule.startswith("*."):
            prefix, rule = "*.", rule[2:]
        try:
            out.append(prefix + idna.encode(rule, uts46=True).decode())
        except idna.IDNAError:
            continue
    return out


@lru_cache(maxsize=None)
def default_rules() -> PublicSuffixRuleSet:
    """The pinned public suffix snapshot (ICANN section only)."""
    ref = resources.files("phishreg") / "data" / "public_suffix_list.dat"
    return PublicSuffixRuleSet.from_text(ref.read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# Domain names
# --------------------------------------------------------------------------

_LDH = re.compile(r"^[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?$")


@dataclass(frozen=True, order=True)
class DomainName:
    ascii_name: str
    registered_part: str
    tld: str

    def __str__(self) -> str:
        return self.ascii_name


def _to_ascii(name: str) -> str:
    if name.isascii():
        return name
    try:
        return idna.encode(name, uts46=True).decode("ascii")
    except idna.IDNAError as exc:
        raise MalformedName(f"{name!r}: {exc}") from None


def normalize_domain(raw: str, suffix_rules: PublicSuffixRuleSet | None = None) -> DomainName:
    """Normalize a hostname and split off its registrable part.

    >>> normalize_domain("WWW.Example.COM.").registered_part
    'example.com'
    """
    if suffix_rules is None:
        suffix_rules = default_rules()
    name = (raw or "").strip()
    if not name:
        raise MalformedName("empty name")
    if name.endswith("."):
        name = name[:-1]
    name = _to_ascii(name).lower()
    if len(name) > 253:
        raise MalformedName(f"name exceeds 253 octets: {len(name)}")
    labels = name.split(".")
    for label in labels:
        if not label:
            raise MalformedName(f"{raw!r}: empty label")
        if len(label) > 63:
            raise MalformedName(f"{raw!r}: label exceeds 63 octets")
        if not _LDH.match(label):
            raise MalformedName(f"{raw!r}: illegal characters in {label!r}")
    k = suffix_rules.suffix_length(labels)
    if k >= len(labels):
        raise NoPublicSuffix(f"{name!r} is itself a public suffix")
    return DomainName(
        ascii_name=name,
        registered_part=".".join(labels[-(k + 1):]),
        tld=".".join(labels[-k:]),
    )


# --------------------------------------------------------------------------
# EPP statuses
# --------------------------------------------------------------------------

class EppCode(str, Enum):
    CLIENT_HOLD = "clientHold"
    SERVER_HOLD = "serverHold"
    OK = "ok"
    OTHER = "other"


@dataclass(frozen=True)
class EppStatus:
    code: EppCode
    text: str = ""

    def __str__(self) -> str:
        return self.text if self.code is EppCode.OTHER else self.code.value

    @property
    def is_hold(self) -> bool:
        return self.code in (EppCode.CLIENT_HOLD, EppCode.SERVER_HOLD)


CLIENT_HOLD = EppStatus(EppCode.CLIENT_HOLD)
SERVER_HOLD = EppStatus(EppCode.SERVER_HOLD)
OK = EppStatus(EppCode.OK)
HOLD_CODES = frozenset({CLIENT_HOLD, SERVER_HOLD})

_KNOWN = {
    "clienthold": CLIENT_HOLD,
    "serverhold": SERVER_HOLD,
    "ok": OK,
    "active": OK,
}


def parse_epp_status(raw: str) -> EppStatus:
    """Map a WHOIS/RDAP status token to an :class:`EppStatus`.

    The first whitespace-separated token is used, so trailing
    ``https://icann.org/epp#...`` links are ignored.  RDAP's spaced forms
    (``"client hold"``) are accepted as well.  Never raises.
    """
    text = (raw or "").strip()
    if not text:
        return EppStatus(EppCode.OTHER, "")
    compact = re.sub(r"\s+", "", text).lower()
    for key, status in _KNOWN.items():
        if compact == key:
            return status
    token = text.split()[0]
    status = _KNOWN.get(token.lower())
    if status is not None:
        return status
    return EppStatus(EppCode.OTHER, token)


# --------------------------------------------------------------------------
# Registrars
# --------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class RegistrarKey:
    """A registrar identified by IANA ID; ``iana_id`` is None when unknown."""

    iana_id: int | None
    display_name: str = ""

    @property
    def known(self) -> bool:
        return self.iana_id is not None


UNKNOWN_REGISTRAR = RegistrarKey(None, "UNKNOWN")


class RegistrarAliases:
    """Maps IANA IDs to registrar families (several IDs can share a family)."""

    def __init__(self, mapping: dict[int, str]):
        self._family = dict(mapping)
        # canonical ID of a family is its smallest listed ID
        self._canonical: dict[str, int] = {}
        for iana, fam in sorted(self._family.items()):
            self._canonical.setdefault(fam, iana)

    def __contains__(self, iana_id) -> bool:
        return iana_id in self._family

    def family(self, iana_id: int | None) -> str | None:
        return self._family.get(iana_id)

    def ids(self, family: str) -> list[int]:
        return sorted(i for i, f in self._family.items() if f == family)

    def key(self, iana_id: int | None) -> RegistrarKey:
        """Resolve an IANA ID to its family's canonical RegistrarKey."""
        if iana_id is None:
            return UNKNOWN_REGISTRAR
        fam = self._family.get(iana_id)
        if fam is None:
            return RegistrarKey(iana_id, "")
        return RegistrarKey(self._canonical[fam], fam)


def load_registrar_aliases(path=None) -> RegistrarAliases:
    """Read an ``iana_id,family_name`` CSV (defaults to the bundled table)."""
    if path is None:
        ref = resources.files("phishreg") / "data" / "registrar_aliases.csv"
        text = ref.read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    mapping = {}
    for row in csv.DictReader(line for line in text.splitlines()
                              if line.strip() and not line.startswith("#")):
        mapping[int(row["iana_id"])] = row["family_name"].strip()
    return RegistrarAliases(mapping)
