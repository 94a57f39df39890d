"""Registration data: fetching, storing and parsing WHOIS/RDAP documents.

Live responses are written verbatim to a :class:`DocumentStore` before they
are returned, so any run can be replayed offline in ``fixture`` mode.
"""
from __future__ import annotations

import json
import re
import socket
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .core import (DomainName, EppStatus, RegistrarKey, UNKNOWN_REGISTRAR,
                   normalize_domain, parse_epp_status, to_utc)


class RegdataError(Exception):
    pass


class NetworkTimeout(RegdataError):
    pass


class RateLimited(RegdataError):
    pass


class NotFoundInStore(RegdataError, LookupError):
    pass


class MalformedDocument(RegdataError, ValueError):
    pass


PROTOCOLS = ("whois", "rdap")
_SUFFIX = {"whois": "whois.txt", "rdap": "rdap.json"}
_STAMP = "%Y%m%dT%H%M%SZ"


@dataclass(frozen=True)
class RawRegistrationDocument:
    domain: DomainName
    body: bytes
    protocol: str
    fetched_at: datetime

    @property
    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")


@dataclass(frozen=True)
class RegistrationRecord:
    domain: DomainName
    created_at: datetime | None
    registrar: RegistrarKey
    statuses: frozenset
    queried_at: datetime
    protocol: str
    flagged: bool = False
    notes: tuple = ()

    @property
    def holds(self) -> frozenset:
        return frozenset(s for s in self.statuses if s.is_hold)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.registered_part,
            "tld": self.domain.tld,
            "created_at": _fmt(self.created_at),
            "registrar_iana": self.registrar.iana_id,
            "registrar_name": self.registrar.display_name,
            "statuses": sorted(str(s) for s in self.statuses),
            "queried_at": _fmt(self.queried_at),
            "protocol": self.protocol,
            "flagged": self.flagged,
        }

    @classmethod
    def from_dict(cls, d: dict, rules=None) -> "RegistrationRecord":
        from .core import parse_timestamp
        created = d.get("created_at")
        return cls(
            domain=normalize_domain(d["domain"], rules),
            created_at=parse_timestamp(created) if created else None,
            registrar=RegistrarKey(d.get("registrar_iana"), d.get("registrar_name") or ""),
            statuses=frozenset(parse_epp_status(s) for s in d.get("statuses", [])),
            queried_at=parse_timestamp(d["queried_at"]),
            protocol=d.get("protocol", "fixture"),
            flagged=bool(d.get("flagged", False)),
        )


def _fmt(dt):
    return None if dt is None else to_utc(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# Document store
# --------------------------------------------------------------------------

class DocumentStore:
    """Directory of raw documents: ``<root>/<registered_part>/<stamp>.<suffix>``.

    One writer, many readers: writes go to a temporary file that is renamed
    into place, so readers never observe partial documents.
    """

    def __init__(self, root, rules=None):
        self.root = Path(root)
        self.rules = rules
        self._lock = threading.Lock()

    def path_for(self, domain: DomainName, fetched_at: datetime, protocol: str) -> Path:
        stamp = to_utc(fetched_at).strftime(_STAMP)
        return self.root / domain.registered_part / f"{stamp}.{_SUFFIX[protocol]}"

    def save(self, doc: RawRegistrationDocument) -> Path:
        path = self.path_for(doc.domain, doc.fetched_at, doc.protocol)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".part")
            tmp.write_bytes(doc.body)
            tmp.replace(path)
        return path

    def list(self, domain: DomainName) -> list[tuple[datetime, str, Path]]:
        folder = self.root / domain.registered_part
        if not folder.is_dir():
            return []
        out = []
        for p in folder.iterdir():
            stamp, _, suffix = p.name.partition(".")
            proto = next((k for k, v in _SUFFIX.items() if v == suffix), None)
            if proto is None:
                continue
            at = datetime.strptime(stamp, _STAMP).replace(tzinfo=timezone.utc)
            out.append((at, proto, p))
        # rdap sorts before whois at equal instants
        out.sort(key=lambda t: (t[0], t[1] != "rdap"))
        return out

    def load(self, domain: DomainName, at: datetime | None = None,
             protocol: str | None = None) -> RawRegistrationDocument:
        """Document nearest to `at` (latest when `at` is None)."""
        docs = [d for d in self.list(domain) if protocol in (None, d[1])]
        if not docs:
            raise NotFoundInStore(domain.registered_part)
        if at is None:
            latest = max(d[0] for d in docs)
            chosen = next(d for d in docs if d[0] == latest)
        else:
            at = to_utc(at)
            chosen = min(docs, key=lambda d: (abs((d[0] - at).total_seconds()),
                                              d[0], d[1] != "rdap"))
        fetched_at, proto, path = chosen
        return RawRegistrationDocument(domain, path.read_bytes(), proto, fetched_at)


# --------------------------------------------------------------------------
# Live fetching
# --------------------------------------------------------------------------

class TokenBucket:
    """Blocking token bucket; `rate` tokens per second up to `capacity`."""

    def __init__(self, rate: float, capacity: float | None = None, clock=time.monotonic,
                 sleep=time.sleep):
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(rate, 1.0))
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self, tokens: float = 1.0) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= tokens:
                    self._tokens -= tokens
                    return
                wait = (tokens - self._tokens) / self.rate
            self._sleep(wait)


def _tcp_whois(server: str, query: str, timeout: float) -> bytes:
    with socket.create_connection((server, 43), timeout=timeout) as sock:
        sock.sendall(query.encode("idna") + b"\r\n")
        chunks = []
        while True:
            data = sock.recv(4096)
            if not data:
                break
            chunks.append(data)
    return b"".join(chunks)


def _http_get(url: str, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, headers={"Accept": "application/rdap+json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read() or b""


@dataclass
class RegdataClient:
    """RDAP-first registration data client with a WHOIS referral fallback.

    `http_get` and `whois_query` are injectable transports; defaults use
    urllib and raw TCP port 43.
    """

    store: DocumentStore
    rdap_bootstrap: dict[str, str] = field(default_factory=dict)
    whois_root: str = "whois.iana.org"
    timeout: float = 10.0
    retries: int = 2
    max_hops: int = 3
    max_concurrency: int = 8
    rate_per_endpoint: float = 2.0
    http_get: Callable[[str, float], tuple[int, bytes]] = _http_get
    whois_query: Callable[[str, str, float], bytes] = _tcp_whois
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)

    def __post_init__(self):
        self._slots = threading.BoundedSemaphore(self.max_concurrency)
        self._buckets: dict[str, TokenBucket] = {}
        self._bucket_lock = threading.Lock()

    def _bucket(self, endpoint: str) -> TokenBucket:
        with self._bucket_lock:
            if endpoint not in self._buckets:
                self._buckets[endpoint] = TokenBucket(self.rate_per_endpoint)
            return self._buckets[endpoint]

    def _retry(self, endpoint: str, fn):
        last = None
        for _ in range(self.retries + 1):
            self._bucket(endpoint).acquire()
            try:
                return fn()
            except (socket.timeout, TimeoutError, OSError) as exc:
                last = exc
        raise NetworkTimeout(f"{endpoint}: {last}")

    def fetch_rdap(self, domain: DomainName) -> bytes | None:
        base = self.rdap_bootstrap.get(domain.tld) or self.rdap_bootstrap.get(
            domain.tld.rsplit(".", 1)[-1])
        if not base:
            return None
        url = base.rstrip("/") + "/domain/" + domain.registered_part
        endpoint = re.sub(r"^https?://([^/]+).*$", r"\1", base)
        status, body = self._retry(endpoint, lambda: self.http_get(url, self.timeout))
        if status == 429:
            raise RateLimited(endpoint)
        if status != 200:
            return None
        return body

    def fetch_whois(self, domain: DomainName) -> bytes:
        """Follow the referral chain from the IANA root.

        The answer of a server reached through a registry's
        ``Registrar WHOIS Server`` referral is final.
        """
        server = self.whois_root
        visited = []
        body = b""
        terminal = False
        for _ in range(self.max_hops):
            if server in visited:
                break
            visited.append(server)
            query = domain.registered_part
            body = self._retry(server, lambda s=server: self.whois_query(s, query, self.timeout))
            if terminal:
                return body
            ref = _referral(body.decode("utf-8", errors="replace"))
            if ref is None or ref[0] == server:
                return body
            server, terminal = ref
        raise NetworkTimeout(f"WHOIS referral chain exceeded {self.max_hops} hops: {visited}")

    def fetch(self, domain: DomainName) -> RawRegistrationDocument:
        with self._slots:
            body = self.fetch_rdap(domain)
            proto = "rdap"
            if body is None:
                body, proto = self.fetch_whois(domain), "whois"
            doc = RawRegistrationDocument(domain, body, proto, to_utc(self.clock()))
            self.store.save(doc)
            return doc


_REFER = re.compile(r"^\s*(?:refer|whois|Registrar WHOIS Server):\s*(\S+)\s*$",
                    re.IGNORECASE | re.MULTILINE)


def _referral(text: str) -> tuple[str, bool] | None:
    """Next WHOIS server and whether it is a registrar (terminal) referral."""
    m = _REFER.search(text)
    if not m:
        return None
    server = re.sub(r"^(?:whois://|https?://)", "", m.group(1)).rstrip("/").lower()
    return server, m.group(0).strip().lower().startswith("registrar")


def load_rdap_bootstrap(body: bytes | str) -> dict[str, str]:
    """Parse the IANA RDAP bootstrap registry (``dns.json``) into tld → base URL."""
    data = json.loads(body)
    out = {}
    for tlds, urls in data.get("services", []):
        https = [u for u in urls if u.startswith("https")] or urls
        for tld in tlds:
            out[tld.lower()] = https[0]
    return out


def fetch_registration(domain: DomainName, mode: str, store: DocumentStore,
                       at: datetime | None = None,
                       client: RegdataClient | None = None) -> RawRegistrationDocument:
    """Fetch a raw registration document.

    In ``fixture`` mode the stored document nearest to `at` is returned; in
    ``live`` mode the document is fetched (RDAP first) and persisted.
    """
    if mode == "fixture":
        return store.load(domain, at)
    if mode != "live":
        raise ValueError(f"unknown mode {mode!r}")
    client = client or RegdataClient(store)
    return client.fetch(domain)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

WHOIS_PATTERNS: dict[str, dict[str, list[str]]] = {
    "*": {
        "created": [r"Creation Date:\s*(.+)", r"Created On:\s*(.+)",
                    r"Registration Time:\s*(.+)"],
        "iana": [r"Registrar IANA ID:\s*(\d+)"],
        "registrar": [r"Registrar:\s*(.+)"],
        "status": [r"Domain Status:\s*(.+)"],
    },
    # per-TLD dialects extend the ICANN label set
    "uk": {"created": [r"Registered on:\s*(.+)"], "status": [r"Registration status:\s*(.+)"]},
    "se": {"created": [r"created:\s*(.+)"], "status": [r"status:\s*(.+)"],
           "registrar": [r"registrar:\s*(.+)"]},
    "nu": {"created": [r"created:\s*(.+)"], "status": [r"status:\s*(.+)"],
           "registrar": [r"registrar:\s*(.+)"]},
    "ch": {"created": [r"First registration date:\s*(.+)"]},
    "li": {"created": [r"First registration date:\s*(.+)"]},
}

NO_MATCH_MARKERS = ("no match for", "not found", "no data found", "no entries found",
                    "domain not found", "status: free", "status: available")


def _patterns(tld: str) -> dict[str, list[re.Pattern]]:
    keys = ("created", "iana", "registrar", "status")
    top = tld.rsplit(".", 1)[-1]
    merged = {k: list(WHOIS_PATTERNS["*"].get(k, [])) for k in keys}
    for extra in (WHOIS_PATTERNS.get(top, {}), WHOIS_PATTERNS.get(tld, {})):
        for k, pats in extra.items():
            merged[k] = pats + merged[k]
    return {k: [re.compile(r"^\s*" + p + r"\s*$", re.IGNORECASE | re.MULTILINE) for p in v]
            for k, v in merged.items()}


def parse_date(text: str) -> datetime | None:
    from dateutil import parser as dateparser

    text = text.strip()
    if not text:
        return None
    try:
        return to_utc(dateparser.parse(text))
    except (ValueError, OverflowError):
        return None


def is_no_match(doc: RawRegistrationDocument) -> bool:
    low = doc.text.lower()
    return any(m in low for m in NO_MATCH_MARKERS)


def parse_whois_text(doc: RawRegistrationDocument) -> RegistrationRecord:
    """Extract creation date, registrar IANA ID and EPP statuses from WHOIS text.

    Missing fields stay UNKNOWN (None).  When no recognized label is present
    at all the record is returned with ``flagged=True``.
    """
    if doc.protocol != "whois":
        raise ValueError(f"expected a whois document, got {doc.protocol}")
    text = doc.text.replace("\r\n", "\n")
    pats = _patterns(doc.domain.tld)
    hits = 0

    created = None
    for p in pats["created"]:
        m = p.search(text)
        if m:
            hits += 1
            created = parse_date(m.group(1))
            break

    iana = None
    for p in pats["iana"]:
        m = p.search(text)
        if m:
            hits += 1
            iana = int(m.group(1))
            break

    name = ""
    for p in pats["registrar"]:
        m = p.search(text)
        if m:
            name = m.group(1).strip()
            break

    statuses = set()
    for p in pats["status"]:
        found = p.findall(text)
        if found:
            hits += 1
            statuses.update(parse_epp_status(s) for s in found)
            break

    registrar = RegistrarKey(iana, name) if (iana or name) else UNKNOWN_REGISTRAR
    notes = ("no_match",) if is_no_match(doc) else ()
    return RegistrationRecord(
        domain=doc.domain, created_at=created, registrar=registrar,
        statuses=frozenset(statuses), queried_at=to_utc(doc.fetched_at),
        protocol="whois", flagged=hits == 0, notes=notes,
    )


def _rdap_status(text: str) -> EppStatus:
    words = text.strip().split()
    if not words:
        return parse_epp_status("")
    camel = words[0].lower() + "".join(w.capitalize() for w in words[1:])
    return parse_epp_status(camel)


def _vcard_fn(entity: dict) -> str:
    vcard = entity.get("vcardArray")
    if not (isinstance(vcard, list) and len(vcard) == 2):
        return ""
    for item in vcard[1]:
        if isinstance(item, list) and item and item[0] == "fn":
            return str(item[-1])
    return ""


def parse_rdap_document(doc: RawRegistrationDocument) -> RegistrationRecord:
    """Parse an RDAP domain object into a RegistrationRecord."""
    if doc.protocol != "rdap":
        raise ValueError(f"expected an rdap document, got {doc.protocol}")
    try:
        data = json.loads(doc.body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"{doc.domain}: invalid JSON ({exc})") from None
    if not isinstance(data, dict) or data.get("objectClassName") != "domain":
        raise MalformedDocument(f"{doc.domain}: not an RDAP domain object")

    created = None
    for ev in data.get("events", []) or []:
        if isinstance(ev, dict) and ev.get("eventAction") == "registration":
            created = parse_date(str(ev.get("eventDate", "")))
            break

    registrar = UNKNOWN_REGISTRAR
    for ent in data.get("entities", []) or []:
        if not isinstance(ent, dict) or "registrar" not in (ent.get("roles") or []):
            continue
        iana = None
        for pid in ent.get("publicIds", []) or []:
            if str(pid.get("type", "")).lower() == "iana registrar id":
                try:
                    iana = int(str(pid.get("identifier")).strip())
                except ValueError:
                    pass
        registrar = RegistrarKey(iana, _vcard_fn(ent))
        break

    statuses = frozenset(_rdap_status(s) for s in data.get("status", []) or [])
    return RegistrationRecord(
        domain=doc.domain, created_at=created, registrar=registrar, statuses=statuses,
        queried_at=to_utc(doc.fetched_at), protocol="rdap",
    )


def parse_document(doc: RawRegistrationDocument) -> RegistrationRecord:
    if doc.protocol == "rdap":
        return parse_rdap_document(doc)
    return parse_whois_text(doc)
