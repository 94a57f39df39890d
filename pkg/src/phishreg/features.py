"""Registrar/TLD feature snapshots and model-ready feature engineering.

Snapshots are CSV files with one row per ``(registrar_iana, tld, as_of)``
and one column per collected feature.  A domain is joined to the latest
snapshot dated on or before its registration day.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from datetime import date
from importlib import resources
from pathlib import Path
from statistics import median
from typing import Iterable, Mapping

import numpy as np

from .artifacts import csv_text
from .core import RegistrarAliases

PAYMENT_METHODS = (
    "alipay", "applepay", "banktransfer", "bitcoin", "cashinperson", "cc", "check",
    "dinersclub", "dwolla", "giropay", "googlewallet", "moneyorder", "neteller", "payeer",
    "paypal", "payza", "qiwi", "skril", "topcoin", "webmoney", "westernunion", "worldpay",
    "yandexmoney", "yoomoney",
)

# (name, kind) in collection order; kind is "bool" or "num"
REGISTRATION_FEATURES = (
    [("free_api", "bool"), ("api_create_account", "bool"), ("api_register_domain", "bool"),
     ("free_dns", "bool"), ("free_dnssec", "bool"), ("free_email_account", "bool"),
     ("free_email_forward", "bool"), ("free_web_hosting", "bool"), ("free_ssl_cert", "bool"),
     ("free_bulk_search_number", "num"), ("bulk_discount", "bool")]
    + [(f"payment_{m}", "bool") for m in PAYMENT_METHODS]
    + [("price_register", "num"), ("price_renewal", "num"), ("price_transfer", "num"),
       ("price_whois_privacy", "num"), ("discount_register", "num"),
       ("discount_renewal", "num"), ("discount_transfer", "num"),
       ("term_new_customer_only_register", "bool"),
       ("term_new_customer_only_transfer", "bool"),
       ("term_limit_per_customer_register", "num"),
       ("term_limit_per_customer_transfer", "num")]
)

PREVENTION_FEATURES = (
    "random_warning", "random_prevention", "office365_warning", "office365_prevention",
    "facebook_warning", "facebook_prevention",
)
RESTRICTION_FEATURES = (
    "restriction_not_available", "restriction_local_presence", "restriction_community_ties",
    "restriction_age_restriction", "restriction_infrastructure", "restriction_group_ties",
    "restriction_commitment_required", "restriction_id_required", "restriction_region_ties",
    "restriction_professionals_only", "restriction_certain_nationals_prohibited",
    "restriction_org_or_affiliates_only", "restriction_exclusive_registrar",
    "restriction_content_restrictions",
)
PROACTIVE_FEATURES = (
    [("email_syntactically_validated", "bool"), ("phone_syntactically_validated", "bool"),
     ("address_syntactically_validated", "bool"), ("email_operational_validated", "bool"),
     ("phone_operational_validated", "bool")]
    + [(n, "bool") for n in PREVENTION_FEATURES]
    + [(n, "bool") for n in RESTRICTION_FEATURES]
)

SNAPSHOT_KEYS = ("registrar_iana", "tld", "as_of")
SNAPSHOT_FEATURES = tuple(REGISTRATION_FEATURES) + tuple(PROACTIVE_FEATURES)
SNAPSHOT_COLUMNS = SNAPSHOT_KEYS + tuple(n for n, _ in SNAPSHOT_FEATURES)
_KIND = dict(SNAPSHOT_FEATURES)

# model predictors in coefficient-table order, with their report labels
MODEL_FEATURES = (
    "free_dns", "free_web_host", "free_ssl_cert", "restrictions", "prevention", "api",
    "payment_digital_wallet", "payment_crypto", "payment_transfer", "emailPhone_validated",
    "free_bulk_search_number", "price_register", "discount_register", "uptime",
)
TABLE_LABELS = {
    "free_dns": "Free DNS",
    "free_web_host": "Free Web host",
    "free_ssl_cert": "Free SSL cert",
    "restrictions": "Restrictions",
    "prevention": "Prevention",
    "api": "API",
    "payment_digital_wallet": "Payment digital wallet",
    "payment_crypto": "Payment crypto",
    "payment_transfer": "Payment transfer",
    "emailPhone_validated": "EmailPhone validated",
    "free_bulk_search_number": "Free bulk search",
    "price_register": "Price register",
    "discount_register": "Discount register",
    "uptime": "Uptime",
}
_FROM_LABEL = {v: k for k, v in TABLE_LABELS.items()}
BOOLEAN_MODEL_FEATURES = ("free_dns", "free_web_host", "free_ssl_cert", "api",
                          "payment_digital_wallet", "payment_crypto", "payment_transfer",
                          "emailPhone_validated")
NUMERIC_MODEL_FEATURES = tuple(f for f in MODEL_FEATURES if f not in BOOLEAN_MODEL_FEATURES)


class SchemaViolation(ValueError):
    pass


class OverlappingSnapshots(ValueError):
    pass


class MissingCoverage(LookupError):
    pass


class JoinFailure(LookupError):
    def __init__(self, domains):
        self.domains = list(domains)
        super().__init__(f"{len(self.domains)} domain(s) could not be joined: "
                         + ", ".join(self.domains[:10]))


class DuplicateDomain(ValueError):
    pass


# --------------------------------------------------------------------------
# Snapshots
# --------------------------------------------------------------------------

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def _parse_bool(text: str, column: str) -> bool:
    v = str(text).strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise SchemaViolation(f"column {column}: not a boolean: {text!r}")


def _parse_num(text: str, column: str) -> float:
    try:
        return float(text) if str(text).strip() != "" else 0.0
    except ValueError:
        raise SchemaViolation(f"column {column}: not a number: {text!r}") from None


@dataclass(frozen=True)
class FeatureSnapshot:
    registrar_iana: int
    tld: str
    as_of: date
    values: Mapping[str, float | bool]

    def __getitem__(self, name):
        return self.values[name]

    def to_row(self) -> list:
        row = [self.registrar_iana, self.tld, self.as_of.isoformat()]
        for name, kind in SNAPSHOT_FEATURES:
            v = self.values[name]
            row.append(("true" if v else "false") if kind == "bool" else repr(float(v)))
        return row


def parse_snapshot_row(row: Mapping[str, str]) -> FeatureSnapshot:
    clean = {k.strip(): v for k, v in row.items() if k is not None}
    missing = [c for c in SNAPSHOT_COLUMNS if c not in clean]
    if missing:
        raise SchemaViolation(f"missing column(s): {', '.join(missing)}")
    values: dict[str, float | bool] = {}
    for name, kind in SNAPSHOT_FEATURES:
        values[name] = (_parse_bool if kind == "bool" else _parse_num)(clean[name], name)
    for name in ("price_register", "price_renewal", "price_transfer", "price_whois_privacy",
                 "discount_register", "discount_renewal", "discount_transfer"):
        if values[name] < 0:
            raise SchemaViolation(f"{name} must be non-negative")
    try:
        iana = int(clean["registrar_iana"])
        as_of = date.fromisoformat(clean["as_of"].strip())
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from None
    return FeatureSnapshot(iana, clean["tld"].strip().lower(), as_of, values)


class SnapshotStore:
    """Snapshots indexed by (registrar IANA ID, TLD) and date."""

    def __init__(self, aliases: RegistrarAliases | None = None):
        self.aliases = aliases
        self._index: dict[tuple[int, str], dict[date, FeatureSnapshot]] = {}
        self._dates: dict[tuple[int, str], list[date]] = {}

    def __len__(self):
        return sum(len(v) for v in self._index.values())

    def pairs(self) -> list[tuple[int, str]]:
        return sorted(self._index)

    def add(self, snap: FeatureSnapshot) -> None:
        key = (snap.registrar_iana, snap.tld)
        slot = self._index.setdefault(key, {})
        if snap.as_of in slot:
            raise OverlappingSnapshots(f"{key} already has a snapshot for {snap.as_of}")
        slot[snap.as_of] = snap
        self._dates[key] = sorted(slot)

    def _candidates(self, iana: int) -> list[int]:
        if self.aliases is None or self.aliases.family(iana) is None:
            return [iana]
        fam = self.aliases.family(iana)
        return [iana] + [i for i in self.aliases.ids(fam) if i != iana]

    def query(self, registrar_iana: int, tld: str, on: date) -> FeatureSnapshot:
        """Latest snapshot with ``as_of <= on``."""
        import bisect

        tld = tld.lower()
        for iana in self._candidates(registrar_iana):
            dates = self._dates.get((iana, tld))
            if not dates:
                continue
            i = bisect.bisect_right(dates, on)
            if i:
                return self._index[(iana, tld)][dates[i - 1]]
        raise MissingCoverage(f"no snapshot for ({registrar_iana}, {tld}) on or before {on}")


def read_snapshot_csv(text: str) -> list[FeatureSnapshot]:
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    missing = [c for c in SNAPSHOT_COLUMNS if c not in header]
    if missing:
        raise SchemaViolation(f"missing column(s): {', '.join(missing)}")
    return [parse_snapshot_row(r) for r in reader]


def load_snapshots(directory, aliases: RegistrarAliases | None = None) -> SnapshotStore:
    """Load every ``*.csv`` under `directory` into a :class:`SnapshotStore`."""
    store = SnapshotStore(aliases)
    for path in sorted(Path(directory).glob("*.csv")):
        for snap in read_snapshot_csv(path.read_text(encoding="utf-8")):
            store.add(snap)
    return store


def snapshot_csv(snaps: Iterable[FeatureSnapshot]) -> str:
    return csv_text(list(SNAPSHOT_COLUMNS), (s.to_row() for s in snaps))


# --------------------------------------------------------------------------
# Engineering
# --------------------------------------------------------------------------

def load_payment_groups(path=None) -> dict[str, str]:
    """``method -> group`` from a ``method,group`` CSV (bundled default)."""
    if path is None:
        text = (resources.files("phishreg") / "data" / "payment_groups.csv").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = csv.DictReader(l for l in text.splitlines() if l.strip() and not l.startswith("#"))
    groups = {}
    for r in rows:
        method = r["method"].strip().removeprefix("payment_")
        if method not in PAYMENT_METHODS:
            raise SchemaViolation(f"unknown payment method {method!r}")
        groups[method] = r["group"].strip()
    return groups


@dataclass(frozen=True)
class EngineeredFeatures:
    free_dns: bool
    free_web_host: bool
    free_ssl_cert: bool
    restrictions: int
    prevention: int
    api: bool
    payment_digital_wallet: bool
    payment_crypto: bool
    payment_transfer: bool
    emailPhone_validated: bool
    free_bulk_search_number: float
    price_register: float
    discount_register: float
    uptime: float

    def vector(self) -> list[float]:
        return [float(getattr(self, f)) for f in MODEL_FEATURES]

    @classmethod
    def from_vector(cls, values) -> "EngineeredFeatures":
        kw = {}
        for name, v in zip(MODEL_FEATURES, values):
            if name in BOOLEAN_MODEL_FEATURES:
                kw[name] = bool(round(float(v)))
            elif name in ("restrictions", "prevention"):
                kw[name] = int(round(float(v)))
            else:
                kw[name] = float(v)
        return cls(**kw)


def mean_uptime(uptime_notified: float | None, uptime_not_notified: float | None) -> float:
    vals = [v for v in (uptime_notified, uptime_not_notified)
            if v is not None and not math.isnan(v)]
    return sum(vals) / len(vals) if vals else math.nan


def aggregate(snapshot: FeatureSnapshot, uptime_notified: float | None = None,
              uptime_not_notified: float | None = None,
              payment_groups: Mapping[str, str] | None = None,
              composite: str = "count") -> EngineeredFeatures:
    """Collapse a snapshot into the 14 model predictors.

    Payment groups are ORed over their member methods; restrictions and
    prevention are counts of true members (``composite="boolean"`` turns
    them into 0/1 indicators).
    """
    groups = load_payment_groups() if payment_groups is None else payment_groups
    v = snapshot.values

    def any_in(group):
        return any(v[f"payment_{m}"] for m, g in groups.items() if g == group)

    restrictions = sum(bool(v[n]) for n in RESTRICTION_FEATURES)
    prevention = sum(bool(v[n]) for n in PREVENTION_FEATURES)
    if composite == "boolean":
        restrictions, prevention = int(restrictions > 0), int(prevention > 0)
    elif composite != "count":
        raise ValueError(f"unknown composite mode {composite!r}")
    return EngineeredFeatures(
        free_dns=bool(v["free_dns"]),
        free_web_host=bool(v["free_web_hosting"]),
        free_ssl_cert=bool(v["free_ssl_cert"]),
        restrictions=restrictions,
        prevention=prevention,
        api=bool(v["api_create_account"] or v["api_register_domain"]),
        payment_digital_wallet=any_in("digital_wallet"),
        payment_crypto=any_in("crypto"),
        payment_transfer=any_in("transfer"),
        emailPhone_validated=bool(v["email_operational_validated"]
                                  or v["phone_operational_validated"]),
        free_bulk_search_number=float(v["free_bulk_search_number"]),
        price_register=float(v["price_register"]),
        discount_register=float(v["discount_register"]),
        uptime=mean_uptime(uptime_notified, uptime_not_notified),
    )


# --------------------------------------------------------------------------
# Joining domains to features
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainRegistration:
    """A domain with the registration facts needed for the feature join."""

    domain: str
    registrar_iana: int
    tld: str
    registered_on: date
    malicious: bool


@dataclass(frozen=True)
class FeatureRow:
    domain: str
    registrar_iana: int
    tld: str
    label: bool
    x: EngineeredFeatures
    as_of: date | None = None


@dataclass(frozen=True)
class CountRow:
    registrar_iana: int
    tld: str
    malicious_count: int
    x: EngineeredFeatures


def join_domains(domains: Iterable[DomainRegistration], store: SnapshotStore,
                 uptimes: Mapping[tuple, Mapping[str, float]] | None = None,
                 payment_groups=None, composite: str = "count") -> list[FeatureRow]:
    """Attach engineered features to each domain; raises JoinFailure listing misses.

    `uptimes` maps ``(registrar_iana, tld)`` to ``{"notified": s, "not_notified": s}``.
    """
    groups = load_payment_groups() if payment_groups is None else payment_groups
    uptimes = uptimes or {}
    rows, failed = [], []
    for d in domains:
        try:
            snap = store.query(d.registrar_iana, d.tld, d.registered_on)
        except MissingCoverage:
            failed.append(d.domain)
            continue
        up = uptimes.get((d.registrar_iana, d.tld.lower()), {})
        x = aggregate(snap, up.get("notified"), up.get("not_notified"), groups, composite)
        rows.append(FeatureRow(d.domain, d.registrar_iana, d.tld.lower(), d.malicious, x,
                               snap.as_of))
    if failed:
        raise JoinFailure(failed)
    return rows


def _mode_bool(values: list[bool]) -> bool:
    # ties resolve to True
    return sum(values) * 2 >= len(values)


def reduce_pair(rows: list[FeatureRow]) -> EngineeredFeatures:
    """Pair-level features: modal value for booleans, median for numerics."""
    kw = {}
    for name in MODEL_FEATURES:
        vals = [getattr(r.x, name) for r in rows]
        if name in BOOLEAN_MODEL_FEATURES:
            kw[name] = _mode_bool(vals)
        else:
            finite = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
            m = median(finite) if finite else math.nan
            kw[name] = m
    return EngineeredFeatures(**kw)


def build_count_table(rows: Iterable[FeatureRow]) -> list[CountRow]:
    """Malicious-domain counts per registrar/TLD pair with pair-level features."""
    by_pair: dict[tuple, list[FeatureRow]] = {}
    for r in rows:
        if r.label:
            by_pair.setdefault((r.registrar_iana, r.tld), []).append(r)
    return [CountRow(k[0], k[1], len(v), reduce_pair(v)) for k, v in sorted(by_pair.items())]


def build_domain_rows(malicious: Iterable[FeatureRow],
                      benign: Iterable[FeatureRow]) -> list[FeatureRow]:
    """Union of labeled rows ordered by (registrar, tld, domain)."""
    out, seen = [], set()
    for label, rows in ((True, malicious), (False, benign)):
        for r in rows:
            if r.domain in seen:
                raise DuplicateDomain(r.domain)
            seen.add(r.domain)
            out.append(r if r.label == label else FeatureRow(r.domain, r.registrar_iana, r.tld,
                                                              label, r.x, r.as_of))
    out.sort(key=lambda r: (r.registrar_iana, r.tld, r.domain))
    return out


# --------------------------------------------------------------------------
# Design matrices
# --------------------------------------------------------------------------

def _header():
    return [TABLE_LABELS[f] for f in MODEL_FEATURES]


def count_table_csv(rows: Iterable[CountRow]) -> str:
    return csv_text(["registrar_iana", "tld", "malicious"] + _header(),
                    ([r.registrar_iana, r.tld, r.malicious_count] + _fmt_vec(r.x)
                     for r in rows))


def domain_rows_csv(rows: Iterable[FeatureRow]) -> str:
    return csv_text(["domain", "registrar_iana", "tld", "malicious"] + _header(),
                    ([r.domain, r.registrar_iana, r.tld, int(r.label)] + _fmt_vec(r.x)
                     for r in rows))


def _fmt_vec(x: EngineeredFeatures) -> list:
    return [repr(v) for v in x.vector()]


def _read_features(row: Mapping[str, str]) -> list[float]:
    try:
        return [float(row[TABLE_LABELS[f]]) for f in MODEL_FEATURES]
    except KeyError as exc:
        raise SchemaViolation(f"missing column {exc.args[0]!r}") from None


def standardize(X: np.ndarray, names: list[str], columns=NUMERIC_MODEL_FEATURES) -> np.ndarray:
    """Z-score the named numeric columns of `X` (labels or identifiers)."""
    X = np.array(X, dtype=float)
    for j, n in enumerate(names):
        key = _FROM_LABEL.get(n, n)
        if key in columns:
            sd = X[:, j].std()
            X[:, j] = (X[:, j] - X[:, j].mean()) / (sd if sd > 0 else 1.0)
    return X


def read_count_table(text: str, standardized: bool = False):
    """Parse a count-table CSV into a glm DesignMatrix (intercept first)."""
    from .glm import DesignMatrix

    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise SchemaViolation("empty count table")
    X = np.array([_read_features(r) for r in rows], dtype=float)
    y = np.array([float(r["malicious"]) for r in rows])
    names = _header()
    if standardized:
        X = standardize(X, names)
    X = np.column_stack([np.ones(len(rows)), X])
    return DesignMatrix(X, y, ["Intercept"] + names)


def read_domain_rows(text: str, standardized: bool = False):
    """Parse a domain-row CSV into a mixed-model design."""
    from .mixed import MixedDesign

    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise SchemaViolation("empty domain table")
    X = np.array([_read_features(r) for r in rows], dtype=float)
    names = _header()
    if standardized:
        X = standardize(X, names)
    X = np.column_stack([np.ones(len(rows)), X])
    y = np.array([int(r["malicious"]) for r in rows])
    return MixedDesign.from_labels(X, y, [r["registrar_iana"] for r in rows],
                                   [r["tld"] for r in rows], ["Intercept"] + names)


def feature_table(rows: Iterable[FeatureRow]) -> list[dict]:
    return [dict(domain=r.domain, registrar_iana=r.registrar_iana, tld=r.tld,
                 label=r.label, **asdict(r.x)) for r in rows]

