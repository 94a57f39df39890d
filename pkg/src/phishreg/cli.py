"""Command-line pipeline over persisted NDJSON/CSV artifacts.

Each subcommand reads the latest successful artifacts of the stages it
depends on and writes a new numbered version directory under
``<out>/<stage>/``.  Earlier versions are never modified.

Exit status: 0 success, 1 usage error, 2 input or schema error,
3 convergence or quality failure (artifacts written so far are kept).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import shutil
import sys
import warnings
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import csv_text, dumps, meta_record, read_ndjson, write_csv, write_ndjson
from .core import load_registrar_aliases, normalize_domain, parse_timestamp

STAGES = ("ingest", "regdata", "probe", "classify", "uptime", "features", "sample",
          "fit-glm", "fit-mlm", "report")

DEFAULTS = {
    "feeds": [],
    "exclusions": {"url_shortener": None, "subdomain_provider": None},
    "regstore": None,
    "rdap_bootstrap": None,
    "dns_fixtures": None,
    "resolvers": ["1.1.1.1", "8.8.8.8"],
    "notified": None,
    "covered_registrars": None,
    "aliases": None,
    "snapshots": None,
    "payment_groups": None,
    "market_shares": None,
    "benign_pool": None,
    "sample_size": None,
    "count_table": None,
    "domain_rows": None,
    "window_days": 90,
    "monitor_days": 30,
    "seed": 0,
    "mode": "fixture",
    "standardize": False,
    "censoring": "capped",
    "composite": "count",
    "glm_alpha": 1.0,
    "residual_mode": "latent_logistic",
}
_PATH_KEYS = ("regstore", "rdap_bootstrap", "dns_fixtures", "notified", "aliases", "snapshots",
              "payment_groups", "market_shares", "benign_pool", "count_table", "domain_rows")


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class QualityFailure(Exception):
    pass


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    values: dict
    out: Path

    def __getitem__(self, key):
        return self.values[key]

    def digest_view(self) -> dict:
        return dict(self.values)


def _resolve(base: Path, p):
    if p is None:
        return None
    p = Path(p)
    return str(p if p.is_absolute() else (base / p).resolve())


def load_config(path=None, overrides: dict | None = None, out=None) -> PipelineConfig:
    """Merge defaults, a JSON config file and flag overrides (in that order).

    Relative paths in the file are taken relative to the file itself.
    """
    values = json.loads(json.dumps(DEFAULTS))
    base = Path.cwd()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(raw) - set(DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(raw)
        base = Path(path).resolve().parent
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v

    for k in _PATH_KEYS:
        values[k] = _resolve(base, values[k])
    values["feeds"] = [dict(f, path=_resolve(base, f["path"])) for f in values["feeds"]]
    values["exclusions"] = {k: _resolve(base, v) for k, v in values["exclusions"].items()}
    _validate(values)
    return PipelineConfig(values, Path(out or "artifacts"))


def _validate(v: dict) -> None:
    if v["mode"] not in ("live", "fixture"):
        raise UsageError(f"mode must be live or fixture, not {v['mode']!r}")
    if not (isinstance(v["seed"], int) and 0 <= v["seed"] < 2 ** 64):
        raise UsageError("seed must be an unsigned 64-bit integer")
    if not 1 <= int(v["window_days"]) <= 3650:
        raise UsageError("window_days must lie in [1, 3650]")
    if not 3 <= int(v["monitor_days"]) <= 365:
        raise UsageError("monitor_days must lie in [3, 365]")
    if v["censoring"] not in ("capped", "dropped"):
        raise UsageError("censoring must be capped or dropped")
    if v["composite"] not in ("count", "boolean"):
        raise UsageError("composite must be count or boolean")
    if v["glm_alpha"] != "profile" and not float(v["glm_alpha"]) >= 0:
        raise UsageError("glm_alpha must be non-negative or 'profile'")
    if v["sample_size"] is not None and int(v["sample_size"]) < 1:
        raise UsageError("sample_size must be positive")
    missing = [p for p in [v[k] for k in _PATH_KEYS] + [f["path"] for f in v["feeds"]]
               + list(v["exclusions"].values()) if p is not None and not Path(p).exists()]
    if missing:
        raise InputError("missing input path(s): " + ", ".join(missing))


# --------------------------------------------------------------------------
# Versioned artifact directories
# --------------------------------------------------------------------------

def _versions(stage_dir: Path) -> list[Path]:
    if not stage_dir.is_dir():
        return []
    return sorted(p for p in stage_dir.iterdir() if p.is_dir() and p.name.startswith("v"))


def new_version(out: Path, stage: str) -> Path:
    vs = _versions(out / stage)
    n = int(vs[-1].name[1:]) + 1 if vs else 1
    path = out / stage / f"v{n:04d}"
    path.mkdir(parents=True)
    return path


def latest(out: Path, stage: str, required: bool = True) -> Path | None:
    """Newest version of `stage` whose run finished successfully."""
    for v in reversed(_versions(out / stage)):
        try:
            status = json.loads((v / "status.json").read_text())
        except (OSError, json.JSONDecodeError):
            continue
        if status.get("exit") == 0:
            return v
    if required:
        raise InputError(f"no successful '{stage}' artifacts under {out}; run it first")
    return None


def _meta(cfg: PipelineConfig, stage: str) -> dict:
    return meta_record(seed=cfg["seed"], config=cfg.digest_view(), stage=stage,
                       mode=cfg["mode"])


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def _exclusion_lists(cfg):
    from .feeds import ExclusionKind, ExclusionList, default_exclusions

    lists = default_exclusions()
    for kind, path in cfg["exclusions"].items():
        if path is not None:
            k = ExclusionKind(kind)
            lists = [l for l in lists if l.kind is not k] + [ExclusionList.from_file(k, path)]
    return lists


def stage_ingest(cfg, out_dir):
    from .feeds import EmptyFeedWarning, ingest, parse_feed_file

    if not cfg["feeds"]:
        raise InputError("no feeds configured")
    entries, malformed = [], {}
    for feed in cfg["feeds"]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyFeedWarning)
            res = parse_feed_file(feed["path"], feed.get("source", "other"))
        entries += res.entries
        malformed[Path(feed["path"]).name] = res.malformed_count
    result = ingest(entries, lists=_exclusion_lists(cfg))
    meta = _meta(cfg, "ingest")
    write_ndjson(out_dir / "domains.ndjson", result["records"], meta)
    write_ndjson(out_dir / "excluded.ndjson", result["excluded"], meta)
    write_ndjson(out_dir / "skipped.ndjson", result["skipped"], meta)
    return {"entries": len(entries), "domains": len(result["records"]),
            "excluded": len(result["excluded"]), "skipped": len(result["skipped"]),
            "malformed": malformed}


def _store(cfg):
    from .regdata import DocumentStore

    if cfg["regstore"] is None:
        raise InputError("config key 'regstore' is required")
    return DocumentStore(cfg["regstore"])


def _client(cfg, store):
    from .regdata import RegdataClient, load_rdap_bootstrap

    boot = {}
    if cfg["rdap_bootstrap"]:
        boot = load_rdap_bootstrap(Path(cfg["rdap_bootstrap"]).read_bytes())
    return RegdataClient(store, rdap_bootstrap=boot)


def stage_regdata(cfg, out_dir):
    from .regdata import (MalformedDocument, NotFoundInStore, RegdataError, fetch_registration,
                          parse_document)

    _, domains = read_ndjson(latest(cfg.out, "ingest") / "domains.ndjson")
    store = _store(cfg)
    client = _client(cfg, store) if cfg["mode"] == "live" else None
    records, missing = [], []
    for d in domains:
        dn = normalize_domain(d["domain"])
        try:
            doc = fetch_registration(dn, cfg["mode"], store, parse_timestamp(d["listed_at"]),
                                     client)
            records.append(parse_document(doc).to_dict())
        except (NotFoundInStore, MalformedDocument, RegdataError) as exc:
            missing.append({"domain": d["domain"], "reason": type(exc).__name__})
    meta = _meta(cfg, "regdata")
    write_ndjson(out_dir / "registrations.ndjson", records, meta)
    write_ndjson(out_dir / "missing.ndjson", missing, meta)
    return {"records": len(records), "missing": len(missing),
            "flagged": sum(r["flagged"] for r in records)}


def _holds_timeline(store, dn):
    """Sorted ``(fetched_at, holds)`` pairs from every stored document."""
    from .regdata import RegdataError, parse_document

    out = []
    for at, proto, path in store.list(dn):
        try:
            doc = store.load(dn, at, proto)
            out.append((at, parse_document(doc).holds))
        except (RegdataError, ValueError):
            continue
    return out


def _holds_at(timeline, at):
    current = frozenset()
    for t, holds in timeline:
        if t <= at:
            current = holds
    return current


def _notified(cfg) -> set:
    if cfg["notified"] is None:
        return set()
    return {l.strip().lower() for l in Path(cfg["notified"]).read_text().splitlines()
            if l.strip() and not l.startswith("#")}


def stage_probe(cfg, out_dir):
    from .dns_probe import DnsFixtures, DnsOutcome, ProbeLog, make_probe, probe_a
    from .uptime import build_schedule

    _, domains = read_ndjson(latest(cfg.out, "ingest") / "domains.ndjson")
    store = _store(cfg)
    notified = _notified(cfg)
    schedule = build_schedule(cfg["monitor_days"])
    results, unrecorded = [], 0
    if cfg["mode"] == "fixture":
        if cfg["dns_fixtures"] is None:
            raise InputError("fixture mode needs 'dns_fixtures'")
        fx = DnsFixtures.from_file(cfg["dns_fixtures"])
        for d in domains:
            dn = normalize_domain(d["domain"])
            timeline = _holds_timeline(store, dn)
            listed = parse_timestamp(d["listed_at"])
            for off, at in zip(schedule, schedule.instants(listed)):
                try:
                    outcome = probe_a(dn, "fixture", at, fx)
                except LookupError:
                    outcome, unrecorded = DnsOutcome.TIMEOUT, unrecorded + 1
                results.append(make_probe(dn, off, outcome, _holds_at(timeline, at),
                                          dn.registered_part in notified, at))
    else:
        # one live round: each domain is probed now at its latest due offset
        from .regdata import RegdataError, parse_document

        log = ProbeLog(cfg.out / "probe" / "live_log.ndjson")
        client = _client(cfg, store)
        now = datetime.now(timezone.utc)
        for d in domains:
            dn = normalize_domain(d["domain"])
            elapsed = now - parse_timestamp(d["listed_at"])
            due = [o for o in schedule if o <= elapsed]
            if not due or elapsed > schedule.offsets[-1] + timedelta(hours=12):
                continue
            outcome = probe_a(dn, "live", resolvers=tuple(cfg["resolvers"]))
            try:
                holds = parse_document(client.fetch(dn)).holds
            except RegdataError:
                holds = frozenset()
            p = make_probe(dn, due[-1], outcome, holds, dn.registered_part in notified, now)
            log.append(p)
        results = log.read()
    meta = _meta(cfg, "probe")
    write_ndjson(out_dir / "probes.ndjson", (p.to_dict() for p in results), meta)
    return {"probes": len(results), "domains": len({p.domain for p in results}),
            "dns_unrecorded": unrecorded}


def _registrations(cfg, required=True):
    from .regdata import RegistrationRecord

    v = latest(cfg.out, "regdata", required)
    if v is None:
        return {}
    return {r["domain"]: RegistrationRecord.from_dict(r)
            for r in read_ndjson(v / "registrations.ndjson")[1]}


def _probes(cfg):
    from .dns_probe import ProbeResult, group_probes

    recs = read_ndjson(latest(cfg.out, "probe") / "probes.ndjson")[1]
    return group_probes(ProbeResult.from_dict(r) for r in recs)


def stage_classify(cfg, out_dir):
    from .classify import CorpusItem, classify_corpus

    ing = latest(cfg.out, "ingest")
    regs = _registrations(cfg)
    probes = _probes(cfg)
    items = []
    for name, verdict_of in (("domains.ndjson", None), ("excluded.ndjson", "exclusion")):
        for d in read_ndjson(ing / name)[1]:
            items.append(CorpusItem(normalize_domain(d["domain"]),
                                    parse_timestamp(d["listed_at"]),
                                    d[verdict_of] if verdict_of else "kept",
                                    regs.get(d["domain"]), probes.get(d["domain"], [])))
    aliases = load_registrar_aliases(cfg["aliases"]) if cfg["aliases"] else None
    summary = classify_corpus(items, window_days=cfg["window_days"],
                              monitor_days=cfg["monitor_days"],
                              covered_registrars=cfg["covered_registrars"], aliases=aliases)
    summary.write(out_dir, _meta(cfg, "classify"))
    (out_dir / "summary.json").write_text(json.dumps(summary.counts, indent=1, sort_keys=True)
                                          + "\n")
    return {"counts": summary.counts, "total": len(summary.records)}


def _malicious(cfg):
    v = latest(cfg.out, "classify")
    return read_ndjson(v / "MaliciouslyRegistered.ndjson")[1]


def stage_uptime(cfg, out_dir):
    from .uptime import compute_uptime, uptime_table, uptime_table_csv

    mal = _malicious(cfg)
    regs = _registrations(cfg)
    probes = _probes(cfg)
    horizon = timedelta(days=cfg["monitor_days"])
    records, keys = [], {}
    for m in mal:
        rec = compute_uptime(parse_timestamp(m["listed_at"]), probes[m["domain"]], horizon)
        records.append(rec)
        keys[m["domain"]] = (regs[m["domain"]].registrar.iana_id, m["tld"])
    rows = uptime_table(records, keys, cfg["censoring"])
    (out_dir / "uptime.csv").write_text(uptime_table_csv(rows))
    write_ndjson(out_dir / "records.ndjson",
                 ({"domain": r.domain.registered_part, "uptime_s": int(r.seconds),
                   "censored": r.censored, "notified": r.notified} for r in records),
                 _meta(cfg, "uptime"))
    return {"domains": len(records), "groups": len({k for k in keys.values()})}


def _snapshot_store(cfg):
    from .features import load_snapshots

    if cfg["snapshots"] is None:
        raise InputError("config key 'snapshots' is required")
    aliases = load_registrar_aliases(cfg["aliases"]) if cfg["aliases"] else None
    return load_snapshots(cfg["snapshots"], aliases)


def _uptime_lookup(cfg) -> dict:
    from .uptime import read_uptime_table

    v = latest(cfg.out, "uptime", required=False)
    if v is None:
        return {}
    table = read_uptime_table((v / "uptime.csv").read_text())
    return {k: {f: s for f, s in d.items() if f != "all"} for k, d in table.items()}


def _payment_groups(cfg):
    from .features import load_payment_groups
    return load_payment_groups(cfg["payment_groups"])


def stage_features(cfg, out_dir):
    from .features import (DomainRegistration, build_count_table, count_table_csv,
                           domain_rows_csv, join_domains)

    regs = _registrations(cfg)
    doms = []
    for m in _malicious(cfg):
        r = regs[m["domain"]]
        doms.append(DomainRegistration(m["domain"], r.registrar.iana_id, m["tld"],
                                       r.created_at.date(), True))
    rows = join_domains(doms, _snapshot_store(cfg), _uptime_lookup(cfg), _payment_groups(cfg),
                        cfg["composite"])
    table = build_count_table(rows)
    (out_dir / "count_table.csv").write_text(count_table_csv(table))
    (out_dir / "malicious_rows.csv").write_text(domain_rows_csv(rows))
    return {"pairs": len(table), "domains": len(rows)}


def _read_pool(path) -> dict:
    pool = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            pool.setdefault(int(row["registrar_iana"]), []).append(
                (row["domain"].strip().lower(), row["tld"].strip().lower(),
                 date.fromisoformat(row["registered_on"].strip())))
    return pool


def _read_feature_rows(text: str, label: bool):
    from .features import (MODEL_FEATURES, TABLE_LABELS, EngineeredFeatures, FeatureRow)

    out = []
    for r in csv.DictReader(io.StringIO(text)):
        x = EngineeredFeatures.from_vector(float(r[TABLE_LABELS[f]]) for f in MODEL_FEATURES)
        out.append(FeatureRow(r["domain"], int(r["registrar_iana"]), r["tld"], label, x))
    return out


def _impute_uptime(rows):
    """Fill missing pair uptimes with the median of the observed ones."""
    from dataclasses import replace

    seen = [r.x.uptime for r in rows if not math.isnan(r.x.uptime)]
    fill = float(np.median(seen)) if seen else 0.0
    return [r if not math.isnan(r.x.uptime) else replace(r, x=replace(r.x, uptime=fill))
            for r in rows], sum(math.isnan(r.x.uptime) for r in rows)


def stage_sample(cfg, out_dir):
    from .features import (DomainRegistration, build_domain_rows, domain_rows_csv,
                           join_domains)
    from .sampler import load_market_shares, stratified_sample

    if cfg["market_shares"] is None or cfg["benign_pool"] is None:
        raise InputError("config keys 'market_shares' and 'benign_pool' are required")
    feat = latest(cfg.out, "features")
    malicious = _read_feature_rows((feat / "malicious_rows.csv").read_text(), True)
    bad = {r.domain for r in malicious}
    shares = load_market_shares(cfg["market_shares"])
    pool = _read_pool(cfg["benign_pool"])
    info = {d: (iana, tld, on) for iana, ds in pool.items() for d, tld, on in ds}
    names = {k: [d for d, _, _ in v if d not in bad] for k, v in pool.items()}
    n = int(cfg["sample_size"] or len(malicious))
    sample = stratified_sample(names, shares, n, cfg["seed"])
    (out_dir / "sample.csv").write_text(csv_text(["registrar_iana", "domain"], sample.sample))
    regs = [DomainRegistration(d, info[d][0], info[d][1], info[d][2], False)
            for d in sample.domains()]
    benign = join_domains(regs, _snapshot_store(cfg), _uptime_lookup(cfg),
                          _payment_groups(cfg), cfg["composite"])
    rows, imputed = _impute_uptime(build_domain_rows(malicious, benign))
    (out_dir / "domain_rows.csv").write_text(domain_rows_csv(rows))
    return {"sampled": len(sample.sample), "rows": len(rows), "uptime_imputed": imputed,
            "quotas": {str(k): v for k, v in sorted(sample.quotas.items())}}


def stage_fit_glm(cfg, out_dir):
    from .features import read_count_table
    from .glm import (ConvergenceWarning, RankDeficient, SeparationSuspected, fit_nb_glm,
                      fit_null, profile_alpha, summarize)

    src = Path(cfg["count_table"]) if cfg["count_table"] else \
        latest(cfg.out, "features") / "count_table.csv"
    D = read_count_table(src.read_text(), standardized=cfg["standardize"])
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            if cfg["glm_alpha"] == "profile":
                fit, profile = profile_alpha(D)
                write_csv(out_dir / "alpha_profile.csv", ["alpha", "loglik"],
                          sorted(profile.items()))
            else:
                fit = fit_nb_glm(D, alpha=float(cfg["glm_alpha"]))
    except RankDeficient as exc:
        raise QualityFailure(f"rank-deficient design; collinear column(s): "
                             f"{', '.join(exc.columns)}") from None
    except SeparationSuspected as exc:
        fit = exc.fit
        _write_glm(out_dir, fit, None, summarize)
        raise QualityFailure(f"separation suspected for column(s): {', '.join(exc.columns)}") \
            from None
    null = fit_null(D, alpha=fit.alpha)
    _write_glm(out_dir, fit, null, summarize)
    if not fit.converged or any(issubclass(w.category, ConvergenceWarning) for w in caught):
        raise QualityFailure("NB-GLM did not converge; last iterate written")
    return {"nobs": fit.nobs, "alpha": fit.alpha, "loglik": fit.loglik,
            "iterations": fit.iterations}


def _write_glm(out_dir, fit, null, summarize):
    table = summarize(fit, null)
    (out_dir / "coefficients.csv").write_text(table.to_csv())
    (out_dir / "summary.txt").write_text(table.to_text())


def stage_fit_mlm(cfg, out_dir):
    from .features import read_domain_rows
    from .mixed import (BoundaryVariance, NotConverged, extract_random_effects, fit_mixed_logit,
                        mixed_report, mixed_report_text)

    src = Path(cfg["domain_rows"]) if cfg["domain_rows"] else \
        latest(cfg.out, "sample") / "domain_rows.csv"
    D = read_domain_rows(src.read_text(), standardized=cfg["standardize"])
    failure = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryVariance)
        try:
            fit = fit_mixed_logit(D)
        except NotConverged as exc:
            fit, failure = exc.fit, str(exc)
    report = mixed_report(fit, D, cfg["residual_mode"])
    (out_dir / "summary.txt").write_text(mixed_report_text(report))
    rows = report["fixed"]
    (out_dir / "coefficients.csv").write_text(csv_text(
        ["name", "coef", "std_err", "z", "p", "ci_low", "ci_high", "exp_effect"],
        ([r[c] for c in ("name", "coef", "std_err", "z", "p", "ci_low", "ci_high",
                         "exp_effect")] for r in rows)))
    for factor in ("registrar", "tld"):
        write_csv(out_dir / f"random_effects_{factor}.csv", [factor, "intercept"],
                  extract_random_effects(fit, factor))
    info = {k: report[k] for k in ("tau00_registrar", "tau00_tld", "icc", "n_registrar",
                                   "n_tld", "observations", "marginal_r2", "conditional_r2",
                                   "loglik", "converged", "boundary")}
    (out_dir / "fit.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    if failure:
        raise QualityFailure(failure)
    return {"nobs": fit.nobs, "tau2_reg": fit.tau2_reg, "tau2_tld": fit.tau2_tld}


# report ---------------------------------------------------------------------

_PRICE_COLUMNS = ("price_register", "price_renewal", "price_transfer", "price_whois_privacy",
                  "discount_register", "discount_renewal", "discount_transfer")
_FREE_COLUMNS = ("free_api", "free_dns", "free_dnssec", "free_email_account",
                 "free_email_forward", "free_web_hosting", "free_ssl_cert")


def _ecdf(values):
    xs = sorted(values)
    n = len(xs)
    return [(x, (i + 1) / n) for i, x in enumerate(xs) if i == n - 1 or xs[i + 1] != x]


def stage_report(cfg, out_dir):
    written = []
    if cfg["snapshots"]:
        store = _snapshot_store(cfg)
        snaps = [store.query(i, t, date.max) for i, t in store.pairs()]
        write_csv(out_dir / "price_discount.csv", ["registrar_iana", "tld", "as_of",
                                                   *_PRICE_COLUMNS],
                  ([s.registrar_iana, s.tld, s.as_of.isoformat()]
                   + [s[c] for c in _PRICE_COLUMNS] for s in snaps))
        offering = {c: {s.registrar_iana for s in snaps if s[c]} for c in _FREE_COLUMNS}
        n_reg = len({s.registrar_iana for s in snaps})
        write_csv(out_dir / "free_features.csv", ["feature", "registrars_offering", "registrars"],
                  ([c, len(offering[c]), n_reg] for c in _FREE_COLUMNS))
        written += ["price_discount.csv", "free_features.csv"]
    up = latest(cfg.out, "uptime", required=False)
    if up is not None:
        recs = read_ndjson(up / "records.ndjson")[1]
        rows = []
        for name, keep in (("notified", lambda r: r["notified"]),
                           ("not_notified", lambda r: not r["notified"]),
                           ("all", lambda r: True)):
            vals = [r["uptime_s"] for r in recs if keep(r)]
            rows += [(name, x, f"{c:.6f}") for x, c in _ecdf(vals)]
        write_csv(out_dir / "uptime_cdf.csv", ["filter", "uptime_s", "cdf"], rows)
        written.append("uptime_cdf.csv")
    feat = latest(cfg.out, "features", required=False)
    if feat is not None:
        counts = Counter(int(r["malicious"]) for r in
                         csv.DictReader(io.StringIO((feat / "count_table.csv").read_text())))
        write_csv(out_dir / "count_histogram.csv", ["malicious_count", "pairs"],
                  sorted(counts.items()))
        written.append("count_histogram.csv")
    for stage, name in (("fit-glm", "glm"), ("fit-mlm", "mlm")):
        v = latest(cfg.out, stage, required=False)
        if v is None:
            continue
        shutil.copyfile(v / "coefficients.csv", out_dir / f"{name}_coefficients.csv")
        shutil.copyfile(v / "summary.txt", out_dir / f"{name}_summary.txt")
        written += [f"{name}_coefficients.csv", f"{name}_summary.txt"]
    if not written:
        raise InputError("nothing to report; run earlier stages first")
    return {"written": written}


RUNNERS = {
    "ingest": stage_ingest, "regdata": stage_regdata, "probe": stage_probe,
    "classify": stage_classify, "uptime": stage_uptime, "features": stage_features,
    "sample": stage_sample, "fit-glm": stage_fit_glm, "fit-mlm": stage_fit_mlm,
    "report": stage_report,
}


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phishreg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--mode", choices=("live", "fixture"))
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="artifacts", help="artifact root directory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in STAGES:
        sub.add_parser(name, parents=[common])
    return p


def run(command: str, cfg: PipelineConfig) -> tuple[int, Path, dict]:
    out_dir = new_version(cfg.out, command)
    code, info = 0, {}
    try:
        info = RUNNERS[command](cfg, out_dir) or {}
    except QualityFailure as exc:
        code, info = 3, {"error": str(exc)}
    except (InputError, OSError, ValueError, KeyError, LookupError) as exc:
        code, info = 2, {"error": f"{type(exc).__name__}: {exc}"}
    status = {"stage": command, "exit": code, **info}
    (out_dir / "status.json").write_text(dumps(status) + "\n")
    return code, out_dir, status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, {"mode": args.mode, "seed": args.seed}, args.out)
    except UsageError as exc:
        print(f"phishreg: {exc}", file=sys.stderr)
        return 1
    except InputError as exc:
        print(f"phishreg: {exc}", file=sys.stderr)
        return 2
    code, out_dir, status = run(args.command, cfg)
    stream = sys.stdout if code == 0 else sys.stderr
    print(f"{args.command}: exit {code} -> {out_dir}", file=stream)
    print(json.dumps(status, indent=1, sort_keys=True, default=str), file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())
