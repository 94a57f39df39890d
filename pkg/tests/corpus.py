"""Loader for the hand-labeled classification corpus."""

from phishreg.classify import CorpusItem
from phishreg.core import load_registrar_aliases, normalize_domain, parse_timestamp
from phishreg.dns_probe import ProbeResult
from phishreg.regdata import RegistrationRecord
from conftest import load_json


def load_corpus(name="classify_corpus.json"):
    doc = load_json(name)
    items, labels = [], {}
    for it in doc["items"]:
        d = normalize_domain(it["domain"])
        reg = RegistrationRecord.from_dict(it["reg"]) if it["reg"] else None
        probes = [ProbeResult.from_dict(dict(p, domain=it["domain"])) for p in it["probes"]]
        items.append(CorpusItem(d, parse_timestamp(it["listed_at"]), it["exclusion"], reg, probes))
        labels[it["domain"]] = it["label"]
    kwargs = dict(window_days=doc["window_days"], monitor_days=doc["monitor_days"],
                  covered_registrars=set(doc["covered_registrars"]),
                  aliases=load_registrar_aliases())
    return items, labels, kwargs
