import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from phishreg.classify import (
    InconsistentInput, Label, classify, classify_corpus,
)
from phishreg.core import CLIENT_HOLD, RegistrarKey, normalize_domain
from phishreg.dns_probe import make_probe
from phishreg.regdata import RegistrationRecord
from phishreg.artifacts import meta_record, read_ndjson
from corpus import load_corpus

ITEMS, LABELS, KW = load_corpus()


def utc(*a):
    return datetime(*a, tzinfo=timezone.utc)


def rec(domain, created, iana=1636):
    return RegistrationRecord(normalize_domain(domain), created, RegistrarKey(iana, ""),
                              frozenset(), utc(2024, 7, 15), "fixture")


def test_corpus_labels_exact():
    summary = classify_corpus(ITEMS, **KW)
    got = {r.domain.registered_part: r.label.value for r in summary.records}
    assert got == LABELS


def test_counts_partition_corpus():
    summary = classify_corpus(ITEMS, **KW)
    assert sum(summary.counts.values()) == len(ITEMS) == 12
    assert summary.counts == {
        "MaliciouslyRegistered": 3, "ExcludedShortener": 1, "ExcludedSubdomainProvider": 1,
        "NoRegistrationData": 2, "RegistrationTooOld": 2, "NotDnsMitigated": 2,
        "RegistrarNotCovered": 1}


def test_permutation_invariance():
    base = [r.to_dict() for r in classify_corpus(ITEMS, **KW).records]
    rnd = random.Random(7)
    for _ in range(50):
        items = list(ITEMS)
        rnd.shuffle(items)
        assert [r.to_dict() for r in classify_corpus(items, **KW).records] == base


def test_empty_corpus():
    s = classify_corpus([], **KW)
    assert set(s.counts.values()) == {0} and len(s.counts) == 7


def test_documented_examples():
    d = normalize_domain("chase03.com")
    listed = utc(2024, 6, 5, 8)
    p = [make_probe(d, timedelta(0), "answered"), make_probe(d, timedelta(hours=4), "nxdomain")]
    r = classify(d, listed, "kept", rec("chase03.com", listed - timedelta(days=1)), p)
    assert r.label is Label.MALICIOUSLY_REGISTERED

    d2 = normalize_domain("old-bank-portal.com")
    clean = [make_probe(d2, timedelta(hours=h), "answered") for h in (0, 12, 24)]
    r = classify(d2, utc(2024, 7, 14), "kept", rec("old-bank-portal.com", utc(2008, 10, 28)), clean)
    assert r.label is Label.REGISTRATION_TOO_OLD

    d3 = normalize_domain("hundred.com")
    held = [make_probe(d3, timedelta(hours=2), "answered", [CLIENT_HOLD])]
    r = classify(d3, utc(2024, 6, 10), "kept", rec("hundred.com", utc(2024, 6, 10) - timedelta(days=100)), held)
    assert r.label is Label.REGISTRATION_TOO_OLD
    assert dict(r.evidence)["mitigation_offset_s"] == 7200  # both facts kept

    r = classify(d3, utc(2024, 6, 10), "kept", rec("hundred.com", utc(2024, 6, 1)),
                 [make_probe(d3, timedelta(days=d), "answered") for d in range(31)])
    assert r.label is Label.NOT_DNS_MITIGATED


def test_inconsistent_input():
    d = normalize_domain("a.com")
    with pytest.raises(InconsistentInput):
        classify(d, utc(2024, 1, 1), "kept", None,
                 [make_probe(normalize_domain("b.com"), timedelta(0), "nxdomain")])
    with pytest.raises(InconsistentInput):
        classify(d, utc(2024, 1, 1), "kept", rec("b.com", utc(2023, 12, 30)), [])


def test_malicious_evidence_invariant():
    for r in classify_corpus(ITEMS, **KW).records:
        if r.malicious:
            ev = dict(r.evidence)
            assert ev["mitigation_offset_s"] is not None
            assert ev["created_at"] is not None and 0 <= ev["age_days"] + 1 <= 91


@settings(max_examples=100, deadline=None)
@given(st.integers(-2, 200), st.integers(0, 40 * 24), st.booleans())
def test_tighter_window_never_adds_malicious(age_days, mit_hours, held):
    d = normalize_domain("x.com")
    listed = utc(2024, 6, 10, 12)
    probes = [make_probe(d, timedelta(hours=mit_hours), "answered" if held else "nxdomain",
                         [CLIENT_HOLD] if held else [])]
    reg = rec("x.com", listed - timedelta(days=age_days))
    wide = classify(d, listed, "kept", reg, probes, window_days=90)
    narrow = classify(d, listed, "kept", reg, probes, window_days=30)
    if narrow.malicious:
        assert wide.malicious


def test_write_outputs(tmp_path):
    summary = classify_corpus(ITEMS, **KW)
    paths = summary.write(tmp_path, meta_record(seed=0, config={"window_days": 90}))
    meta, rows = read_ndjson(paths["all"])
    assert meta["seed"] == 0 and len(rows) == 12
    assert rows[0]["evidence"][0] == ["exclusion", rows[0]["evidence"][0][1]]
    _, mal = read_ndjson(paths["MaliciouslyRegistered"])
    assert sorted(r["domain"] for r in mal) == ["alias-family.online", "chase03.com", "edge-ninety-days.com"]
