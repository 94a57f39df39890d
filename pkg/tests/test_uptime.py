from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from phishreg.core import normalize_domain
from phishreg.dns_probe import make_probe
from phishreg.uptime import (
    EmptyGroup, NoProbes, ProbeSchedule, UptimeRecord, aggregate_median, build_schedule,
    compute_uptime, read_uptime_table, uptime_table, uptime_table_csv,
)

M, H, DAY = timedelta(minutes=1), timedelta(hours=1), timedelta(days=1)
D = normalize_domain("chase03.com")
T0 = datetime(2024, 6, 5, 8, tzinfo=timezone.utc)


def schedule_oracle(horizon_days):
    listed = [0, 5, 15, 30, 60, 120, 180, 240, 300, 360, 720, 1440, 2160, 2880]
    tail = list(range(60 * 60, horizon_days * 24 * 60 + 1, 12 * 60))
    return [timedelta(minutes=m) for m in listed + tail]


def test_schedule_30_days():
    s = build_schedule(30)
    assert list(s) == schedule_oracle(30)
    assert len(s) == 70
    assert s.offsets[-1] == 720 * H
    assert list(s)[:2] == [timedelta(0), 5 * M]


def test_schedule_boundaries():
    assert build_schedule(3).offsets[-1] == 72 * H
    with pytest.raises(ValueError):
        build_schedule(2)
    assert build_schedule(30) == build_schedule(30)


@pytest.mark.parametrize("offsets", [(), (M,), (timedelta(0), H, H), (timedelta(0), H, M)])
def test_schedule_validation(offsets):
    with pytest.raises(ValueError):
        ProbeSchedule(tuple(offsets))


def test_instants():
    inst = build_schedule(3).instants(T0)
    assert inst[1] - inst[0] == 5 * M and inst[0] == T0


def probes(steps):
    return [make_probe(D, off, out, probed_at=T0 + off) for off, out in steps]


def test_first_hit():
    r = compute_uptime(T0, probes([(timedelta(0), "answered"), (2 * H, "answered"), (4 * H, "nxdomain")]))
    assert r.uptime == 4 * H and not r.censored


def test_already_mitigated_uses_actual_delay():
    p = [make_probe(D, timedelta(0), "nxdomain", probed_at=T0 + 3 * M)]
    assert compute_uptime(T0, p).uptime == 3 * M


def test_censored_at_horizon():
    r = compute_uptime(T0, probes([(o, "answered") for o in build_schedule(30)]))
    assert r.censored and r.uptime == 720 * H


def test_mitigation_after_horizon_is_censored():
    r = compute_uptime(T0, probes([(timedelta(0), "answered"), (31 * DAY, "nxdomain")]))
    assert r.censored and r.uptime == 30 * DAY


def test_no_probes():
    with pytest.raises(NoProbes):
        compute_uptime(T0, [])


@settings(max_examples=150, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=70), st.integers(0, 4))
def test_removing_earliest_hit_never_decreases_uptime(flags, delay_min):
    offs = list(build_schedule(30))[:len(flags)]
    ps = [make_probe(D, o, "nxdomain" if f else "answered",
                     probed_at=T0 + (o if o else delay_min * M)) for o, f in zip(offs, flags)]
    before = compute_uptime(T0, ps)
    hits = [p for p in ps if p.mitigated]
    if not hits:
        return
    rest = [p for p in ps if p is not hits[0]]
    if not rest:
        return
    assert compute_uptime(T0, rest).uptime >= before.uptime


def rec(minutes, censored=False, notified=False, name="chase03.com"):
    return UptimeRecord(normalize_domain(name), minutes * M, censored, notified)


def test_medians():
    assert aggregate_median([rec(4), rec(70), rec(17 * 60)]) == 70 * M
    assert aggregate_median([rec(10), rec(20)]) == 10 * M
    assert aggregate_median([rec(720 * 60, censored=True)]) == 720 * H


def test_median_filters_and_censoring():
    rs = [rec(5, notified=True), rec(50, notified=True), rec(500), rec(720 * 60, True)]
    assert aggregate_median(rs, "notified") == 5 * M
    assert aggregate_median(rs, "not_notified") == 500 * M
    assert aggregate_median(rs, "all", censoring="dropped") == 50 * M
    with pytest.raises(EmptyGroup):
        aggregate_median([rec(720 * 60, True)], "all", censoring="dropped")
    with pytest.raises(EmptyGroup):
        aggregate_median(rs[:2], "not_notified")


@given(st.lists(st.integers(0, 43200), min_size=1, max_size=30), st.randoms())
def test_median_properties(vals, rnd):
    rs = [rec(v) for v in vals]
    m = aggregate_median(rs)
    shuffled = list(rs)
    rnd.shuffle(shuffled)
    assert aggregate_median(shuffled) == m
    assert min(vals) * M <= m <= max(vals) * M


def test_uptime_table_round_trip():
    rs = [rec(5, notified=True, name="a.com"), rec(60, name="a.com"), rec(90, name="b.xyz")]
    keys = {"a.com": (1636, "com"), "b.xyz": (3775, "xyz")}
    rows = uptime_table(rs, keys)
    text = uptime_table_csv(rows)
    assert text.splitlines()[0] == "registrar_iana,tld,notified_filter,median_uptime_s,n,censored_n"
    back = read_uptime_table(text)
    assert back[(1636, "com")] == {"notified": 300.0, "not_notified": 3600.0, "all": 300.0}
    assert back[(3775, "xyz")] == {"not_notified": 5400.0, "all": 5400.0}
