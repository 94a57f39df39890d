import socket
import threading
from datetime import datetime, timedelta, timezone

import dns.message
import dns.rcode
import dns.rrset
import pytest
from hypothesis import given, strategies as st

from phishreg.core import CLIENT_HOLD, OK, SERVER_HOLD, normalize_domain, parse_epp_status
from phishreg.dns_probe import (
    DnsFixtures, DnsOutcome, ProbeLog, ProbeResult, ResolverUnreachable, _dnspython_query,
    combine_outcomes, group_probes, is_dns_mitigated, make_probe, mitigation_offset,
    probe_a, probe_many,
)
from conftest import FIXTURES

D = normalize_domain("chase03.com")


def utc(*a):
    return datetime(*a, tzinfo=timezone.utc)


@pytest.mark.parametrize("outcome,statuses,expected", [
    (DnsOutcome.ANSWERED, {CLIENT_HOLD}, True),
    (DnsOutcome.NXDOMAIN, set(), True),
    (DnsOutcome.ANSWERED, {OK}, False),
    (DnsOutcome.SERVFAIL, set(), False),
    (DnsOutcome.TIMEOUT, set(), False),
    (DnsOutcome.TIMEOUT, {SERVER_HOLD}, True),
])
def test_is_dns_mitigated(outcome, statuses, expected):
    assert is_dns_mitigated(outcome, statuses) is expected


status_names = st.sampled_from(["clientHold", "serverHold", "ok", "addPeriod", "redemptionPeriod"])


@given(st.sampled_from(list(DnsOutcome)), st.sets(status_names), status_names)
def test_mitigation_monotone(outcome, names, extra):
    s = {parse_epp_status(n) for n in names}
    if is_dns_mitigated(outcome, s):
        assert is_dns_mitigated(outcome, s | {parse_epp_status(extra)})


def test_probe_invariants():
    with pytest.raises(ValueError):
        ProbeResult(D, timedelta(seconds=-1), DnsOutcome.ANSWERED)
    with pytest.raises(ValueError):
        ProbeResult(D, timedelta(0), DnsOutcome.ANSWERED, frozenset({OK}))
    p = make_probe(D, timedelta(hours=2), "answered", [OK, CLIENT_HOLD])
    assert p.holds == frozenset({CLIENT_HOLD}) and p.mitigated


def test_fixture_replay():
    fx = DnsFixtures.from_file(FIXTURES / "dns_fixtures.ndjson")
    assert probe_a("suspended-login.com", "fixture", utc(2024, 6, 2), fx) is DnsOutcome.NXDOMAIN
    assert probe_a(D, "fixture", utc(2024, 6, 5, 8), fx) is DnsOutcome.ANSWERED
    assert probe_a(D, "fixture", utc(2024, 6, 5, 12), fx) is DnsOutcome.NXDOMAIN
    assert probe_a("lame-delegation.net", "fixture", utc(2024, 6, 2), fx) is DnsOutcome.SERVFAIL
    with pytest.raises(LookupError):
        probe_a(D, "fixture", utc(2024, 1, 1), fx)


def test_combine_outcomes():
    A, N, S, T = DnsOutcome.ANSWERED, DnsOutcome.NXDOMAIN, DnsOutcome.SERVFAIL, DnsOutcome.TIMEOUT
    assert combine_outcomes([N, T]) is N
    assert combine_outcomes([S, A]) is A
    assert combine_outcomes([N, A]) is A
    assert combine_outcomes([S, T]) is S
    assert combine_outcomes([T, T]) is T


def test_live_all_resolvers_fail():
    def q(name, ns, timeout):
        raise OSError("unreachable")
    with pytest.raises(ResolverUnreachable):
        probe_a(D, "live", query=q)


def test_live_second_resolver_breaks_tie():
    answers = {"r1": DnsOutcome.TIMEOUT, "r2": DnsOutcome.NXDOMAIN}
    got = probe_a(D, "live", resolvers=("r1", "r2"), query=lambda n, ns, t: answers[ns])
    assert got is DnsOutcome.NXDOMAIN


# -- local authoritative responder -------------------------------------------------

class Responder:
    """Minimal UDP DNS server: NXDOMAIN, SERVFAIL, silence or an A answer by name."""

    def __init__(self):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.port = self.sock.getsockname()[1]
        self.stop = False
        self.thread = threading.Thread(target=self.run, daemon=True)
        self.thread.start()

    def run(self):
        self.sock.settimeout(0.1)
        while not self.stop:
            try:
                data, addr = self.sock.recvfrom(4096)
            except socket.timeout:
                continue
            q = dns.message.from_wire(data)
            name = q.question[0].name.to_text().rstrip(".")
            r = dns.message.make_response(q)
            if name.startswith("silent"):
                continue
            if name.startswith("suspended"):
                r.set_rcode(dns.rcode.NXDOMAIN)
            elif name.startswith("lame"):
                r.set_rcode(dns.rcode.SERVFAIL)
            elif name.startswith("empty"):
                pass
            else:
                r.answer.append(dns.rrset.from_text(q.question[0].name, 60, "IN", "A", "192.0.2.1"))
            self.sock.sendto(r.to_wire(), addr)

    def close(self):
        self.stop = True
        self.thread.join()
        self.sock.close()


@pytest.fixture(scope="module")
def responder():
    r = Responder()
    yield r
    r.close()


@pytest.mark.parametrize("name,expected", [
    ("suspended-login.com", DnsOutcome.NXDOMAIN),
    ("lame-delegation.net", DnsOutcome.SERVFAIL),
    ("example.org", DnsOutcome.ANSWERED),
    ("empty-answer.org", DnsOutcome.ANSWERED),
    ("silent-server.org", DnsOutcome.TIMEOUT),
])
def test_resolver_rcode_classes(responder, name, expected):
    got = _dnspython_query(name, f"127.0.0.1#{responder.port}", 0.5)
    assert got is expected


def test_live_probe_through_responder(responder):
    ns = f"127.0.0.1#{responder.port}"
    assert probe_a("lame-delegation.net", "live", resolvers=(ns,), timeout=0.5) is DnsOutcome.SERVFAIL
    assert probe_a("suspended-login.com", "live", resolvers=(ns, ns), timeout=0.5) is DnsOutcome.NXDOMAIN


def test_probe_log_round_trip(tmp_path):
    log = ProbeLog(tmp_path / "probes.ndjson")
    tasks = [(D, timedelta(hours=h), "answered" if h < 4 else "nxdomain") for h in (0, 2, 4, 6)]
    res = probe_many(tasks, lambda d, o, out: make_probe(d, o, out, notified=True,
                                                        probed_at=utc(2024, 6, 5) + o), log=log)
    assert [r.offset for r in res] == [t[1] for t in tasks]
    back = log.read()
    assert back == res
    first = (tmp_path / "probes.ndjson").read_text().splitlines()[0]
    assert first == ('{"dns":"answered","domain":"chase03.com","holds":[],"notified":true,'
                     '"offset_s":0,"probed_at":"2024-06-05T00:00:00Z"}')


def test_mitigation_is_sticky():
    probes = [make_probe(D, timedelta(hours=h), o) for h, o in
              [(6, "answered"), (0, "answered"), (4, "nxdomain"), (8, "nxdomain"), (5, "answered")]]
    assert mitigation_offset(probes) == timedelta(hours=4)
    grouped = group_probes(probes)
    assert [p.offset.seconds // 3600 for p in grouped["chase03.com"]] == [0, 4, 5, 6, 8]
