"""From blocklisted URLs to registered domains.

Blocklist feeds list URLs, but registration data and DNS mitigation are
properties of the registered domain.  This walk-through parses two small
feed exports, reduces every URL to its registered domain under the public
suffix list, and sets aside URL shorteners and subdomain providers.
"""
# %%
from pathlib import Path

from phishreg.core import normalize_domain
from phishreg.feeds import ingest, parse_feed_file

FIX = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

# %% The registered part depends on the suffix, not on the label count.
for host in ("a.b.chase03.com", "secure.hmrc-refund-claim.co.uk", "www.bücher.de",
             "login.city.kawasaki.jp"):
    d = normalize_domain(host)
    print(f"{host:34s} -> {d.registered_part:28s} (TLD {d.tld})")

# %% Feed exports may be defanged and contain junk lines; both are handled.
apwg = parse_feed_file(FIX / "feeds" / "apwg.csv", "APWG")
tank = parse_feed_file(FIX / "feeds" / "phishtank.csv", "PhishTank")
print(f"\nAPWG: {len(apwg)} entries, {apwg.malformed_count} malformed lines skipped")
print(f"PhishTank: {len(tank)} entries")

# %% One record per registered domain, keeping the earliest listing.
result = ingest(list(apwg) + list(tank))
print("\nkept:")
for r in result["records"]:
    print(f"  {r['domain']:28s} first listed {r['listed_at']} via {r['source']}")
print("excluded:")
for r in result["excluded"]:
    print(f"  {r['domain']:28s} {r['exclusion']}")
print("skipped:", [s["url"] for s in result["skipped"]])
