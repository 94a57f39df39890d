"""A benign baseline drawn in proportion to registrar market share.

Comparing malicious registrations with a benign sample only makes sense if
the sample mirrors how registrations are distributed across registrars.
Quotas come from largest-remainder apportionment; each registrar's draw
uses its own seeded stream, so adding a registrar never perturbs another.
"""
# %%
from phishreg.sampler import largest_remainder, market_shares_from_counts, stratified_sample

shares = market_shares_from_counts({146: 6_500_000, 1068: 2_400_000, 1479: 1_100_000,
                                    1636: 700_000, 3775: 300_000})
print({k: round(v, 4) for k, v in shares.shares.items()})

# %% Quotas for 25 draws sum exactly to 25.
q = largest_remainder(shares.shares, 25)
print(q, sum(q.values()))

# %% Draw from per-registrar pools; the same seed gives the same sample.
pool = {k: [f"site{i:03d}-{k}.com" for i in range(40)] for k in shares.shares}
a = stratified_sample(pool, shares, 25, seed=2024)
b = stratified_sample(pool, shares, 25, seed=2024)
print(a.to_text() == b.to_text())
print(a.to_text()[:200])
