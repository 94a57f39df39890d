"""Benign-baseline sampling stratified by registrar market share."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class NegativeCount(ValueError):
    pass


class EmptyReport(ValueError):
    pass


class InsufficientPool(ValueError):
    pass


@dataclass(frozen=True)
class MarketShareTable:
    shares: Mapping[int, float]
    as_of: str | None = None

    def __getitem__(self, registrar):
        return self.shares.get(registrar, 0.0)

    def __len__(self):
        return len(self.shares)


def market_shares_from_counts(counts: Mapping[int, float], as_of=None) -> MarketShareTable:
    if not counts:
        raise EmptyReport("no registrars in report")
    if any(c < 0 for c in counts.values()):
        raise NegativeCount("domain counts must be non-negative")
    total = float(sum(counts.values()))
    if total <= 0:
        raise EmptyReport("report has zero domains")
    return MarketShareTable({k: c / total for k, c in counts.items()}, as_of)


def load_market_shares(report_csv, as_of: str | None = None) -> MarketShareTable:
    """Registrar shares from a ``registrar_iana,domain_count`` CSV.

    Rows repeating a registrar (e.g. one per gTLD) are summed.
    """
    text = Path(report_csv).read_text(encoding="utf-8")
    counts: dict[int, float] = {}
    for row in csv.DictReader(io.StringIO(text)):
        c = float(row["domain_count"])
        if c < 0:
            raise NegativeCount(f"registrar {row['registrar_iana']}: {c}")
        iana = int(row["registrar_iana"])
        counts[iana] = counts.get(iana, 0.0) + c
    return market_shares_from_counts(counts, as_of)


def largest_remainder(weights: Mapping, n: int) -> dict:
    """Hamilton apportionment of `n` seats proportional to `weights`.

    Leftover seats go to the largest fractional remainders; ties are broken
    by larger weight, then by key.
    """
    keys = [k for k, w in weights.items() if w > 0]
    if n < 0:
        raise ValueError("n must be non-negative")
    if not keys:
        if n:
            raise ValueError("no positive weights to apportion over")
        return {}
    total = math.fsum(weights[k] for k in keys)
    exact = {k: n * weights[k] / total for k in keys}
    quotas = {k: int(math.floor(exact[k])) for k in keys}
    left = n - sum(quotas.values())
    order = sorted(keys, key=lambda k: (-(exact[k] - quotas[k]), -weights[k], k))
    for k in order[:left]:
        quotas[k] += 1
    return quotas


def apportion_capped(shares: Mapping, sizes: Mapping, n: int) -> dict:
    """Largest-remainder quotas capped by stratum size, surplus redistributed."""
    quotas: dict = {}
    active = {k: shares[k] for k in shares if shares[k] > 0 and sizes.get(k, 0) > 0}
    remaining = n
    while active:
        q = largest_remainder(active, remaining)
        over = [k for k in active if q[k] > sizes[k]]
        if not over:
            quotas.update(q)
            break
        for k in over:
            quotas[k] = sizes[k]
            remaining -= sizes[k]
            del active[k]
    for k in shares:
        quotas.setdefault(k, 0)
    return quotas


@dataclass
class StratifiedSample:
    quotas: dict
    sample: list  # (registrar, domain) pairs sorted

    def domains(self) -> list:
        return [d for _, d in self.sample]

    def to_text(self) -> str:
        return "".join(f"{r},{d}\n" for r, d in self.sample)


def stratified_sample(pool: Mapping[int, Iterable[str]], shares: MarketShareTable,
                      n: int, seed: int) -> StratifiedSample:
    """Draw `n` domains with per-registrar quotas proportional to market share.

    Within a stratum domains are drawn uniformly without replacement with a
    generator seeded from ``(seed, registrar)``, so a stratum's draw does not
    depend on which other strata are present.
    """
    strata = {k: sorted(set(v)) for k, v in pool.items()}
    strata = {k: v for k, v in strata.items() if v and shares[k] > 0}
    available = sum(len(v) for v in strata.values())
    if available < n:
        raise InsufficientPool(f"pool holds {available} eligible domains, need {n}")
    if n < len(strata):
        raise ValueError(f"n={n} is smaller than the number of strata ({len(strata)})")
    quotas = apportion_capped({k: shares[k] for k in strata},
                              {k: len(v) for k, v in strata.items()}, n)
    sample = []
    for k in sorted(strata):
        q = quotas[k]
        if q == 0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                           spawn_key=(int(k),)))
        idx = rng.choice(len(strata[k]), size=q, replace=False)
        sample.extend((k, strata[k][i]) for i in sorted(idx))
    return StratifiedSample(quotas, sample)
