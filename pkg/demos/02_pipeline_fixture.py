"""The measurement pipeline end to end, on recorded fixtures.

Each stage is a CLI subcommand that reads its predecessors' artifacts and
writes a new version directory.  Fixture mode replays stored WHOIS/RDAP
documents and recorded DNS answers, so the run is fully reproducible.
"""
# %%
import json
import tempfile
from pathlib import Path

from phishreg.artifacts import read_ndjson
from phishreg.cli import latest, main

ROOT = Path(__file__).resolve().parents[1]
CONFIG = str(ROOT / "tests" / "fixtures" / "pipeline" / "config.json")
out = Path(tempfile.mkdtemp(prefix="phishreg-"))

# %% Run the stages in order; every one should exit 0.
for stage in ("ingest", "regdata", "probe", "classify", "uptime", "features", "sample",
              "report"):
    code = main([stage, "--config", CONFIG, "--out", str(out)])
    assert code == 0, stage

# %% The classification funnel.
print(json.loads((latest(out, "classify") / "summary.json").read_text()))
for rec in read_ndjson(latest(out, "classify") / "classified.ndjson")[1]:
    print(f"  {rec['domain']:28s} {rec['label']}")

# %% Median uptime per registrar and TLD, split by notification.
print((latest(out, "uptime") / "uptime.csv").read_text())

# %% Model-ready rows: malicious domains plus a market-share weighted benign sample.
print((latest(out, "sample") / "domain_rows.csv").read_text().splitlines()[0])
print("report files:", sorted(p.name for p in latest(out, "report").iterdir()))
print("artifacts under", out)
