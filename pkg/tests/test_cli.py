import json

import numpy as np
import pytest

from phishreg.artifacts import read_ndjson
from phishreg.cli import latest, load_config, main, UsageError
from phishreg.features import (CountRow, EngineeredFeatures, FeatureRow, count_table_csv,
                               domain_rows_csv)
from conftest import FIXTURES
from oracles import nb

CONFIG = str(FIXTURES / "pipeline" / "config.json")
PIPELINE = ["ingest", "regdata", "probe", "classify", "uptime", "features", "sample", "report"]


def run(*args):
    return main(list(args))


def _feature_rows(X):
    # X columns follow the model-feature order; booleans must be 0/1
    return [EngineeredFeatures.from_vector(r) for r in X]


def synthetic_count_table(tmp_path, seed=0, collinear=False):
    X, y, _ = nb.simulate_nb2(seed, n=300)
    F = X[:, 1:].copy()
    F[:, :3] = (F[:, :3] > 0.5)
    F[:, 3:5] = np.abs(np.round(F[:, 3:5] * 2))
    F[:, 5:10] = (F[:, 5:10] > 0.5)
    if collinear:
        F[:, 2] = F[:, 0]
    rows = [CountRow(i, "com", int(c), x) for i, (c, x) in enumerate(zip(y, _feature_rows(F)))]
    path = tmp_path / "counts.csv"
    path.write_text(count_table_csv(rows))
    return path


def synthetic_domain_rows(tmp_path, seed=1):
    rng = np.random.default_rng(seed)
    n, R, T = 600, 6, 8
    F = np.column_stack([rng.integers(0, 2, (n, 3)), rng.integers(0, 4, (n, 2)),
                         rng.integers(0, 2, (n, 5)), rng.normal(size=(n, 4))])
    reg, tld = rng.integers(0, R, n), rng.integers(0, T, n)
    u, w = rng.normal(0, 0.6, R), rng.normal(0, 0.4, T)
    eta = -0.3 + 0.5 * F[:, 0] - 0.4 * F[:, 11] + u[reg] + w[tld]
    y = rng.random(n) < 1 / (1 + np.exp(-eta))
    rows = [FeatureRow(f"d{i}.t{tld[i]}", 100 + int(reg[i]), f"t{tld[i]}", bool(y[i]), x)
            for i, x in enumerate(_feature_rows(F))]
    path = tmp_path / "rows.csv"
    path.write_text(domain_rows_csv(rows))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("art")
    codes = [run(s, "--config", CONFIG, "--out", str(out)) for s in PIPELINE]
    return out, codes


def test_pipeline_exit_codes(pipeline):
    out, codes = pipeline
    assert codes == [0] * len(PIPELINE)
    summary = json.loads((latest(out, "classify") / "summary.json").read_text())
    assert summary["MaliciouslyRegistered"] == 2
    assert sum(summary.values()) == 6


def test_classify_artifacts(pipeline):
    out, _ = pipeline
    meta, recs = read_ndjson(latest(out, "classify") / "classified.ndjson")
    assert meta["seed"] == 0 and meta["tool"] == "phishreg" and len(meta["config_digest"]) == 16
    labels = {r["domain"]: r["label"] for r in recs}
    assert labels["chase03.com"] == "MaliciouslyRegistered"
    assert labels["bit.ly"] == "ExcludedShortener"
    assert labels["support-fb.sh"] == "NoRegistrationData"
    up = (latest(out, "uptime") / "uptime.csv").read_text()
    assert "1636,com,all,14400,1,0" in up


def test_report_plot_data(pipeline):
    out, _ = pipeline
    rep = latest(out, "report")
    for name in ("price_discount.csv", "free_features.csv", "uptime_cdf.csv",
                 "count_histogram.csv"):
        assert (rep / name).exists()
    assert (rep / "count_histogram.csv").read_text() == "malicious_count,pairs\n1,2\n"


def test_rerun_is_byte_identical_and_versioned(pipeline):
    out, _ = pipeline
    for stage in ("ingest", "regdata", "probe", "classify", "uptime", "features", "sample"):
        first = latest(out, stage)
        assert run(stage, "--config", CONFIG, "--out", str(out)) == 0
        second = latest(out, stage)
        assert second != first
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in second.iterdir())
        for n in names:
            if n != "status.json":
                assert (first / n).read_bytes() == (second / n).read_bytes(), (stage, n)


def test_seed_recorded_and_changes_sample(tmp_path):
    out = tmp_path / "a"
    for s in PIPELINE[:6]:
        assert run(s, "--config", CONFIG, "--out", str(out)) == 0
    assert run("sample", "--config", CONFIG, "--out", str(out), "--seed", "7") == 0
    meta, _ = read_ndjson(latest(out, "features").parent.parent / "ingest" / "v0001" /
                          "domains.ndjson")
    assert meta["seed"] == 0
    status = json.loads((latest(out, "sample") / "status.json").read_text())
    assert status["sampled"] == 6


def test_fit_glm_rank_deficient_exits_3(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count_table": str(synthetic_count_table(tmp_path,
                                                                       collinear=True))}))
    assert run("fit-glm", "--config", str(cfg), "--out", str(tmp_path / "o")) == 3
    err = capsys.readouterr().err
    assert "Free SSL cert" in err or "Free DNS" in err
    assert (tmp_path / "o" / "fit-glm" / "v0001" / "status.json").exists()


def test_fit_glm_and_mlm_then_report(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count_table": str(synthetic_count_table(tmp_path)),
                               "domain_rows": str(synthetic_domain_rows(tmp_path))}))
    out = str(tmp_path / "o")
    assert run("fit-glm", "--config", str(cfg), "--out", out) == 0
    assert run("fit-mlm", "--config", str(cfg), "--out", out) == 0
    assert run("report", "--config", str(cfg), "--out", out) == 0
    rep = latest(tmp_path / "o", "report")
    glm = (rep / "glm_coefficients.csv").read_text().splitlines()
    assert glm[0].endswith("exp_effect") and len(glm) == 16
    assert "ICC" in (rep / "mlm_summary.txt").read_text()
    assert (latest(tmp_path / "o", "fit-mlm") / "random_effects_registrar.csv").exists()


def test_usage_and_input_errors(tmp_path, capsys):
    assert run("nosuchstage") == 1
    assert run("classify", "--mode", "sideways") == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown_key": 1}')
    assert run("ingest", "--config", str(bad)) == 1
    missing = tmp_path / "missing.json"
    missing.write_text('{"regstore": "does/not/exist"}')
    assert run("ingest", "--config", str(missing)) == 2
    # downstream stage without its predecessor
    assert run("classify", "--config", CONFIG, "--out", str(tmp_path / "empty")) == 2


def test_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"seed": 5, "window_days": 30}')
    c = load_config(str(cfg), {"seed": 9})
    assert c["seed"] == 9 and c["window_days"] == 30 and c["monitor_days"] == 30
    assert load_config(str(cfg))["seed"] == 5
    with pytest.raises(UsageError):
        load_config(None, {"seed": -1})
