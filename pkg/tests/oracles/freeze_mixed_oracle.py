"""Generate the 4x5 crossed fixture and freeze the quadrature-oracle fit.

Run once: ``python3 tests/oracles/freeze_mixed_oracle.py``.  Writes
``tests/fixtures/mixed_crossed.json`` holding both the data and the oracle.
"""
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from oracles import ghq  # noqa: E402

R, T, PER_CELL = 4, 5, 20
BETA = np.array([-0.4, 0.7, -0.5])
TAU2_REG, TAU2_TLD = 0.25, 0.09


def make_data(seed=20240611):
    rng = np.random.default_rng(seed)
    g_reg = np.repeat(np.arange(R), T * PER_CELL)
    g_tld = np.tile(np.repeat(np.arange(T), PER_CELL), R)
    n = len(g_reg)
    X = np.column_stack([np.ones(n), rng.normal(size=n), rng.integers(0, 2, n)]).astype(float)
    u = rng.normal(0, np.sqrt(TAU2_REG), R)
    w = rng.normal(0, np.sqrt(TAU2_TLD), T)
    eta = X @ BETA + u[g_reg] + w[g_tld]
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return X, y, g_reg, g_tld


def main():
    X, y, g_reg, g_tld = make_data()
    x0 = np.r_[BETA, np.log(TAU2_REG), np.log(TAU2_TLD)]
    out = ghq.fit(X, y, g_reg, g_tld, x0, k_reg=16, k_tld=30)
    check = ghq.marginal_loglik(np.array(out["beta"]), out["tau2_reg"], out["tau2_tld"],
                                X, y, g_reg, g_tld, k_reg=28, k_tld=60)
    out["loglik_refined_grid"] = check
    payload = dict(
        X=X.tolist(), y=y.tolist(), g_reg=g_reg.tolist(), g_tld=g_tld.tolist(),
        names=["Intercept", "x1", "x2"], true_beta=BETA.tolist(),
        true_tau2=[TAU2_REG, TAU2_TLD], oracle=out,
    )
    dest = Path(__file__).resolve().parents[1] / "fixtures" / "mixed_crossed.json"
    dest.write_text(json.dumps(payload, indent=1))
    print(json.dumps(out, indent=1))


if __name__ == "__main__":
    main()
