import math
import time
import warnings

import numpy as np
import pytest

from phishreg.glm import (
    ConvergenceWarning, DesignMatrix, MismatchedModels, RankDeficient, SeparationSuspected,
    exp_effect, fit_nb_glm, fit_null, profile_alpha, pseudo_r2_cs, score, summarize,
)
from oracles import nb

NAMES = ["Intercept"] + [f"x{i}" for i in range(1, 15)]


@pytest.fixture(scope="module")
def sim():
    X, y, beta = nb.simulate_nb2(2024)
    D = DesignMatrix(X, y, NAMES)
    return D, beta, fit_nb_glm(D)


def test_matches_direct_likelihood_oracle(sim):
    D, _, fit = sim
    b_or, ll_or = nb.polish(fit.beta, D.X, D.y, 1.0)
    np.testing.assert_allclose(fit.beta, b_or, atol=1e-5)
    assert fit.loglik == pytest.approx(nb.nb2_loglik(fit.beta, D.X, D.y, 1.0), abs=1e-8)
    assert fit.loglik >= ll_or - 1e-8


def test_poisson_limit():
    X, y, _ = nb.simulate_nb2(5, n=500, p=6, alpha=0.05)
    D = DesignMatrix(X, y, NAMES[:7])
    ref = nb.poisson_newton(X, y)
    for a in (1e-10, 0.0):
        fit = fit_nb_glm(D, alpha=a, tol=1e-12)
        np.testing.assert_allclose(fit.beta, ref, atol=1e-6)


def test_intercept_only_closed_form():
    y = np.array([0, 1, 4, 2, 7, 3, 0, 5], float)
    fit = fit_nb_glm(DesignMatrix(np.ones((8, 1)), y, ["Intercept"]))
    assert fit.beta[0] == pytest.approx(math.log(y.mean()), abs=1e-10)


def test_fit_invariants(sim):
    D, beta, fit = sim
    assert fit.converged and fit.nobs == 1066 and fit.df_model == 14
    assert np.all(np.diff(fit.deviance_history) <= 1e-12)
    assert abs(fit.deviance_history[-2] - fit.deviance_history[-1]) < 1e-8
    np.testing.assert_allclose(fit.ci95[:, 0], fit.beta - 1.96 * fit.se)
    np.testing.assert_allclose(fit.ci95[:, 1], fit.beta + 1.96 * fit.se)
    assert np.max(np.abs(score(fit, D.X))) < 1e-6 * len(D.y)
    assert np.all(np.abs(fit.beta - beta) < 3 * fit.se)


def test_row_permutation(sim):
    D, _, fit = sim
    idx = np.random.default_rng(0).permutation(len(D.y))
    other = fit_nb_glm(DesignMatrix(D.X[idx], D.y[idx], NAMES))
    np.testing.assert_allclose(other.beta, fit.beta, atol=1e-10)


def test_standard_errors_match_observed_information(sim):
    # Fisher and observed information coincide in expectation; on one sample
    # the finite-difference observed SEs should agree to a few percent
    D, _, fit = sim
    h, k = 1e-4, len(fit.beta)
    f = lambda b: nb.nb2_loglik(b, D.X, D.y, 1.0)
    E = np.eye(k) * h
    H = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            H[i, j] = H[j, i] = (f(fit.beta + E[i] + E[j]) - f(fit.beta + E[i] - E[j])
                                 - f(fit.beta - E[i] + E[j]) + f(fit.beta - E[i] - E[j])) / (4 * h * h)
    obs_se = np.sqrt(np.diag(np.linalg.inv(-H)))
    np.testing.assert_allclose(fit.se, obs_se, rtol=0.05)


def test_statsmodels_cross_check(sim):
    sm = pytest.importorskip("statsmodels.api")
    D, _, fit = sim
    ref = sm.GLM(D.y, D.X, family=sm.families.NegativeBinomial(alpha=1.0)).fit(tol=1e-12)
    np.testing.assert_allclose(fit.beta, ref.params, atol=1e-6)
    np.testing.assert_allclose(fit.se, ref.bse, rtol=1e-5)


def test_rank_deficient_names_columns():
    X, y, _ = nb.simulate_nb2(1, n=200, p=4)
    X = np.column_stack([X, X[:, 1] + X[:, 2]])
    with pytest.raises(RankDeficient) as exc:
        fit_nb_glm(DesignMatrix(X, y, ["Intercept", "a", "b", "c", "d", "a_plus_b"]))
    assert len(exc.value.columns) == 1
    assert exc.value.columns[0] in {"a", "b", "a_plus_b"}


def test_separation_suspected():
    n = 60
    flag = np.r_[np.ones(10), np.zeros(n - 10)]
    y = np.where(flag == 1, 0.0, np.arange(n) % 5 + 1.0)
    X = np.column_stack([np.ones(n), flag])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        with pytest.raises(SeparationSuspected) as exc:
            fit_nb_glm(DesignMatrix(X, y, ["Intercept", "flag"]), max_iter=200)
    assert exc.value.columns == ["flag"]
    assert exc.value.fit.beta[1] < -20


def test_non_convergence_returns_last_iterate(sim):
    D, _, _ = sim
    with pytest.warns(ConvergenceWarning):
        fit = fit_nb_glm(D, max_iter=1)
    assert not fit.converged and fit.iterations == 1
    assert "did not converge" in summarize(fit).to_text()


def test_design_validation():
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((3, 1)), [1, -1, 2], ["Intercept"])
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((3, 1)), [1, 1.5, 2], ["Intercept"])
    with pytest.raises(ValueError):
        DesignMatrix(np.ones((2, 2)), [1, 2], ["a", "b"])
    with pytest.raises(ValueError):
        DesignMatrix(np.array([[1.0], [np.nan], [1.0]]), [1, 2, 3], ["a"])


def test_cox_snell(sim):
    D, _, fit = sim
    null = fit_null(D)
    assert pseudo_r2_cs(null, null) == 0.0
    r2 = pseudo_r2_cs(fit, null)
    assert 0 <= r2 < 1
    assert r2 == pytest.approx(1 - math.exp(2 / 1066 * (null.loglik - fit.loglik)))
    other = fit_null(DesignMatrix(D.X, D.y + 1, NAMES))
    with pytest.raises(MismatchedModels):
        pseudo_r2_cs(fit, other)


@pytest.mark.parametrize("coef,pct", [(0.3979, 48.9), (0.0, 0.0), (-1.0053, -63.4),
                                      (1.6080, 399.3), (0.6323, 88.2), (0.0676, 7.0)])
def test_exp_effect(coef, pct):
    assert exp_effect(coef) == pct


def test_summarize_layout(sim):
    D, _, fit = sim
    t = summarize(fit, fit_null(D))
    assert t.to_csv().splitlines()[0] == "name,coef,std_err,z,p,ci_low,ci_high,exp_effect"
    text = t.to_text()
    for key in ("Model Family:", "NegativeBinomial", "Link Function:", "Method:", "IRLS",
                "No. Observations", "Df Model", "Pseudo R-squ. (CS):"):
        assert key in text
    assert len(t.rows) == 15


def test_profile_alpha_recovers_dispersion():
    X, y, _ = nb.simulate_nb2(9, n=3000, p=4, alpha=0.5)
    fit, prof = profile_alpha(DesignMatrix(X, y, NAMES[:5]))
    assert 0.4 < fit.alpha < 0.6
    assert fit.loglik >= max(prof.values()) - 1e-9


def test_small_coverage_run():
    hits, total = 0, 0
    for seed in range(20):
        X, y, beta = nb.simulate_nb2(1000 + seed)
        t = time.perf_counter()
        fit = fit_nb_glm(DesignMatrix(X, y, NAMES))
        assert time.perf_counter() - t < 10
        hits += int(np.sum((fit.ci95[:, 0] <= beta) & (beta <= fit.ci95[:, 1])))
        total += len(beta)
    assert 0.88 <= hits / total <= 0.995
