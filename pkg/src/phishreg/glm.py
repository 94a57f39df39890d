"""Negative binomial (NB2) regression with a log link, fitted by IRLS.

The variance function is ``mu + alpha * mu**2`` with `alpha` held fixed
during the IRLS loop.  :func:`profile_alpha` searches over `alpha` when it
should be estimated.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special, stats


class RankDeficient(ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("design matrix is rank deficient; collinear column(s): "
                         + ", ".join(self.columns))


class SeparationSuspected(RuntimeError):
    def __init__(self, columns, fit):
        self.columns = list(columns)
        self.fit = fit
        super().__init__("coefficient magnitude above 20 on binary column(s): "
                         + ", ".join(self.columns))


class MismatchedModels(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be n x p with n == len(y)")
        if len(self.names) != self.X.shape[1]:
            raise ValueError("one name per column required")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("design contains missing or non-finite values")
        n, p = self.X.shape
        if n <= p:
            raise ValueError(f"need more rows than columns (n={n}, p={p})")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise ValueError("counts must be non-negative integers")

    @property
    def shape(self):
        return self.X.shape


def check_rank(X: np.ndarray, names) -> None:
    """Raise RankDeficient naming the columns a pivoted QR leaves out."""
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0)
    rank = int(np.sum(d > tol))
    if rank < X.shape[1]:
        raise RankDeficient([names[j] for j in sorted(piv[rank:])])


# --------------------------------------------------------------------------
# NB2 family pieces
# --------------------------------------------------------------------------

def nb_deviance(y, mu, alpha) -> float:
    y = np.asarray(y, dtype=float)
    ylogy = special.xlogy(y, y) - special.xlogy(y, mu)
    if alpha == 0:
        return float(2 * np.sum(ylogy - (y - mu)))
    inv = 1.0 / alpha
    return float(2 * np.sum(ylogy - (y + inv) * (np.log1p(alpha * y) - np.log1p(alpha * mu))))


def nb_loglik(y, mu, alpha) -> float:
    y = np.asarray(y, dtype=float)
    if alpha == 0:
        return float(np.sum(special.xlogy(y, mu) - mu - special.gammaln(y + 1)))
    inv = 1.0 / alpha
    return float(np.sum(
        special.gammaln(y + inv) - special.gammaln(inv) - special.gammaln(y + 1)
        + special.xlogy(y, alpha * mu) - (y + inv) * np.log1p(alpha * mu)
    ))


def _mu(eta):
    return np.exp(np.clip(eta, -50.0, 50.0))


def _wls(X, z, w):
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(sw[:, None] * X)
    return linalg.solve_triangular(R, Q.T @ (sw * z)), R


# --------------------------------------------------------------------------
# Fit
# --------------------------------------------------------------------------

@dataclass
class GlmFit:
    names: list[str]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    ci95: np.ndarray
    alpha: float
    loglik: float
    deviance: float
    iterations: int
    converged: bool
    nobs: int
    y: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)
    pearson_chi2: float = math.nan
    deviance_history: list[float] = field(default_factory=list, repr=False)

    @property
    def df_model(self) -> int:
        return len(self.beta) - 1

    @property
    def df_resid(self) -> int:
        return self.nobs - len(self.beta)

    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.beta))


def _binary_columns(X, names):
    out = []
    for j, name in enumerate(names):
        col = X[:, j]
        if np.all(col == col[0]):
            continue
        if np.all((col == 0) | (col == 1)):
            out.append(j)
    return out


def fit_nb_glm(D: DesignMatrix, alpha: float = 1.0, tol: float = 1e-8,
               max_iter: int = 100, start: np.ndarray | None = None,
               check_separation: bool = True) -> GlmFit:
    """Fit an NB2 log-link GLM by iteratively reweighted least squares.

    Parameters
    ----------
    D : DesignMatrix
        Counts and predictors; the intercept column must be included.
    alpha : float
        Fixed NB2 dispersion; 0 gives Poisson regression.
    tol : float
        Convergence threshold on the absolute change in deviance.
    max_iter : int
        Iteration cap; on reaching it the last iterate is returned with
        ``converged=False`` and a :class:`ConvergenceWarning`.
    start : ndarray, optional
        Starting coefficients.

    Returns
    -------
    GlmFit

    Notes
    -----
    Each step solves the weighted least-squares problem with working
    response ``eta + (y - mu) / mu`` and weights ``mu / (1 + alpha * mu)``
    through a QR factorization.  A step that raises the deviance is halved
    until it does not.  Standard errors come from the inverse of
    ``X' W X`` at the final iterate.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    X, y = D.X, D.y
    check_rank(X, D.names)

    if start is None:
        mu = (y + y.mean()) / 2.0
        eta = np.log(mu)
        w = mu / (1 + alpha * mu)
        beta, _ = _wls(X, eta + (y - mu) / mu, w)
    else:
        beta = np.asarray(start, dtype=float).copy()
    eta = X @ beta
    mu = _mu(eta)
    dev = nb_deviance(y, mu, alpha)
    history = [dev]

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mu / (1 + alpha * mu)
        new, _ = _wls(X, eta + (y - mu) / mu, w)
        new_mu = _mu(X @ new)
        new_dev = nb_deviance(y, new_mu, alpha)
        halvings = 0
        while not new_dev <= dev and halvings < 50:
            new = 0.5 * (beta + new)
            new_mu = _mu(X @ new)
            new_dev = nb_deviance(y, new_mu, alpha)
            halvings += 1
        if not new_dev <= dev:
            # no descent direction left at machine precision
            converged = abs(dev - new_dev) < tol
            break
        change = dev - new_dev
        beta, mu, dev = new, new_mu, new_dev
        eta = X @ beta
        history.append(dev)
        if change < tol:
            converged = True
            break

    if not converged:
        warnings.warn(f"IRLS did not converge in {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)

    w = mu / (1 + alpha * mu)
    _, R = _wls(X, np.zeros_like(y), w)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    cov = Rinv @ Rinv.T
    se = np.sqrt(np.diag(cov))
    z = beta / se
    pvals = 2 * stats.norm.sf(np.abs(z))
    ci = np.column_stack([beta - 1.96 * se, beta + 1.96 * se])

    fit = GlmFit(
        names=list(D.names), beta=beta, se=se, z=z, p_values=pvals, ci95=ci,
        alpha=float(alpha), loglik=nb_loglik(y, mu, alpha), deviance=dev,
        iterations=it, converged=converged, nobs=len(y), y=y.copy(), mu=mu, cov=cov,
        pearson_chi2=float(np.sum((y - mu) ** 2 / (mu + alpha * mu ** 2))),
        deviance_history=history,
    )
    if check_separation:
        bad = [D.names[j] for j in _binary_columns(X, D.names) if abs(beta[j]) > 20]
        if bad:
            raise SeparationSuspected(bad, fit)
    return fit


def fit_null(D: DesignMatrix, alpha: float = 1.0, **kw) -> GlmFit:
    """Intercept-only fit on the same counts."""
    X = np.ones((len(D.y), 1))
    return fit_nb_glm(DesignMatrix(X, D.y, ["Intercept"]), alpha=alpha, **kw)


def score(fit: GlmFit, X: np.ndarray) -> np.ndarray:
    """Score vector ``X' (y - mu) / (1 + alpha mu)`` at the fitted values."""
    return X.T @ ((fit.y - fit.mu) / (1 + fit.alpha * fit.mu))


def profile_alpha(D: DesignMatrix, grid=None, tol: float = 1e-8, max_iter: int = 100,
                  refine: bool = True) -> tuple[GlmFit, dict[float, float]]:
    """Profile-likelihood estimate of `alpha`.

    The log-likelihood is evaluated on a log-spaced grid; the best grid
    point is then refined by golden-section search on ``log(alpha)``.
    Returns the fit at the selected alpha and the ``{alpha: loglik}``
    profile that was evaluated.
    """
    grid = np.logspace(-3, 1, 17) if grid is None else np.asarray(grid, dtype=float)
    profile: dict[float, float] = {}

    def negll(log_a):
        a = float(np.exp(log_a))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            f = fit_nb_glm(D, alpha=a, tol=tol, max_iter=max_iter, check_separation=False)
        profile[a] = f.loglik
        return -f.loglik

    logs = np.log(grid)
    vals = [negll(v) for v in logs]
    i = int(np.argmin(vals))
    best = logs[i]
    if refine and 0 < i < len(logs) - 1:
        res = optimize.minimize_scalar(negll, bracket=(logs[i - 1], logs[i], logs[i + 1]),
                                       method="golden", tol=1e-6)
        if res.fun <= vals[i]:
            best = res.x
    fit = fit_nb_glm(D, alpha=float(np.exp(best)), tol=tol, max_iter=max_iter)
    return fit, dict(sorted(profile.items()))


# --------------------------------------------------------------------------
# Interpretation
# --------------------------------------------------------------------------

def pseudo_r2_cs(fit: GlmFit, null_fit: GlmFit, n: int | None = None) -> float:
    """Cox-Snell pseudo R-squared ``1 - exp(2/n * (ll_null - ll_full))``."""
    if fit.y.shape != null_fit.y.shape or not np.array_equal(fit.y, null_fit.y):
        raise MismatchedModels("full and null fits were estimated on different counts")
    n = fit.nobs if n is None else n
    return 1.0 - math.exp((2.0 / n) * (null_fit.loglik - fit.loglik))


def exp_effect(coef: float, digits: int | None = 1) -> float:
    """Percent change in the outcome for a one-unit increase.

    Rounded to `digits` decimals; ``digits=None`` returns the exact value.
    """
    pct = (math.exp(coef) - 1.0) * 100.0
    return pct if digits is None else round(pct, digits)


@dataclass
class CoefficientTable:
    header: list[tuple[str, str]]
    rows: list[dict]
    converged: bool = True

    COLUMNS = ("name", "coef", "std_err", "z", "p", "ci_low", "ci_high", "exp_effect")

    def to_csv(self) -> str:
        from .artifacts import csv_text
        return csv_text(list(self.COLUMNS), ([r[c] for c in self.COLUMNS] for r in self.rows))

    def to_text(self) -> str:
        lines = []
        if not self.converged:
            lines.append("WARNING: estimator did not converge; estimates are the last iterate")
        width = max(len(k) for k, _ in self.header) if self.header else 0
        lines += [f"{k + ':':<{width + 1}} {v}" for k, v in self.header]
        name_w = max([len(r["name"]) for r in self.rows] + [4])
        lines.append("")
        lines.append(f"{'':<{name_w}} {'coef':>10} {'std err':>10} {'z':>9} {'P>|z|':>7} "
                     f"{'[0.025':>10} {'0.975]':>10} {'effect %':>9}")
        for r in self.rows:
            lines.append(f"{r['name']:<{name_w}} {r['coef']:>10.4f} {r['std_err']:>10.4g} "
                         f"{r['z']:>9.3f} {r['p']:>7.3f} {r['ci_low']:>10.4g} "
                         f"{r['ci_high']:>10.4g} {r['exp_effect']:>+9.1f}")
        return "\n".join(lines) + "\n"


def coefficient_rows(names, beta, se, z, p, ci) -> list[dict]:
    return [dict(name=n, coef=float(b), std_err=float(s), z=float(zz), p=float(pp),
                 ci_low=float(c[0]), ci_high=float(c[1]), exp_effect=exp_effect(b))
            for n, b, s, zz, pp, c in zip(names, beta, se, z, p, ci)]


def summarize(fit: GlmFit, null_fit: GlmFit | None = None,
              dep_variable: str = "malicious") -> CoefficientTable:
    header = [
        ("Dep. Variable", dep_variable),
        ("Model", "GLM"),
        ("Model Family", "NegativeBinomial"),
        ("Link Function", "Log"),
        ("Method", "IRLS"),
        ("No. Observations", str(fit.nobs)),
        ("Df Residuals", str(fit.df_resid)),
        ("Df Model", str(fit.df_model)),
        ("Alpha", f"{fit.alpha:.4f}"),
        ("Scale", "1.0000"),
        ("Log-Likelihood", f"{fit.loglik:.1f}"),
        ("Deviance", f"{fit.deviance:.1f}"),
        ("Pearson chi2", f"{fit.pearson_chi2:.3g}"),
        ("No. Iterations", str(fit.iterations)),
    ]
    if null_fit is not None:
        header.append(("Pseudo R-squ. (CS)", f"{pseudo_r2_cs(fit, null_fit):.4f}"))
    rows = coefficient_rows(fit.names, fit.beta, fit.se, fit.z, fit.p_values, fit.ci95)
    return CoefficientTable(header, rows, fit.converged)
