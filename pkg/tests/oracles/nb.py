"""Direct-likelihood oracles for count regressions.

`polish` maximizes the NB2 log-likelihood written with scipy.stats and a
derivative-free search; `poisson_newton` is Newton-Raphson on the Poisson
score using the normal equations.  Neither shares code with the IRLS fitter.
"""
import numpy as np
from scipy import optimize, stats


def nb2_loglik(beta, X, y, alpha):
    mu = np.exp(X @ beta)
    r = 1.0 / alpha
    return float(np.sum(stats.nbinom.logpmf(y, r, r / (r + mu))))


def polish(beta0, X, y, alpha):
    res = optimize.minimize(lambda b: -nb2_loglik(b, X, y, alpha), np.asarray(beta0, float),
                            method="Powell", options=dict(xtol=1e-10, ftol=1e-13, maxfev=200000))
    return res.x, -res.fun


def poisson_newton(X, y, tol=1e-13, max_iter=200):
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(y.mean())
    for _ in range(max_iter):
        mu = np.exp(X @ beta)
        step = np.linalg.solve(X.T @ (mu[:, None] * X), X.T @ (y - mu))
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def simulate_nb2(seed, n=1066, p=14, alpha=1.0):
    """Intercept plus `p` predictors (half binary, half standard normal)."""
    rng = np.random.default_rng(seed)
    nb = p // 2
    Xb = rng.integers(0, 2, size=(n, nb)).astype(float)
    Xc = rng.normal(size=(n, p - nb))
    X = np.column_stack([np.ones(n), Xb, Xc])
    beta = np.r_[1.0, np.linspace(-0.4, 0.4, nb), np.linspace(0.3, -0.3, p - nb)]
    mu = np.exp(X @ beta)
    lam = rng.gamma(shape=1.0 / alpha, scale=alpha * mu)
    y = rng.poisson(lam).astype(float)
    return X, y, beta
