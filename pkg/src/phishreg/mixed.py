r"""Logistic regression with crossed random intercepts, fitted by Laplace approximation.

Model
-----
For observation ``i`` in registrar group ``a(i)`` and TLD group ``b(i)``

.. math::

    \mathrm{logit}\, P(y_i = 1) = x_i^\top \beta + u_{a(i)} + w_{b(i)},
    \quad u \sim N(0, \tau^2_{reg} I),\ w \sim N(0, \tau^2_{tld} I)

Both factors are handled in one penalized system with spherical random
effects ``v`` (``u = tau * v``).  For fixed ``(beta, tau)`` an inner Newton
solve finds the mode ``v_hat``; the Laplace log-likelihood is

.. math::

    \ell(y \mid \hat\eta) - \tfrac12 \|\hat v\|^2
    - \tfrac12 \log\det(I + \Lambda Z^\top W Z \Lambda)

which an outer L-BFGS-B search maximizes over ``beta`` and the log
variances, using the analytic gradient.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse, special, stats

from .glm import ConvergenceWarning, check_rank, coefficient_rows

LATENT_LOGISTIC_VARIANCE = math.pi ** 2 / 3
LOG_TAU2_BOUNDS = (-18.0, 8.0)


class BoundaryVariance(UserWarning):
    """A variance component converged to the zero boundary."""


class AllZeroVariances(ValueError):
    pass


class NotConverged(RuntimeError):
    """Outer search stopped without convergence; the last iterate is in ``fit``."""

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


@dataclass
class MixedDesign:
    X: np.ndarray
    y: np.ndarray
    g_reg: np.ndarray
    g_tld: np.ndarray
    names: list[str]
    reg_labels: list = field(default_factory=list)
    tld_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.g_reg = np.asarray(self.g_reg, dtype=int)
        self.g_tld = np.asarray(self.g_tld, dtype=int)
        n = self.X.shape[0]
        if not (len(self.y) == len(self.g_reg) == len(self.g_tld) == n):
            raise ValueError("X, y and group vectors must have equal length")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("y must be binary")
        for g, labels, what in ((self.g_reg, self.reg_labels, "registrar"),
                                (self.g_tld, self.tld_labels, "TLD")):
            k = int(g.max()) + 1 if n else 0
            if g.min() < 0 or len(np.unique(g)) != k:
                raise ValueError(f"{what} indices must cover 0..k-1 without gaps")
        if not self.reg_labels:
            self.reg_labels = list(range(self.n_reg))
        if not self.tld_labels:
            self.tld_labels = list(range(self.n_tld))

    @property
    def n_reg(self) -> int:
        return int(self.g_reg.max()) + 1

    @property
    def n_tld(self) -> int:
        return int(self.g_tld.max()) + 1

    @classmethod
    def from_labels(cls, X, y, reg, tld, names) -> "MixedDesign":
        reg_labels, g_reg = np.unique(np.asarray(reg, dtype=object).astype(str),
                                      return_inverse=True)
        tld_labels, g_tld = np.unique(np.asarray(tld, dtype=object).astype(str),
                                      return_inverse=True)
        return cls(X, y, g_reg, g_tld, list(names), list(reg_labels), list(tld_labels))


@dataclass
class MixedFit:
    names: list[str]
    beta: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p_values: np.ndarray
    ci95: np.ndarray
    tau2_reg: float
    tau2_tld: float
    u_reg: np.ndarray
    u_tld: np.ndarray
    loglik: float
    converged: bool
    boundary_reg: bool = False
    boundary_tld: bool = False
    iterations: int = 0
    nobs: int = 0
    loglik_corrected: float = math.nan
    reg_labels: list = field(default_factory=list)
    tld_labels: list = field(default_factory=list)
    objective_history: list[float] = field(default_factory=list, repr=False)


# --------------------------------------------------------------------------
# Laplace objective
# --------------------------------------------------------------------------

class LaplaceObjective:
    """Laplace-approximated marginal log-likelihood and its gradient.

    Parameters are packed as ``[beta..., log tau2_reg, log tau2_tld]``.
    The inner mode is warm-started from the previous evaluation.
    """

    def __init__(self, D: MixedDesign, inner_tol: float = 1e-10, inner_max: int = 100):
        self.D = D
        self.X, self.y = D.X, D.y
        self.n, self.p = D.X.shape
        self.q1, self.q2 = D.n_reg, D.n_tld
        self.q = self.q1 + self.q2
        self.a = D.g_reg
        self.b = D.g_tld + self.q1
        rows = np.repeat(np.arange(self.n), 2)
        cols = np.column_stack([self.a, self.b]).ravel()
        self.Z = sparse.csr_matrix((np.ones(2 * self.n), (rows, cols)), shape=(self.n, self.q))
        self.ZT = self.Z.T.tocsr()
        self.mask = [np.r_[np.ones(self.q1), np.zeros(self.q2)],
                     np.r_[np.zeros(self.q1), np.ones(self.q2)]]
        self.inner_tol = inner_tol
        self.inner_max = inner_max
        self._v = np.zeros(self.q)

    # -- helpers ------------------------------------------------------------

    def lam(self, log_tau2) -> np.ndarray:
        tau = np.exp(0.5 * np.asarray(log_tau2, dtype=float))
        return np.r_[np.full(self.q1, tau[0]), np.full(self.q2, tau[1])]

    def _cross(self, W) -> np.ndarray:
        return (self.ZT @ sparse.diags(W) @ self.Z).toarray()

    def _loglik(self, eta) -> float:
        return float(np.sum(self.y * eta - np.logaddexp(0.0, eta)))

    def inner(self, beta, lam, v0=None):
        """Mode of the penalized log-likelihood over the spherical effects."""
        off = self.X @ beta
        v = self._v.copy() if v0 is None else np.asarray(v0, dtype=float).copy()

        def h(vv):
            eta = off + self.Z @ (lam * vv)
            return self._loglik(eta) - 0.5 * vv @ vv, eta

        cur, eta = h(v)
        for _ in range(self.inner_max):
            mu = special.expit(eta)
            W = mu * (1 - mu)
            g = lam * (self.ZT @ (self.y - mu)) - v
            if np.max(np.abs(g)) < self.inner_tol:
                break
            H = np.eye(self.q) + lam[:, None] * self._cross(W) * lam[None, :]
            step = linalg.cho_solve(linalg.cho_factor(H), g)
            t = 1.0
            while True:
                cand = v + t * step
                val, eta_c = h(cand)
                if val >= cur - 1e-12 * abs(cur) or t < 1e-8:
                    break
                t *= 0.5
            v, cur, eta = cand, val, eta_c
        return v, eta

    # -- value and gradient -------------------------------------------------

    def evaluate(self, params, gradient: bool = True):
        beta = np.asarray(params[:self.p], dtype=float)
        psi = np.asarray(params[self.p:], dtype=float)
        lam = self.lam(psi)
        v, eta = self.inner(beta, lam)
        self._v = v
        mu = special.expit(eta)
        W = mu * (1 - mu)
        C = self._cross(W)
        H = np.eye(self.q) + lam[:, None] * C * lam[None, :]
        cf = linalg.cho_factor(H)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        value = self._loglik(eta) - 0.5 * v @ v - 0.5 * logdet
        if not gradient:
            return value, None, v

        r = self.y - mu
        dW = W * (1 - 2 * mu)
        Hinv = linalg.cho_solve(cf, np.eye(self.q))
        B = lam[:, None] * Hinv * lam[None, :]
        s = B[self.a, self.a] + B[self.b, self.b] + 2 * B[self.a, self.b]
        c = s * dW

        # beta: envelope term plus the log-determinant's dependence on eta
        M = lam[:, None] * (self.ZT @ (W[:, None] * self.X))
        deta_db = self.X - self.Z @ (lam[:, None] * (Hinv @ M))
        g_beta = self.X.T @ r - 0.5 * deta_db.T @ c

        Zr = self.ZT @ r
        CLH = C @ (lam[:, None] * Hinv)
        g_psi = np.empty(2)
        tau = np.exp(0.5 * psi)
        for j in range(2):
            e = self.mask[j]
            ev = e * v
            d_first = float(Zr @ ev)
            dg = e * Zr - lam * (C @ ev)
            dv = Hinv @ dg
            deta = self.Z @ ev + self.Z @ (lam * dv)
            d_logdet = -float(np.sum(np.diag(CLH) * e)) - 0.5 * float(c @ deta)
            g_psi[j] = (d_first + d_logdet) * tau[j] / 2.0
        return value, np.r_[g_beta, g_psi], v


def laplace_correction(obj: LaplaceObjective, params, max_cells: int = 5000) -> float:
    """Fourth-order correction to the Laplace log-likelihood at `params`.

    Adds the leading terms of the expansion of the integrand about its mode,
    ``g4 S S / 8 + g3 g3 S S S / 8 + g3 g3 S S S / 12``, where ``S`` is the
    inverse negative Hessian.  Because every row of ``Z`` is determined by
    its registrar x TLD cell, the sums run over cells rather than rows.
    Returns NaN when there are more than `max_cells` occupied cells.
    """
    p = obj.p
    lam = obj.lam(params[p:])
    value, _, v = obj.evaluate(params, gradient=False)
    eta = obj.X @ np.asarray(params[:p]) + obj.Z @ (lam * v)
    mu = special.expit(eta)
    W = mu * (1 - mu)
    d3 = -W * (1 - 2 * mu)
    d4 = -W * (1 - 6 * mu + 6 * mu ** 2)
    cells, inv = np.unique(np.column_stack([obj.a, obj.b]), axis=0, return_inverse=True)
    inv = inv.ravel()
    if len(cells) > max_cells:
        return math.nan
    t3 = np.bincount(inv, d3, len(cells))
    t4 = np.bincount(inv, d4, len(cells))
    H = np.eye(obj.q) + lam[:, None] * obj._cross(W) * lam[None, :]
    S = linalg.cho_solve(linalg.cho_factor(H), np.eye(obj.q))
    B = lam[:, None] * S * lam[None, :]
    ca, cb = cells[:, 0], cells[:, 1]
    K = B[ca][:, ca] + B[cb][:, cb] + B[ca][:, cb] + B[cb][:, ca]
    s = np.diag(K)
    return float(np.sum(t4 * s ** 2) / 8 + (t3 * s) @ K @ (t3 * s) / 8
                 + t3 @ (K ** 3) @ t3 / 12)


# --------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------

def fit_logistic(X, y, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Plain logistic regression by IRLS; used for starting values."""
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        mu = special.expit(X @ beta)
        W = np.maximum(mu * (1 - mu), 1e-12)
        step = linalg.solve(X.T @ (W[:, None] * X), X.T @ (y - mu), assume_a="pos")
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def _numeric_hessian(fun_grad, x, idx, h=1e-5):
    k = len(idx)
    Hm = np.empty((k, k))
    for col, i in enumerate(idx):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        gp, gm = fun_grad(xp), fun_grad(xm)
        Hm[:, col] = (gp[idx] - gm[idx]) / (2 * h)
    return 0.5 * (Hm + Hm.T)


def fit_mixed_logit(D: MixedDesign, tol: float = 1e-6, max_outer: int = 200,
                    start: np.ndarray | None = None,
                    start_tau2: tuple[float, float] = (0.1, 0.1),
                    raise_on_failure: bool = True) -> MixedFit:
    """Fit the crossed random-intercept logistic model.

    Parameters
    ----------
    D : MixedDesign
    tol : float
        Projected-gradient tolerance of the outer L-BFGS-B search.
    max_outer : int
        Maximum outer iterations.
    start, start_tau2 :
        Starting fixed effects (default: plain logistic fit) and variances.
    raise_on_failure : bool
        Raise :class:`NotConverged` (carrying the last iterate) instead of
        returning a fit with ``converged=False``.

    Returns
    -------
    MixedFit
        ``loglik`` is the Laplace value; ``loglik_corrected`` adds
        :func:`laplace_correction` at the estimates as a diagnostic.
        Variance components that converge to the lower bound are reported
        as exactly zero with ``boundary_*`` set and a
        :class:`BoundaryVariance` warning.
    """
    if D.n_reg < 2 or D.n_tld < 2:
        raise ValueError("each grouping factor needs at least two groups")
    check_rank(D.X, D.names)
    p = D.X.shape[1]
    obj = LaplaceObjective(D)
    beta0 = fit_logistic(D.X, D.y) if start is None else np.asarray(start, dtype=float)
    x0 = np.r_[beta0, np.log(start_tau2)]
    lo, hi = LOG_TAU2_BOUNDS
    x0[p:] = np.clip(x0[p:], lo, hi)

    cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def f(x):
        key = np.asarray(x).tobytes()
        if key not in cache:
            val, grad, _ = obj.evaluate(x)
            cache[key] = (-val, -grad)
        return cache[key]

    history: list[float] = [-f(x0)[0]]

    def record(xk):
        history.append(-f(xk)[0])

    bounds = [(None, None)] * p + [LOG_TAU2_BOUNDS] * 2
    res = optimize.minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            callback=record,
                            options=dict(maxiter=max_outer, gtol=tol, ftol=1e-15,
                                         maxcor=20))
    x = res.x
    value, grad, v = obj.evaluate(x)
    proj = grad.copy()
    at_lo = x[p:] <= lo + 1e-6
    # gradient pointing out of the feasible box is not a failure
    proj[p:][at_lo & (grad[p:] < 0)] = 0.0
    converged = bool(res.success or np.max(np.abs(proj)) < max(tol, 1e-4))

    boundary = at_lo
    free = list(range(p)) + [p + j for j in range(2) if not boundary[j]]
    Hm = _numeric_hessian(lambda xx: -obj.evaluate(xx)[1], x, free)
    obj.evaluate(x)  # restore warm start at the optimum
    corrected = float(value) + laplace_correction(obj, x)
    try:
        cov = linalg.inv(Hm)
    except linalg.LinAlgError:
        cov = np.full_like(Hm, np.nan)
    se = np.sqrt(np.abs(np.diag(cov)[:p]))
    beta = x[:p]
    z = beta / se
    pvals = 2 * stats.norm.sf(np.abs(z))
    ci = np.column_stack([beta - 1.96 * se, beta + 1.96 * se])

    tau2 = np.exp(x[p:])
    tau2[boundary] = 0.0
    lam = obj.lam(x[p:])
    u = lam * v
    if boundary.any():
        warnings.warn("variance component pinned at zero: "
                      + ", ".join(n for n, b in zip(("registrar", "tld"), boundary) if b),
                      BoundaryVariance, stacklevel=2)
    fit = MixedFit(
        names=list(D.names), beta=beta, se=se, z=z, p_values=pvals, ci95=ci,
        tau2_reg=float(tau2[0]), tau2_tld=float(tau2[1]),
        u_reg=u[:D.n_reg], u_tld=u[D.n_reg:], loglik=float(value), converged=converged,
        boundary_reg=bool(boundary[0]), boundary_tld=bool(boundary[1]),
        iterations=int(res.nit), nobs=len(D.y), loglik_corrected=corrected,
        reg_labels=list(D.reg_labels), tld_labels=list(D.tld_labels),
        objective_history=history,
    )
    if not converged:
        msg = f"outer optimization did not converge: {res.message}"
        if raise_on_failure:
            raise NotConverged(msg, fit)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return fit


# --------------------------------------------------------------------------
# Variance decomposition
# --------------------------------------------------------------------------

def _residual_variance(residual_mode: str, sigma2: float | None) -> float:
    if residual_mode == "latent_logistic":
        return LATENT_LOGISTIC_VARIANCE
    if residual_mode == "supplied":
        if sigma2 is None or sigma2 < 0:
            raise ValueError("supplied residual mode needs a non-negative sigma2")
        return float(sigma2)
    raise ValueError(f"unknown residual mode {residual_mode!r}")


def icc(tau2_reg: float, tau2_tld: float, residual_mode: str = "latent_logistic",
        sigma2: float | None = None) -> float:
    """Share of latent variance due to the two grouping factors."""
    if tau2_reg < 0 or tau2_tld < 0:
        raise ValueError("variances must be non-negative")
    s2 = _residual_variance(residual_mode, sigma2)
    total = tau2_reg + tau2_tld + s2
    if total == 0:
        raise AllZeroVariances("all variance components are zero")
    return (tau2_reg + tau2_tld) / total


def r2_nakagawa(fit: MixedFit, D: MixedDesign, residual_mode: str = "latent_logistic",
                sigma2: float | None = None) -> tuple[float, float]:
    """Marginal and conditional R-squared of a random-intercept logistic fit."""
    s2 = _residual_variance(residual_mode, sigma2)
    var_f = float(np.var(D.X @ fit.beta))
    tau = fit.tau2_reg + fit.tau2_tld
    denom = var_f + tau + s2
    return var_f / denom, (var_f + tau) / denom


def extract_random_effects(fit: MixedFit, factor: str = "registrar",
                           anonymize: bool = False) -> list[tuple[str, float]]:
    """Random intercepts for one factor, sorted from largest to smallest.

    With ``anonymize=True`` labels become ``Reg_i``/``TLD_i`` numbered by
    the sorted order of the original labels.
    """
    if factor == "registrar":
        values, labels, prefix = fit.u_reg, fit.reg_labels, "Reg"
    elif factor == "tld":
        values, labels, prefix = fit.u_tld, fit.tld_labels, "TLD"
    else:
        raise ValueError(f"unknown factor {factor!r}")
    labels = list(labels) or list(range(len(values)))
    if anonymize:
        labels = [f"{prefix}_{i + 1}" for i in range(len(values))]
    pairs = [(str(l), float(u)) for l, u in zip(labels, values)]
    return sorted(pairs, key=lambda t: (-t[1], t[0]))


# --------------------------------------------------------------------------
# Reporting
# --------------------------------------------------------------------------

def mixed_report(fit: MixedFit, D: MixedDesign, residual_mode: str = "latent_logistic",
                 sigma2: float | None = None) -> dict:
    """Fixed effects, variance block, ICC, group counts and R-squared values."""
    s2 = _residual_variance(residual_mode, sigma2)
    marginal, conditional = r2_nakagawa(fit, D, residual_mode, sigma2)
    try:
        icc_value = icc(fit.tau2_reg, fit.tau2_tld, residual_mode, sigma2)
    except AllZeroVariances:
        icc_value = math.nan
    return {
        "fixed": coefficient_rows(fit.names, fit.beta, fit.se, fit.z, fit.p_values, fit.ci95),
        "sigma2": s2,
        "tau00_tld": fit.tau2_tld,
        "tau00_registrar": fit.tau2_reg,
        "icc": icc_value,
        "n_registrar": D.n_reg,
        "n_tld": D.n_tld,
        "observations": fit.nobs,
        "marginal_r2": marginal,
        "conditional_r2": conditional,
        "converged": fit.converged,
        "boundary": {"registrar": fit.boundary_reg, "tld": fit.boundary_tld},
        "loglik": fit.loglik,
    }


def mixed_report_text(report: dict) -> str:
    lines = []
    if not report["converged"]:
        lines.append("WARNING: estimator did not converge; estimates are the last iterate")
    rows = report["fixed"]
    w = max([len(r["name"]) for r in rows] + [8])
    lines.append(f"{'Features':<{w}} {'Coef':>8} {'CI':>19} {'P>|z|':>7}")
    for r in rows:
        p = "<0.001" if r["p"] < 0.001 else f"{r['p']:.3f}"
        ci = f"{r['ci_low']:.2f} - {r['ci_high']:.2f}"
        lines.append(f"{r['name']:<{w}} {r['coef']:>8.3f} {ci:>19} {p:>7}")
    lines.append("")
    lines.append("Random Effects")
    lines.append(f"sigma2               {report['sigma2']:.2f}")
    lines.append(f"tau00 TLD            {report['tau00_tld']:.2f}")
    lines.append(f"tau00 Registrar      {report['tau00_registrar']:.2f}")
    lines.append(f"ICC                  {report['icc']:.2f}")
    lines.append(f"N Registrar          {report['n_registrar']}")
    lines.append(f"N TLD                {report['n_tld']}")
    lines.append(f"Observations         {report['observations']}")
    lines.append(f"Marginal R2 / Conditional R2  "
                 f"{report['marginal_r2']:.3f} / {report['conditional_r2']:.3f}")
    return "\n".join(lines) + "\n"
