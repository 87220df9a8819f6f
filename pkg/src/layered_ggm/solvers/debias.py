"""De-biased Lasso: scaled-Lasso fit, decorrelating matrix M, normal p-values."""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .lasso import LassoProblem, solve_lasso
from ..errors import ZeroVarianceColumn

log = logging.getLogger(__name__)


@dataclass
class DebiasConfig:
    """Tuning of the de-biasing procedure.

    ``lam`` fixes the Lasso penalty (on the ``(1/n)|y - Xb|^2`` scale) and
    skips the scaled-Lasso iteration; ``m_matrix`` bypasses the row-wise
    construction of ``M`` (useful when many responses share one design).
    ``mu`` is the starting bound of the ``M`` search (see
    :func:`debias_m_matrix`).  With ``df_correct`` the noise level used for
    standard errors is ``|y - X b| / sqrt(n - |supp b|)``.
    """

    kappa: float = 2.0
    scaled_iters: int = 10
    mu: float = None
    lam: float = None
    m_matrix: np.ndarray = None
    tol: float = 1e-8
    max_iter: int = 5000
    mu_steps: int = 10
    mu_resolution: float = 1.3
    mu_sweeps: int = 50
    df_correct: bool = True


@dataclass
class DebiasResult:
    beta_check: np.ndarray
    std_err: np.ndarray
    p_values: np.ndarray
    m_matrix: np.ndarray
    beta_lasso: np.ndarray
    sigma_hat: float
    lam: float
    m_fallback: np.ndarray = None


def default_mu(n, p):
    return 2.0 * math.sqrt(math.log(p) / n) if p > 1 else 0.0


def _m_row(sigma_hat, i, mu, tol, sweeps):
    p = sigma_hat.shape[0]
    e = np.zeros(p)
    e[i] = 1.0
    fit = solve_lasso(LassoProblem(sigma_hat, e, mu, quad_weight=0.5, init=e / sigma_hat[i, i]), tol, sweeps)
    ok = fit.converged and np.all(np.isfinite(fit.beta))
    return fit.beta, ok


def debias_m_matrix(sigma_hat, mu, tol=1e-8, max_iter=50, steps=10, resolution=1.3):
    """Rows m_i minimizing m'Sm subject to |S m - e_i|_inf <= mu_i.

    Each row is found by coordinate descent on ``0.5 m'Sm - m_i + mu |m|_1``,
    whose KKT conditions are exactly the constraint.  A row is deemed
    feasible when the descent converges within ``max_iter`` sweeps.  Starting
    from ``mu``, the bound is divided by ``resolution`` (at most ``steps``
    times) while the row stays feasible, and the tightest feasible row is
    kept; if ``mu`` itself is infeasible it is multiplied instead until a
    feasible row appears.  Rows never found feasible fall back to
    ``e_i / S_ii``.  Returns ``(M, fallback_mask)``.
    """
    sigma_hat = np.ascontiguousarray(sigma_hat, dtype=float)
    p = sigma_hat.shape[0]
    m = np.zeros((p, p))
    fallback = np.zeros(p, dtype=bool)
    for i in range(p):
        row, ok = _m_row(sigma_hat, i, mu, tol, max_iter)
        if ok:
            cur = mu
            for _ in range(steps):
                cur /= resolution
                cand, ok = _m_row(sigma_hat, i, cur, tol, max_iter)
                if not ok:
                    break
                row = cand
        else:
            cur = mu
            for _ in range(steps):
                cur *= resolution
                row, ok = _m_row(sigma_hat, i, cur, tol, max_iter)
                if ok:
                    break
            if not ok:
                fallback[i] = True
                row = np.eye(p)[i] / sigma_hat[i, i]
        m[i] = row
    if fallback.any():
        log.warning("M construction fell back to e_i/S_ii for %d of %d rows", fallback.sum(), p)
    return m, fallback


def scaled_lasso(gram, xty, yy, n, kappa=2.0, iters=10, tol=1e-8, max_iter=5000):
    """Alternate ``sigma <- |y - Xb| / sqrt(n)`` and a Lasso refit at ``kappa*sigma*sqrt(log p/n)``.

    ``yy`` is ``y'y/n``.  Returns ``(beta, sigma, lam)``.
    """
    p = xty.shape[0]
    scale = math.sqrt(math.log(p) / n) if p > 1 else 0.0
    sigma = math.sqrt(max(yy, 0.0))
    beta = np.zeros(p)
    lam = kappa * sigma * scale
    for _ in range(iters):
        lam = kappa * sigma * scale
        beta = solve_lasso(LassoProblem(gram, xty, lam, init=beta), tol, max_iter).beta
        rss = yy - 2.0 * beta @ xty + beta @ gram @ beta
        new_sigma = math.sqrt(max(rss, 0.0))
        if new_sigma == 0.0 or abs(new_sigma - sigma) <= 1e-10 * sigma:
            sigma = new_sigma
            break
        sigma = new_sigma
    return beta, sigma, lam


def debiased_lasso(x, y, cfg=None):
    """De-biased Lasso estimate, standard errors and two-sided p-values.

    ``beta_check = beta_lasso + M X'(y - X beta_lasso)/n`` and
    ``std_err_i = sigma_hat * sqrt((M S M')_ii / n)`` with ``S = X'X/n``.
    """
    cfg = cfg or DebiasConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    if n < 2 or p < 1:
        raise ValueError("debiased_lasso needs n >= 2 and p >= 1")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("debiased_lasso needs finite data")
    gram = np.ascontiguousarray(x.T @ x / n)
    if np.any(np.diag(gram) <= 0):
        bad = np.flatnonzero(np.diag(gram) <= 0)
        raise ZeroVarianceColumn(f"design columns {bad.tolist()} have zero variance")
    xty = x.T @ y / n
    yy = float(y @ y / n)

    if cfg.lam is None:
        beta, sigma, lam = scaled_lasso(gram, xty, yy, n, cfg.kappa, cfg.scaled_iters, cfg.tol, cfg.max_iter)
    else:
        lam = float(cfg.lam)
        beta = solve_lasso(LassoProblem(gram, xty, lam), cfg.tol, cfg.max_iter).beta
        sigma = float(np.linalg.norm(y - x @ beta) / math.sqrt(n))
    if cfg.df_correct:
        dof = n - np.count_nonzero(beta)
        if dof > 0:
            sigma = float(np.linalg.norm(y - x @ beta) / math.sqrt(dof))

    if cfg.m_matrix is None:
        mu = default_mu(n, p) if cfg.mu is None else cfg.mu
        m, fallback = debias_m_matrix(gram, mu, cfg.tol, cfg.mu_sweeps, cfg.mu_steps, cfg.mu_resolution)
    else:
        m = np.asarray(cfg.m_matrix, dtype=float)
        fallback = None

    resid_corr = xty - gram @ beta
    beta_check = beta + m @ resid_corr
    var = np.einsum("ij,jk,ik->i", m, gram, m)
    std_err = sigma * np.sqrt(np.maximum(var, 0.0) / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(beta_check) / std_err
    z = np.where(std_err > 0, z, np.where(beta_check == 0, 0.0, np.inf))
    p_values = np.clip(2.0 * stats.norm.sf(z), 0.0, 1.0)
    return DebiasResult(beta_check, std_err, p_values, m, beta, sigma, lam, fallback)
