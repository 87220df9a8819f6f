"""Weighted Lasso by coordinate descent, plus support-restricted least squares."""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from ..errors import NonConverged, RankDeficient


@dataclass
class LassoProblem:
    """min_b  quad_weight * (b' gram b - 2 b' xty) + lam * |b|_1.

    With ``gram = X'X/n`` and ``xty = X'y/n`` this is
    ``(quad_weight/n) * |y - X b|^2 + lam * |b|_1`` up to a constant.
    Coordinates outside ``support`` (when given) are held at zero.
    """

    gram: np.ndarray
    xty: np.ndarray
    lam: float
    quad_weight: float = 1.0
    support: np.ndarray = None
    init: np.ndarray = None

    def __post_init__(self):
        self.gram = np.ascontiguousarray(self.gram, dtype=float)
        self.xty = np.ascontiguousarray(self.xty, dtype=float).ravel()
        p = self.xty.shape[0]
        if self.gram.shape != (p, p):
            raise ValueError(f"gram has shape {self.gram.shape}, expected {(p, p)}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.support is not None:
            self.support = np.asarray(self.support, dtype=np.int64).ravel()
            if self.support.size and (self.support.min() < 0 or self.support.max() >= p):
                raise ValueError("support index out of range")

    @property
    def p(self):
        return self.xty.shape[0]

    def active(self):
        if self.support is None:
            return np.arange(self.p, dtype=np.int64)
        return np.ascontiguousarray(np.unique(self.support), dtype=np.int64)

    def objective(self, beta):
        beta = np.asarray(beta, dtype=float)
        quad = beta @ self.gram @ beta - 2.0 * beta @ self.xty
        return self.quad_weight * quad + self.lam * np.abs(beta).sum()


@dataclass
class LassoFit:
    beta: np.ndarray
    sweeps: int
    kkt: float
    converged: bool


def solve_lasso(problem, tol=1e-7, max_iter=1000):
    """Run coordinate descent and return a :class:`LassoFit` with diagnostics."""
    active = problem.active()
    beta = np.zeros(problem.p)
    if problem.init is not None:
        beta[active] = np.asarray(problem.init, dtype=float)[active]
    grad = problem.gram @ beta - problem.xty
    sweeps, kkt = _kernels.lasso_cd(
        problem.gram, problem.xty, float(problem.quad_weight), float(problem.lam),
        active, beta, grad, float(tol), int(max_iter),
    )
    return LassoFit(beta, int(sweeps), float(kkt), bool(kkt <= tol))


def lasso_cd(problem, tol=1e-7, max_iter=1000):
    """Minimize the :class:`LassoProblem` objective; returns the coefficient vector.

    Emits a :class:`NonConverged` warning (and still returns the last iterate)
    if the KKT residual is above ``tol`` after ``max_iter`` sweeps.
    """
    fit = solve_lasso(problem, tol, max_iter)
    if not fit.converged:
        warnings.warn(
            f"lasso_cd stopped after {fit.sweeps} sweeps with KKT residual {fit.kkt:.3g}",
            NonConverged, stacklevel=2,
        )
    return fit.beta


def lasso_kkt_residual(problem, beta):
    beta = np.ascontiguousarray(beta, dtype=float)
    grad = problem.gram @ beta - problem.xty
    return float(_kernels.lasso_kkt(
        problem.gram, problem.xty, float(problem.quad_weight), float(problem.lam),
        problem.active(), beta, grad,
    ))


def ols_restricted(x, y, support, ridge=0.0):
    """Least squares of ``y`` on the columns of ``x`` listed in ``support``.

    Coefficients outside ``support`` are zero.  A rank-deficient submatrix
    raises :class:`RankDeficient` unless ``ridge > 0`` is given, in which case
    ``ridge * n`` is added to the diagonal of the normal equations.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    p = x.shape[1]
    support = np.unique(np.asarray(support, dtype=np.int64).ravel())
    beta = np.zeros(p)
    if support.size == 0:
        return beta
    xs = x[:, support]
    gram = xs.T @ xs
    rhs = xs.T @ y
    if ridge > 0:
        gram = gram + ridge * x.shape[0] * np.eye(support.size)
    elif support.size > x.shape[0] or np.linalg.matrix_rank(xs) < support.size:
        raise RankDeficient(f"design restricted to {support.size} columns is rank deficient")
    try:
        chol = linalg.cho_factor(gram, lower=True)
    except linalg.LinAlgError:
        raise RankDeficient("normal equations are not positive definite") from None
    beta[support] = linalg.cho_solve(chol, rhs)
    return beta
