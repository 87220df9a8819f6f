"""Graphical Lasso with elementwise off-diagonal penalty weights."""
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .. import numkit
from ..errors import NonConverged, NotPositiveDefinite, RidgeFallback

RIDGE_SCALE = 1e-8


@dataclass
class GlassoProblem:
    """min_T  -logdet T + tr(S T) + rho * sum_{i != j} (1 - W_ij) |T_ij|.

    ``weights`` is the optional stability matrix ``W``; without it every
    off-diagonal entry carries penalty ``rho``.  The diagonal is never
    penalized.  ``ridge`` controls the ``1e-8 * tr(S)/p`` stabilization of a
    singular ``S``: ``None`` allows it only when ``rho > 0``.
    """

    s: np.ndarray
    rho: float
    weights: np.ndarray = None
    tol: float = 1e-6
    max_iter: int = 500
    ridge: bool = None

    def __post_init__(self):
        self.s = numkit.symmetrize(self.s)
        if self.s.ndim != 2 or self.s.shape[0] != self.s.shape[1]:
            raise ValueError(f"s must be square, got {self.s.shape}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.weights is not None:
            self.weights = numkit.symmetrize(self.weights)
            if self.weights.shape != self.s.shape:
                raise ValueError("weights must match the shape of s")

    def penalty_matrix(self):
        p = self.s.shape[0]
        if self.weights is None:
            pen = np.full((p, p), float(self.rho))
        else:
            pen = self.rho * (1.0 - self.weights)
        pen = np.maximum(pen, 0.0)
        np.fill_diagonal(pen, 0.0)
        return np.ascontiguousarray(pen)


@dataclass
class GlassoFit:
    theta: np.ndarray
    covariance: np.ndarray
    coef: np.ndarray
    sweeps: int
    kkt: float
    converged: bool
    ridge_added: float = 0.0


def glasso_kkt_residual(s, theta, pen):
    """Largest violation of the stationarity conditions of the weighted glasso."""
    sigma = numkit.inv_spd(theta)
    g = numkit.symmetrize(s) - sigma
    off = ~np.eye(theta.shape[0], dtype=bool)
    sign = np.sign(theta)
    viol = np.where(theta != 0, np.abs(g + pen * sign), np.maximum(np.abs(g) - pen, 0.0))
    viol = np.where(off, viol, np.abs(g))
    return float(viol.max()) if viol.size else 0.0


def glasso_objective(s, theta, pen):
    return (
        -numkit.log_det_spd(theta)
        + float(np.sum(s * theta))
        + float(np.sum(pen * np.abs(theta)))
    )


def _symmetrize_sparse(theta):
    sym = 0.5 * (theta + theta.T)
    sym[(theta == 0) | (theta.T == 0)] = 0.0
    np.fill_diagonal(sym, np.diag(theta))
    return sym


def solve_glasso(problem, warm=None):
    """Solve ``problem``; ``warm`` may be a previous :class:`GlassoFit` of equal size."""
    s = problem.s
    p = s.shape[0]
    pen = problem.penalty_matrix()
    allow_ridge = problem.rho > 0 if problem.ridge is None else problem.ridge
    ridge = 0.0
    if not numkit.is_spd(s):
        if not allow_ridge:
            raise NotPositiveDefinite("S is singular and the problem is unpenalized")
        ridge = RIDGE_SCALE * max(float(np.trace(s)) / p, 1.0)
        s = s + ridge * np.eye(p)
        if not numkit.is_spd(s):
            raise NotPositiveDefinite("S is not PSD; ridge stabilization failed")

    if not np.any(pen):
        theta = numkit.inv_spd(s)
        sigma = numkit.symmetrize(s)
        coef = -theta / np.diag(theta)[None, :]
        np.fill_diagonal(coef, 0.0)
        kkt = glasso_kkt_residual(s, theta, pen)
        return GlassoFit(theta, sigma, coef, 0, kkt, True, ridge)

    # Start inside the dual box |W - S| <= pen with W SPD; exact block updates
    # then keep W SPD.  A warm covariance is clipped into the box and used only
    # if it stays SPD.
    w = np.array(s, dtype=float)
    coef = np.zeros((p, p))
    if warm is not None and warm.covariance.shape == (p, p):
        cand = np.clip(warm.covariance, s - pen, s + pen)
        np.fill_diagonal(cand, np.diag(s))
        if numkit.is_spd(cand):
            w = cand
        coef = np.array(warm.coef, dtype=float)
    w = np.ascontiguousarray(w)
    coef = np.ascontiguousarray(coef)

    tol_w = problem.tol / 10.0
    inner_tol = problem.tol / 100.0
    total = 0
    theta = None
    kkt = np.inf
    while total < problem.max_iter:
        sweeps, _ = _kernels.glasso_bcd(
            s, pen, w, coef, tol_w, inner_tol, problem.max_iter - total, 1000,
        )
        total += sweeps
        theta = _symmetrize_sparse(_kernels.glasso_precision(w, coef))
        try:
            kkt = glasso_kkt_residual(s, theta, pen)
        except NotPositiveDefinite:
            kkt = np.inf
        if kkt <= problem.tol:
            break
        tol_w /= 10.0
        inner_tol /= 10.0
        if tol_w < 1e-15:
            break
    numkit.cholesky_lower(theta)
    return GlassoFit(theta, numkit.symmetrize(w), coef, total, kkt, kkt <= problem.tol, ridge)


def glasso(problem):
    """Return the SPD minimizer of the :class:`GlassoProblem` objective."""
    fit = solve_glasso(problem)
    if fit.ridge_added:
        warnings.warn(f"added ridge {fit.ridge_added:.3g} to a singular S", RidgeFallback, stacklevel=2)
    if not fit.converged:
        warnings.warn(
            f"glasso stopped after {fit.sweeps} sweeps with KKT residual {fit.kkt:.3g}",
            NonConverged, stacklevel=2,
        )
    return fit.theta
