"""Two-layer estimation: penalized likelihood for ``Y = X B + E``, ``E ~ N(0, inv(Theta))``.

The pipeline screens predictors, initializes ``(B, Theta)``, alternates a
multi-response weighted Lasso in ``B`` with a graphical Lasso in ``Theta``,
refits ``B`` by least squares on the selected support and re-estimates
``Theta`` by a graphical Lasso whose edge penalties are discounted by
stability-selection frequencies.
"""
import csv
import enum
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import numkit
from .errors import BadConfig, LayeredGGMError, NonConverged, NotPositiveDefinite, RankDeficient, StageError
from .screening import SupportSet, screen
from .solvers import _kernels
from .solvers.glasso import GlassoProblem, glasso_objective, solve_glasso
from .solvers.lasso import LassoProblem, lasso_kkt_residual, ols_restricted, solve_lasso

log = logging.getLogger(__name__)


class UpdateMode(str, enum.Enum):
    EXACT2BLOCK = "exact2block"
    P2PLUS1 = "p2plus1"
    PARALLEL = "parallel"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise BadConfig(f"unknown update mode {value!r}; expected one of {[m.value for m in cls]}") from None


RHO_TILDE_RULES = ("match", "rho")


@dataclass
class PenaltyConfig:
    """Penalties and stopping rules of the alternating search.

    ``lam`` and ``lambda0`` are on the ``(1/n)|Y_j - X B_j|^2`` scale.
    ``lam``/``rho`` left as ``None`` are chosen by BIC; ``lambda0`` defaults
    to ``0.1 sqrt(log p1 / n)``.  ``rho_tilde`` is a number, ``"rho"`` (reuse
    ``rho``) or ``"match"`` (the default: the smallest value whose weighted
    fit has no more edges than the alternating-search estimate).  The outer
    loop stops once the absolute objective change drops below ``outer_tol``.
    """

    lam: float = None
    rho: float = None
    lambda0: float = None
    rho_tilde: object = "match"
    outer_tol: float = 1e-9
    inner_tol: float = 1e-7
    max_outer: int = 50
    max_inner: int = 100
    mode: UpdateMode = UpdateMode.EXACT2BLOCK
    lasso_tol: float = 1e-9
    lasso_max_iter: int = 10000
    glasso_tol: float = 1e-8
    glasso_max_iter: int = 2000

    def __post_init__(self):
        self.mode = UpdateMode.parse(self.mode)
        if self.rho_tilde is None:
            self.rho_tilde = "match"
        if isinstance(self.rho_tilde, str) and self.rho_tilde not in RHO_TILDE_RULES:
            raise BadConfig(f"rho_tilde must be a number or one of {RHO_TILDE_RULES}")
        for name in ("lam", "rho", "lambda0"):
            value = getattr(self, name)
            if value is not None and not value >= 0:
                raise BadConfig(f"{name} must be nonnegative, got {value}")
        for name in ("outer_tol", "inner_tol", "lasso_tol", "glasso_tol"):
            if not getattr(self, name) > 0:
                raise BadConfig(f"{name} must be positive")
        if not isinstance(self.rho_tilde, str) and not self.rho_tilde >= 0:
            raise BadConfig("rho_tilde must be nonnegative")
        if self.max_outer < 1 or self.max_inner < 1:
            raise BadConfig("max_outer and max_inner must be at least 1")

    def resolved(self, n, p1):
        """Copy with ``lambda0`` filled in (``lam``/``rho`` must be set)."""
        if self.lam is None or self.rho is None:
            raise BadConfig("lam and rho must be set (or tuned) before fitting")
        lambda0 = 0.1 * math.sqrt(math.log(p1) / n) if self.lambda0 is None else self.lambda0
        return replace(self, lambda0=lambda0)


@dataclass
class StabilityConfig:
    n_boot: int = 50
    subsample_frac: float = 0.5
    rho_path: tuple = None
    seed: object = 0

    def __post_init__(self):
        if self.n_boot < 1:
            raise BadConfig("n_boot must be at least 1")
        if not 0 < self.subsample_frac <= 1:
            raise BadConfig("subsample_frac must lie in (0, 1]")


def default_rho_path(n, p2, count=10):
    return tuple(np.geomspace(0.01, 1.0, count) * math.sqrt(math.log(max(p2, 2)) / n))


@dataclass
class TwoLayerEstimate:
    b_hat: np.ndarray
    theta_hat: np.ndarray
    b_infty: np.ndarray
    theta_infty: np.ndarray
    supports: SupportSet
    objective_trace: list
    card_trace: list
    w_matrix: np.ndarray = None
    converged: bool = False
    mode_used: UpdateMode = UpdateMode.EXACT2BLOCK
    n_column_updates: int = 0
    penalties: PenaltyConfig = None
    flags: list = field(default_factory=list)
    bic_table: list = None

    @property
    def iterations(self):
        return len(self.objective_trace) - 1

    def export(self, out_dir):
        """Write ``B.csv``, ``Theta.csv``, ``W.csv`` and ``trace.csv`` into ``out_dir``."""
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        numkit.write_matrix_csv(out_dir / "B.csv", self.b_hat)
        numkit.write_matrix_csv(out_dir / "Theta.csv", self.theta_hat)
        if self.w_matrix is not None:
            numkit.write_matrix_csv(out_dir / "W.csv", self.w_matrix)
        write_trace_csv(out_dir / "trace.csv", self)


def write_trace_csv(path, est):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "card_B", "card_Theta"])
        for k, (obj, (cb, ct)) in enumerate(zip(est.objective_trace, est.card_trace)):
            w.writerow([k, repr(float(obj)), int(cb), int(ct)])


# --- objective -------------------------------------------------------------

def residual_covariance(b, x, y):
    return numkit.sample_covariance(np.asarray(y, float) - np.asarray(x, float) @ b)


def objective(b, theta, x, y, lam, rho):
    """``tr(S Theta) - logdet Theta + lam |B|_1 + rho sum_{i != j} |Theta_ij|`` with ``S`` from ``Y - X B``."""
    theta = np.asarray(theta, dtype=float)
    s = residual_covariance(b, x, y)
    off = np.abs(theta).sum() - np.abs(np.diag(theta)).sum()
    return (
        float(np.sum(s * theta)) - numkit.log_det_spd(theta)
        + lam * float(np.abs(b).sum()) + rho * float(off)
    )


def cardinality(b, theta):
    return int(np.count_nonzero(b)), int(np.count_nonzero(theta))


# --- building blocks ---------------------------------------------------------

def _support_arrays(supports, p1, p2):
    if supports is None:
        supports = SupportSet.full(p1, p2)
    if len(supports.per_response) != p2:
        raise BadConfig(f"supports cover {len(supports.per_response)} responses, expected {p2}")
    ptr = np.zeros(p2 + 1, dtype=np.int64)
    idx = []
    for j, s in enumerate(supports.per_response):
        s = np.unique(np.asarray(s, dtype=np.int64))
        if s.size and (s[0] < 0 or s[-1] >= p1):
            raise BadConfig(f"support of response {j} has out-of-range indices")
        idx.append(s)
        ptr[j + 1] = ptr[j] + s.size
    flat = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
    return supports, ptr, np.ascontiguousarray(flat, dtype=np.int64)


def _glasso_step(s, rho, cfg, warm=None, flags=None):
    prob = GlassoProblem(s, rho, tol=cfg.glasso_tol, max_iter=cfg.glasso_max_iter, ridge=True)
    fit = solve_glasso(prob, warm=warm)
    if flags is not None:
        if fit.ridge_added:
            flags.append("ridge")
        if not fit.converged:
            flags.append("glasso_nonconverged")
    return fit


def initial_b(x, y, supports, lambda0, cfg=None):
    """Column-wise Lasso at ``lambda0`` restricted to the screened supports."""
    cfg = cfg or PenaltyConfig(lam=0.0, rho=0.0)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p1 = x.shape
    p2 = y.shape[1]
    supports, _, _ = _support_arrays(supports, p1, p2)
    gram = x.T @ x / n
    cmat = x.T @ y / n
    b0 = np.zeros((p1, p2))
    for j in range(p2):
        sup = np.asarray(supports.per_response[j], dtype=np.int64)
        if sup.size == 0:
            continue
        fit = solve_lasso(LassoProblem(gram, cmat[:, j], lambda0, support=sup), cfg.lasso_tol, cfg.lasso_max_iter)
        b0[:, j] = fit.beta
    return b0


def initial_theta(b0, x, y, rho, cfg=None):
    """Glasso at ``rho`` on the covariance of the residuals ``Y - X b0``."""
    cfg = cfg or PenaltyConfig(lam=0.0, rho=rho)
    return _glasso_step(residual_covariance(b0, x, y), rho, cfg).theta


def initialize(x, y, supports, lambda0, rho, cfg=None):
    """Column-wise Lasso at ``lambda0`` on the screened supports, then glasso on the residuals."""
    b0 = initial_b(x, y, supports, lambda0, cfg)
    return b0, initial_theta(b0, x, y, rho, cfg)


def update_b(b_prev, theta_k, x, y, supports, lam, mode=UpdateMode.EXACT2BLOCK,
             inner_tol=1e-7, max_inner=100, lasso_tol=1e-9, lasso_max_iter=10000, exact=None):
    """Minimize the objective over ``B`` with ``Theta = theta_k`` held fixed.

    ``exact2block`` runs cyclic column passes until the largest coefficient
    change is below ``inner_tol``; ``p2plus1`` makes exactly one Gauss-Seidel
    pass; ``parallel`` makes one Jacobi pass in which every column sees only
    ``b_prev``.  ``exact=True`` forces passes to convergence in any mode
    (Jacobi passes stay Jacobi).  Returns ``(b_next, info)``.
    """
    mode = UpdateMode.parse(mode)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p1 = x.shape
    p2 = y.shape[1]
    theta_k = np.ascontiguousarray(theta_k, dtype=float)
    if np.any(np.diag(theta_k) <= 0):
        raise NotPositiveDefinite("theta has a nonpositive diagonal")
    _, ptr, idx = _support_arrays(supports, p1, p2)
    gram = np.ascontiguousarray(x.T @ x / n)
    cmat = np.ascontiguousarray(x.T @ y / n)
    b = np.array(b_prev, dtype=float, order="C")
    # keep off-support entries at zero
    mask = np.zeros((p1, p2), dtype=bool)
    for j in range(p2):
        mask[idx[ptr[j]:ptr[j + 1]], j] = True
    b[~mask] = 0.0
    resid = np.ascontiguousarray(cmat - gram @ b)
    if exact is None:
        exact = mode is UpdateMode.EXACT2BLOCK
    passes = max_inner if exact else 1
    info = {"passes": 0, "column_updates": 0, "change": np.inf, "kkt": 0.0, "converged": True}
    for _ in range(passes):
        src = resid.copy() if mode is UpdateMode.PARALLEL else resid
        change, _, kkt = _kernels.b_column_pass(
            gram, cmat, b, resid, src, theta_k, ptr, idx, float(lam), float(lasso_tol), int(lasso_max_iter),
        )
        info["passes"] += 1
        info["column_updates"] += p2
        info["change"] = change
        info["kkt"] = max(info["kkt"], kkt)
        if change < inner_tol:
            break
    if kkt > lasso_tol:
        info["converged"] = False
    if exact and info["change"] >= inner_tol:
        info["converged"] = False
    return b, info


def _columns_kkt(b, theta, x, y, supports, lam):
    """Largest Lasso KKT residual over the columns of ``b`` with ``theta`` held fixed."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[0]
    gram = x.T @ x / n
    cmat = x.T @ y / n
    resid = cmat - gram @ b
    worst = 0.0
    for j in range(b.shape[1]):
        tjj = theta[j, j]
        others = np.arange(b.shape[1]) != j
        xty = cmat[:, j] + resid[:, others] @ theta[others, j] / tjj
        sup = None if supports is None else supports.per_response[j]
        prob = LassoProblem(gram, xty, lam, quad_weight=tjj, support=sup)
        worst = max(worst, lasso_kkt_residual(prob, b[:, j]))
    return worst


def stationarity(est, x, y):
    """``(max column Lasso KKT, glasso KKT)`` of the pre-refit estimate."""
    from .solvers.glasso import glasso_kkt_residual

    lam, rho = est.penalties.lam, est.penalties.rho
    b, theta = est.b_infty, est.theta_infty
    col = _columns_kkt(b, theta, x, y, est.supports, lam)
    pen = np.full(theta.shape, float(rho))
    np.fill_diagonal(pen, 0.0)
    return col, glasso_kkt_residual(residual_covariance(b, x, y), theta, pen)


def alternate(x, y, supports, cfg, init=None):
    """Alternating block-coordinate search; returns a pre-refit :class:`TwoLayerEstimate`.

    ``init`` may supply ``(b0, theta0)``; otherwise :func:`initialize` is used.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p1 = x.shape
    if y.shape[0] != n:
        raise BadConfig(f"x has {n} rows but y has {y.shape[0]}")
    p2 = y.shape[1]
    cfg = cfg.resolved(n, p1)
    supports, _, _ = _support_arrays(supports, p1, p2)
    flags = []
    if init is None:
        b, theta = initialize(x, y, supports, cfg.lambda0, cfg.rho, cfg)
    else:
        b, theta = (np.array(a, dtype=float) for a in init)
    lam, rho = cfg.lam, cfg.rho
    obj = [objective(b, theta, x, y, lam, rho)]
    card = [cardinality(b, theta)]
    glasso_fit = None
    column_updates = 0
    converged = False
    for k in range(cfg.max_outer):
        # the first B-update is always an exact Gauss-Seidel minimization
        mode_k = UpdateMode.EXACT2BLOCK if k == 0 else cfg.mode
        b, info = update_b(
            b, theta, x, y, supports, lam, mode_k, cfg.inner_tol, cfg.max_inner,
            cfg.lasso_tol, cfg.lasso_max_iter,
        )
        column_updates += info["column_updates"]
        if not info["converged"]:
            flags.append(f"b_update_nonconverged@{k + 1}")
        s = residual_covariance(b, x, y)
        glasso_fit = _glasso_step(s, rho, cfg, warm=glasso_fit, flags=flags)
        pen = np.full((p2, p2), float(rho))
        np.fill_diagonal(pen, 0.0)
        new_theta = glasso_fit.theta
        if glasso_objective(s, new_theta, pen) > glasso_objective(s, theta, pen):
            # inexact glasso step would increase f; keep the previous precision
            flags.append(f"theta_step_rejected@{k + 1}")
            new_theta = theta
        theta = new_theta
        obj.append(objective(b, theta, x, y, lam, rho))
        card.append(cardinality(b, theta))
        if abs(obj[-2] - obj[-1]) < cfg.outer_tol:
            converged = True
            break
    if not converged:
        flags.append("max_outer_reached")
        warnings.warn(f"alternating search did not converge in {cfg.max_outer} iterations", NonConverged, stacklevel=2)
    return TwoLayerEstimate(
        b_hat=b, theta_hat=theta, b_infty=b, theta_infty=theta, supports=supports,
        objective_trace=obj, card_trace=card, converged=converged, mode_used=cfg.mode,
        n_column_updates=column_updates, penalties=cfg, flags=flags,
    )


def refit(x, y, b_infty, flags=None):
    """Least squares per column on the support of ``b_infty``; rank-deficient columns get a 1e-8 ridge."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    b_tilde = np.zeros_like(b_infty, dtype=float)
    for j in range(b_infty.shape[1]):
        sup = np.flatnonzero(b_infty[:, j])
        try:
            b_tilde[:, j] = ols_restricted(x, y[:, j], sup)
        except RankDeficient:
            b_tilde[:, j] = ols_restricted(x, y[:, j], sup, ridge=1e-8)
            if flags is not None:
                flags.append(f"refit_ridge@{j}")
    return b_tilde


def _edge_frequency(residuals, idx, rho_path, tol):
    e = numkit.center_columns(residuals[idx])
    s = numkit.sample_covariance(e)
    p = s.shape[0]
    hits = np.zeros((p, p))
    warm = None
    failures = 0
    for rho in sorted(rho_path, reverse=True):
        try:
            fit = solve_glasso(GlassoProblem(s, rho, tol=tol, ridge=True), warm=warm)
        except NotPositiveDefinite:
            failures += 1
            continue
        warm = fit
        failures += not fit.converged
        hits += fit.theta != 0
    return hits, failures


def stability_weights(residuals, n_boot=50, rho_path=None, subsample_frac=0.5, seed=0, threads=1, tol=1e-4):
    """Edge-selection frequencies of glasso over subsamples and a penalty path.

    Subsample ``b`` draws ``floor(subsample_frac * n)`` rows without
    replacement using ``default_rng([seed, b])``, so results do not depend on
    ``threads``.  The diagonal of the returned matrix is 1.
    """
    residuals = np.asarray(residuals, dtype=float)
    n, p = residuals.shape
    if n_boot < 1:
        raise BadConfig("n_boot must be at least 1")
    rho_path = default_rho_path(n, p) if rho_path is None else tuple(float(r) for r in rho_path)
    if not rho_path:
        raise BadConfig("rho_path is empty")
    m = max(2, int(math.floor(subsample_frac * n)))
    base = seed if isinstance(seed, (list, tuple)) else [seed]
    draws = [np.random.default_rng([*base, b]).choice(n, size=m, replace=False) for b in range(n_boot)]

    def one(idx):
        return _edge_frequency(residuals, np.sort(idx), rho_path, tol)

    if threads > 1 and n_boot > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, draws))
    else:
        results = [one(idx) for idx in draws]
    hits = np.zeros((p, p))
    failures = 0
    for h, f in results:
        hits += h
        failures += f
    if failures:
        log.info("stability selection: %d of %d glasso solves did not converge", failures, n_boot * len(rho_path))
    w = hits / (n_boot * len(rho_path))
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 1.0)
    return w


def final_theta(residuals, w_matrix, rho_tilde, tol=1e-8, flags=None):
    """Weighted glasso on the residual covariance with edge penalties ``rho_tilde * (1 - W)``."""
    s = numkit.sample_covariance(numkit.center_columns(np.asarray(residuals, dtype=float)))
    return _final_fit(s, w_matrix, rho_tilde, tol, flags).theta


def _final_fit(s, w_matrix, rho_tilde, tol, flags=None):
    fit = solve_glasso(GlassoProblem(s, rho_tilde, weights=w_matrix, tol=tol, max_iter=5000, ridge=True))
    if flags is not None:
        if fit.ridge_added:
            flags.append("final_ridge")
        if not fit.converged:
            flags.append("final_glasso_nonconverged")
    return fit


def match_rho_tilde(residuals, w_matrix, target_edges, upper, tol=1e-8, steps=20):
    """Smallest ``rho_tilde`` in ``[0, upper]`` whose weighted fit has at most ``target_edges`` edges.

    Found by bisection; if even ``upper`` leaves too many edges, ``upper`` is
    returned.  Edges are counted once per unordered pair.
    """
    s = numkit.sample_covariance(numkit.center_columns(np.asarray(residuals, dtype=float)))

    def edges(rho):
        theta = _final_fit(s, w_matrix, rho, tol).theta
        return (np.count_nonzero(theta) - theta.shape[0]) // 2

    if edges(upper) > target_edges:
        return float(upper)
    lo, hi = 0.0, float(upper)
    if edges(lo) <= target_edges:
        return lo
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if edges(mid) <= target_edges:
            hi = mid
        else:
            lo = mid
    return hi


# --- pipeline ------------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (LayeredGGMError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def fit_two_layer(x, y, cfg=None, screening_alpha=0.1, tuning=None, stability=None, threads=1, supports=None):
    """Screen, (optionally) tune, alternate, refit and re-estimate ``Theta`` with stability weights.

    ``tuning`` may be a :class:`~layered_ggm.tuning.TuningGrid`; when ``cfg``
    leaves ``lam`` or ``rho`` unset and no grid is given, the default grid is
    searched.  ``stability=False`` skips stability selection (the final
    ``Theta`` is then the pre-refit one).  Errors are re-raised as
    :class:`StageError` labelled with the failing stage.
    """
    from . import tuning as tuning_mod

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n, p1 = x.shape
    p2 = y.shape[1]
    cfg = cfg or PenaltyConfig()
    if stability is None:
        stability = StabilityConfig()

    if supports is None:
        supports = _stage("screening", screen, x, y, screening_alpha, threads)

    est = None
    bic_table = None
    if tuning is not None or cfg.lam is None or cfg.rho is None:
        grid = tuning if tuning is not None else tuning_mod.default_grid(n, p1, p2)
        result = _stage("tuning", tuning_mod.grid_search, x, y, supports, grid, cfg, threads)
        cfg = replace(cfg, lam=result.lambda_star, rho=result.rho_star)
        bic_table = result.table
        # the selected grid point was fitted from the same initializer; reuse it
        est = result.best

    if est is None:
        est = _stage("alternate", alternate, x, y, supports, cfg)
    est.bic_table = bic_table
    b_tilde = _stage("refit", refit, x, y, est.b_infty, est.flags)
    resid = y - x @ b_tilde
    if stability is False:
        theta = est.theta_infty
        w = None
    else:
        w = _stage(
            "stability", stability_weights, resid, stability.n_boot, stability.rho_path,
            stability.subsample_frac, stability.seed, threads,
        )
        rho_tilde = est.penalties.rho_tilde
        if rho_tilde == "rho":
            rho_tilde = est.penalties.rho
        elif rho_tilde == "match":
            target = (np.count_nonzero(est.theta_infty) - p2) // 2
            upper = 4.0 * math.sqrt(math.log(max(p2, 2)) / n)
            rho_tilde = _stage("final_theta", match_rho_tilde, resid, w, target, upper)
        est.penalties = replace(est.penalties, rho_tilde=float(rho_tilde))
        theta = _stage("final_theta", final_theta, resid, w, rho_tilde, flags=est.flags)
    est.b_hat = b_tilde
    est.theta_hat = theta
    est.w_matrix = w
    return est
