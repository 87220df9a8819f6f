"""BIC selection of the penalty pair ``(lam, rho)`` over a rectangular grid."""
import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import numkit
from .errors import BadConfig, LayeredGGMError, NonConverged, TuningFailed
from .screening import SupportSet
from .twolayer import alternate, initial_b, initial_theta, residual_covariance

log = logging.getLogger(__name__)


def bic(b, theta, x, y):
    """``-logdet Theta + tr(S Theta) + (log n / n) * ((|Theta|_0 - p2)/2 + |B|_0)``."""
    theta = np.asarray(theta, dtype=float)
    n = np.asarray(x).shape[0]
    s = residual_covariance(b, x, y)
    fit = -numkit.log_det_spd(theta) + float(np.sum(s * theta))
    dof = (np.count_nonzero(theta) - theta.shape[0]) / 2.0 + np.count_nonzero(b)
    return fit + math.log(n) / n * dof


@dataclass
class TuningGrid:
    lambdas: tuple
    rhos: tuple

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in np.atleast_1d(self.lambdas))
        self.rhos = tuple(float(v) for v in np.atleast_1d(self.rhos))
        if not self.lambdas or not self.rhos:
            raise BadConfig("tuning grid must be nonempty")
        for name in ("lambdas", "rhos"):
            vals = getattr(self, name)
            if min(vals) < 0:
                raise BadConfig(f"{name} must be nonnegative")
            if list(vals) != sorted(vals):
                raise BadConfig(f"{name} must be sorted ascending")

    def points(self):
        return [(lam, rho) for lam in self.lambdas for rho in self.rhos]


def default_grid(n, p1, p2, size=6):
    """``size`` evenly spaced values on ``[0, 0.5 sqrt(log p / n)]`` for each penalty."""
    lam_max = 0.5 * math.sqrt(math.log(max(p1, 2)) / n)
    rho_max = 0.5 * math.sqrt(math.log(max(p2, 2)) / n)
    return TuningGrid(np.linspace(0.0, lam_max, size), np.linspace(0.0, rho_max, size))


@dataclass
class TuningResult:
    lambda_star: float
    rho_star: float
    table: list
    best: object = None


TABLE_FIELDS = ("lambda", "rho", "bic", "card_B", "card_Theta", "iterations", "converged", "error")


def _evaluate(x, y, supports, cfg, lam, rho, b0):
    point = replace(cfg, lam=lam, rho=rho)
    row = {"lambda": lam, "rho": rho, "bic": math.inf, "card_B": -1, "card_Theta": -1,
           "iterations": 0, "converged": False, "error": ""}
    try:
        init = (b0, initial_theta(b0, x, y, rho, point))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConverged)
            est = alternate(x, y, supports, point, init=init)
        row.update(
            bic=bic(est.b_infty, est.theta_infty, x, y),
            card_B=int(np.count_nonzero(est.b_infty)),
            card_Theta=int(np.count_nonzero(est.theta_infty)),
            iterations=est.iterations,
            converged=est.converged,
            error=";".join(f for f in est.flags if not f.startswith("theta_step")),
        )
        return row, est
    except (LayeredGGMError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None


SCAN_TOLERANCES = {"outer_tol": 1e-6, "inner_tol": 1e-5, "lasso_tol": 1e-7, "glasso_tol": 1e-6}


def scan_config(cfg):
    """``cfg`` with tolerances loosened to at most :data:`SCAN_TOLERANCES` for the grid scan."""
    return replace(cfg, **{k: max(getattr(cfg, k), v) for k, v in SCAN_TOLERANCES.items()})


def grid_search(x, y, supports, grid, cfg, threads=1, keep_best=True, scan_tol=True):
    """Run the alternating search at every grid point and pick the BIC minimizer.

    BIC is computed at the pre-refit estimate.  Ties go to the larger
    ``lam`` and then the larger ``rho``.  With ``scan_tol`` the grid is
    scanned at the looser :data:`SCAN_TOLERANCES` and only the selected
    point is refitted at the tolerances of ``cfg``; the table keeps the scan
    values.  Raises :class:`TuningFailed` if every grid point fails.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p1 = x.shape
    if supports is None:
        supports = SupportSet.full(p1, y.shape[1])
    # the Lasso initializer does not depend on (lam, rho)
    lambda0 = replace(cfg, lam=0.0, rho=0.0).resolved(n, p1).lambda0
    b0 = initial_b(x, y, supports, lambda0, cfg)
    points = grid.points()
    scan = scan_config(cfg) if scan_tol else cfg

    def one(pt):
        return _evaluate(x, y, supports, scan, pt[0], pt[1], b0)

    if threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, points))
    else:
        results = [one(pt) for pt in points]

    table = [row for row, _ in results]
    ok = [(row["bic"], -row["lambda"], -row["rho"], i) for i, (row, est) in enumerate(results)
          if est is not None and np.isfinite(row["bic"])]
    if not ok:
        raise TuningFailed(f"all {len(points)} grid points failed; first error: {table[0]['error']}")
    i = min(ok)[3]
    row, est = results[i]
    if scan is not cfg and keep_best:
        polished, est_full = _evaluate(x, y, supports, cfg, row["lambda"], row["rho"], b0)
        if est_full is not None:
            est = est_full
        else:
            log.warning("refit at the selected point failed (%s); keeping the scan estimate", polished["error"])
    log.info("BIC selected lam=%.4g rho=%.4g (bic=%.6g)", row["lambda"], row["rho"], row["bic"])
    return TuningResult(row["lambda"], row["rho"], table, est if keep_best else None)


def write_bic_table(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        w.writeheader()
        for row in table:
            out = dict(row)
            for key in ("lambda", "rho", "bic"):
                out[key] = repr(float(out[key]))
            w.writerow(out)
