"""Per-response variable screening with de-biased Lasso p-values and a Bonferroni cut."""
import dataclasses
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import LayeredGGMError
from .solvers.debias import DebiasConfig, debias_m_matrix, debiased_lasso, default_mu

log = logging.getLogger(__name__)


class ScreeningFailed(UserWarning):
    """A response's screening regression failed; its support was opened up."""


@dataclass
class SupportSet:
    per_response: list
    alpha: float
    alpha_star: float
    p_values: np.ndarray = None
    failed: tuple = ()

    @property
    def p1(self):
        return self.p_values.shape[1] if self.p_values is not None else None

    def mask(self, p1):
        """Boolean ``p1 x p2`` matrix with ``True`` on screened-in entries."""
        out = np.zeros((p1, len(self.per_response)), dtype=bool)
        for j, idx in enumerate(self.per_response):
            out[idx, j] = True
        return out

    @classmethod
    def full(cls, p1, p2, alpha=1.0):
        idx = np.arange(p1, dtype=np.int64)
        return cls([idx.copy() for _ in range(p2)], alpha, alpha / (p1 * p2))

    def with_alpha(self, alpha):
        """Re-threshold the recorded p-values at a new level (no refitting)."""
        if self.p_values is None:
            raise ValueError("no p-values recorded")
        p2, p1 = self.p_values.shape
        alpha_star = alpha / (p1 * p2)
        per = [_select(self.p_values[j], alpha_star) for j in range(p2)]
        for j in self.failed:
            per[j] = np.arange(p1, dtype=np.int64)
        return SupportSet(per, alpha, alpha_star, self.p_values, self.failed)

    def dump_p_values(self, path):
        numkit.write_matrix_csv(path, self.p_values)


def _select(p_values, alpha_star):
    if alpha_star <= 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(p_values <= alpha_star).astype(np.int64)


def screen(x, y, alpha=0.1, threads=1, cfg=None):
    """Keep predictor ``k`` for response ``j`` iff its de-biased p-value is at most ``alpha/(p1*p2)``.

    The decorrelating matrix depends only on ``x`` and is built once.  A
    response whose regression raises is kept fully (every predictor) and a
    :class:`ScreeningFailed` warning is issued.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n, p1 = x.shape
    if y.shape[0] != n:
        raise ValueError(f"x has {n} rows but y has {y.shape[0]}")
    p2 = y.shape[1]
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    alpha_star = alpha / (p1 * p2)
    cfg = cfg or DebiasConfig()

    m_matrix = cfg.m_matrix
    if m_matrix is None:
        gram = x.T @ x / n
        if np.all(np.diag(gram) > 0):
            mu = default_mu(n, p1) if cfg.mu is None else cfg.mu
            m_matrix, _ = debias_m_matrix(gram, mu, cfg.tol, cfg.mu_sweeps, cfg.mu_steps, cfg.mu_resolution)
    shared = dataclasses.replace(cfg, m_matrix=m_matrix)

    def one(j):
        try:
            return debiased_lasso(x, y[:, j], shared).p_values, None
        except (LayeredGGMError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            return np.zeros(p1), exc

    if threads > 1 and p2 > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(p2)))
    else:
        results = [one(j) for j in range(p2)]

    p_values = np.empty((p2, p1))
    per, failed = [], []
    for j, (pv, exc) in enumerate(results):
        p_values[j] = pv
        if exc is None:
            per.append(_select(pv, alpha_star))
        else:
            warnings.warn(f"screening of response {j} failed ({exc}); keeping all predictors",
                          ScreeningFailed, stacklevel=2)
            failed.append(j)
            p_values[j] = np.nan
            per.append(np.arange(p1, dtype=np.int64))
    log.debug("screening kept %d of %d entries", sum(len(s) for s in per), p1 * p2)
    return SupportSet(per, alpha, alpha_star, p_values, tuple(failed))
