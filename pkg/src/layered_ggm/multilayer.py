"""M-layer fits as a sequence of two-layer problems plus a bottom-layer graphical Lasso.

The likelihood of a layered model factorizes over layers: layer ``t`` given
all earlier layers is a multivariate regression with its own error
precision, and layer 0 is a plain Gaussian graphical model.  Each factor is
fitted on its own; stage ``t`` regresses layer ``t`` on the column-wise
concatenation of layers ``0..t-1`` (the "super layer").
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkit
from .errors import BadConfig, LayeredGGMError, StageError
from .solvers.glasso import GlassoProblem, solve_glasso
from .twolayer import PenaltyConfig, StabilityConfig, fit_two_layer

log = logging.getLogger(__name__)

BOTTOM = "bottom"


@dataclass
class Stage:
    """One regression of the decomposition; ``sources[k]`` owns ``design[:, offsets[k]:offsets[k + 1]]``."""

    target: int
    design: np.ndarray
    response: np.ndarray
    sources: tuple
    offsets: tuple

    def split(self, b):
        """Cut a ``design x response`` coefficient matrix into per-source-layer blocks."""
        return {(s, self.target): b[self.offsets[k]:self.offsets[k + 1]] for k, s in enumerate(self.sources)}


def decompose(dataset):
    """Stages for targets ``M-1`` down to ``1`` followed by the bottom-layer marker ``(layers[0], None, BOTTOM)``.

    Design columns are layer-major: all of layer 0, then layer 1, and so on.
    """
    layers = [np.asarray(x, dtype=float) for x in dataset.layers]
    if len(layers) < 2:
        raise BadConfig("a layered model needs at least two layers")
    dims = [x.shape[1] for x in layers]
    out = []
    for t in range(len(layers) - 1, 0, -1):
        offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(dims[:t])]))
        design = np.hstack(layers[:t])
        out.append(Stage(t, design, layers[t], tuple(range(t)), offsets))
    out.append((layers[0], None, BOTTOM))
    return out


@dataclass
class MultiLayerEstimate:
    coeff_hat: dict
    precision_hat: dict
    per_stage: dict
    bottom_theta: np.ndarray
    bottom_rho: float = math.nan
    layer_dims: list = field(default_factory=list)

    def export(self, out_dir):
        """Write ``B_s_t.csv``, ``Theta_m.csv`` and a ``manifest.json`` listing them."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for (s, t), b in sorted(self.coeff_hat.items()):
            name = f"B_{s}_{t}.csv"
            numkit.write_matrix_csv(out_dir / name, b)
            files[f"B_{s}_{t}"] = name
        for m, theta in sorted(self.precision_hat.items()):
            name = f"Theta_{m}.csv"
            numkit.write_matrix_csv(out_dir / name, theta)
            files[f"Theta_{m}"] = name
        penalties = {
            str(t): {"lam": est.penalties.lam, "rho": est.penalties.rho, "rho_tilde": est.penalties.rho_tilde}
            for t, est in sorted(self.per_stage.items())
        }
        manifest = {
            "kind": "multilayer_estimate",
            "layer_dims": list(self.layer_dims),
            "bottom_rho": self.bottom_rho,
            "penalties": penalties,
            "files": files,
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return manifest


def glasso_bic(theta, s, n):
    edges = (np.count_nonzero(theta) - theta.shape[0]) / 2.0
    return float(np.sum(s * theta)) - numkit.log_det_spd(theta) + math.log(n) / n * edges


def bottom_glasso(x, rho=None, grid_size=6, tol=1e-8):
    """Graphical Lasso on the sample covariance of ``x``.

    With ``rho=None`` the penalty is picked by BIC over ``grid_size`` values
    on ``[0, 0.5 sqrt(log p / n)]`` (ties go to the larger penalty).
    Returns ``(theta, rho)``.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    s = numkit.sample_covariance(numkit.center_columns(x))
    if rho is not None:
        return solve_glasso(GlassoProblem(s, rho, tol=tol, ridge=True)).theta, float(rho)
    grid = np.linspace(0.0, 0.5 * math.sqrt(math.log(max(p, 2)) / n), grid_size)
    best = None
    warm = None
    for r in grid[::-1]:
        fit = solve_glasso(GlassoProblem(s, r, tol=tol, ridge=True), warm=warm)
        warm = fit
        score = glasso_bic(fit.theta, s, n)
        if best is None or score < best[0]:
            best = (score, fit.theta, float(r))
    return best[1], best[2]


def _stage_cfg(cfg, t):
    if isinstance(cfg, dict):
        return cfg.get(t, PenaltyConfig())
    return cfg


def fit_multilayer(dataset, cfg=None, alpha=0.1, stability=None, bottom_rho=None, threads=1, order=None, tuning=None):
    """Fit every regression stage with :func:`fit_two_layer` and the bottom layer by glasso.

    ``cfg`` is one :class:`PenaltyConfig` for all stages or a dict keyed by
    target layer; ``tuning`` is an optional grid used by every stage whose
    penalties are unset.  Stages share no parameters, so ``order`` (a permutation
    of the target layers) and ``threads`` only change scheduling.  Errors are
    re-raised as :class:`StageError` labelled ``stage<t>/<step>``.
    """
    stages = decompose(dataset)
    x_bottom = stages.pop()[0]
    by_target = {st.target: st for st in stages}
    if order is None:
        order = [st.target for st in stages]
    if sorted(order) != sorted(by_target):
        raise BadConfig(f"order {order} is not a permutation of stages {sorted(by_target)}")
    if stability is None:
        stability = StabilityConfig()

    def run(t):
        st = by_target[t]
        try:
            return fit_two_layer(st.design, st.response, _stage_cfg(cfg, t) or PenaltyConfig(), alpha,
                                 tuning=tuning, stability=stability)
        except StageError as exc:
            raise StageError(f"stage{t}/{exc.stage}", exc.cause) from exc
        except LayeredGGMError as exc:
            raise StageError(f"stage{t}", exc) from exc

    if threads > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = dict(zip(order, pool.map(run, order)))
    else:
        fits = {t: run(t) for t in order}

    try:
        theta0, rho0 = bottom_glasso(x_bottom, bottom_rho)
    except LayeredGGMError as exc:
        raise StageError("bottom", exc) from exc

    coeff, precision = {}, {0: theta0}
    for t, est in fits.items():
        coeff.update(by_target[t].split(est.b_hat))
        precision[t] = est.theta_hat
    per_stage = {t: fits[t] for t in sorted(fits)}
    dims = [np.asarray(x).shape[1] for x in dataset.layers]
    return MultiLayerEstimate(coeff, dict(sorted(precision.items())), per_stage, theta0, rho0, dims)
