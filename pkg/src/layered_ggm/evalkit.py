"""Support-recovery metrics and structural diagnostics of precision/coefficient matrices."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numkit
from .errors import TooLarge

ZERO_THRESHOLD = 1e-12
INCOHERENCE_MAX_P = 50


@dataclass
class MetricsReport:
    sen: float
    spe: float
    mcc: float
    rel_fnorm: float
    tp: int
    fp: int
    tn: int
    fn: int

    def as_dict(self):
        return asdict(self)


def mcc_from_counts(tp, fp, tn, fn):
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def support_metrics(estimate, truth, off_diagonal_only=False):
    """Compare nonzero patterns (``|v| > 1e-12``) and report SEN, SPE, MCC and relative Frobenius error.

    With ``off_diagonal_only`` (precision matrices) only the strict upper
    triangle is counted; ``rel_fnorm`` always uses the full matrices.
    SEN is 1 when there are no true positives to find; SPE likewise.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    if off_diagonal_only:
        if truth.ndim != 2 or truth.shape[0] != truth.shape[1]:
            raise ValueError("off_diagonal_only needs square matrices")
        iu = np.triu_indices(truth.shape[0], 1)
        est_nz = np.abs(estimate[iu]) > ZERO_THRESHOLD
        true_nz = np.abs(truth[iu]) > ZERO_THRESHOLD
    else:
        est_nz = np.abs(estimate) > ZERO_THRESHOLD
        true_nz = np.abs(truth) > ZERO_THRESHOLD
    tp = int(np.sum(est_nz & true_nz))
    fp = int(np.sum(est_nz & ~true_nz))
    tn = int(np.sum(~est_nz & ~true_nz))
    fn = int(np.sum(~est_nz & true_nz))
    sen = tp / (tp + fn) if tp + fn else 1.0
    spe = tn / (tn + fp) if tn + fp else 1.0
    norm = np.linalg.norm(truth)
    diff = np.linalg.norm(estimate - truth)
    rel = diff / norm if norm > 0 else (0.0 if diff == 0 else math.inf)
    return MetricsReport(sen, spe, mcc_from_counts(tp, fp, tn, fn), float(rel), tp, fp, tn, fn)


# --- node capacities -----------------------------------------------------------

def capacity(theta):
    """Maximum absolute row sum."""
    theta = np.asarray(theta, dtype=float)
    return float(np.abs(theta).sum(axis=1).max()) if theta.size else 0.0


def capacity_in(b):
    """Maximum absolute column sum (incoming weight of a target node)."""
    b = np.asarray(b, dtype=float)
    return float(np.abs(b).sum(axis=0).max()) if b.size else 0.0


def capacity_out(b):
    """Maximum absolute row sum (outgoing weight of a source node)."""
    return capacity(b)


def node_capacities(truth):
    return {
        "theta": {m: capacity(t) for m, t in truth.precisions.items()},
        "coeff_in": {st: capacity_in(b) for st, b in truth.coeff.items()},
        "coeff_out": {st: capacity_out(b) for st, b in truth.coeff.items()},
    }


def super_layer_precision(theta1, theta2, b12):
    """Precision of ``(X, Y)`` when ``X ~ N(0, inv(theta1))`` and ``Y = X B + E``, ``E ~ N(0, inv(theta2))``.

    ``P' diag(theta1, theta2) P`` with ``P = [[I, 0], [-B', I]]``.
    """
    p1, p2 = b12.shape
    p = np.block([[np.eye(p1), np.zeros((p1, p2))], [-b12.T, np.eye(p2)]])
    d = np.block([[theta1, np.zeros((p1, p2))], [np.zeros((p2, p1)), theta2]])
    return numkit.symmetrize(p.T @ d @ p)


def eigen_lower_bound(truth):
    """Lower bound on the smallest eigenvalue of the covariance of layers 0 and 1, and its actual value.

    ``bound = 1 / (v(T1) v(T2) (1 + (v_in(B) + v_out(B)) / 2)^2)`` with
    ``v`` the capacities above.
    """
    theta1, theta2 = truth.precisions[0], truth.precisions[1]
    b12 = truth.coeff.get((0, 1), np.zeros((truth.layer_dims[0], truth.layer_dims[1])))
    growth = 1.0 + 0.5 * (capacity_in(b12) + capacity_out(b12))
    bound = 1.0 / (capacity(theta1) * capacity(theta2) * growth**2)
    _, lmax = numkit.eig_extremes(super_layer_precision(theta1, theta2, b12))
    return bound, 1.0 / lmax


# --- structural conditions ---------------------------------------------------

@dataclass
class StructureReport:
    diag_dominant: bool
    dominance_margin: float
    psi: np.ndarray
    incoherence_margin: float


def incoherence_margin(theta):
    """``1 - max_{e outside S} |H_eS inv(H_SS)|_1`` with ``H = inv(Theta) kron inv(Theta)`` and ``S = supp(Theta)``."""
    theta = np.asarray(theta, dtype=float)
    p = theta.shape[0]
    if p > INCOHERENCE_MAX_P:
        raise TooLarge(f"incoherence needs a {p * p}x{p * p} Hessian; limit is p <= {INCOHERENCE_MAX_P}")
    sigma = numkit.inv_spd(theta)
    h = np.kron(sigma, sigma)
    support = np.flatnonzero(np.abs(theta.ravel()) > ZERO_THRESHOLD)
    comp = np.flatnonzero(np.abs(theta.ravel()) <= ZERO_THRESHOLD)
    if comp.size == 0:
        return 1.0
    h_ss = h[np.ix_(support, support)]
    h_es = h[np.ix_(comp, support)]
    gamma = np.linalg.solve(h_ss.T, h_es.T).T
    return float(1.0 - np.abs(gamma).sum(axis=1).max())


def structure_checks(theta, incoherence=True):
    """Diagonal dominance (absolute off-diagonal sums), signed row gaps ``psi`` and the incoherence margin."""
    theta = np.asarray(theta, dtype=float)
    diag = np.diag(theta)
    off = theta - np.diag(diag)
    psi = diag - off.sum(axis=1)
    margins = diag - np.abs(off).sum(axis=1)
    margin = float(margins.min()) if margins.size else 0.0
    inc = incoherence_margin(theta) if incoherence else math.nan
    return StructureReport(bool(margin > 0), margin, psi, inc)
