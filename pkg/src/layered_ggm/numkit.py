"""Dense numeric helpers: seeded Gaussian sampling, covariances, SPD factorizations.

Every function here is pure; randomness enters only through an explicit seed
(an int, a sequence of ints, a ``SeedSequence`` or a ``Generator``).

Matrices are exchanged on disk as headerless CSV, one row per line, written
with 17 significant digits so that a read/write round trip is lossless.
"""
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import EmptyData, NotPositiveDefinite

CSV_FMT = "%.17g"


def as_rng(seed):
    """Return a ``numpy.random.Generator`` for ``seed`` (passes generators through)."""
    return np.random.default_rng(seed)


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def cholesky_lower(a):
    """Lower Cholesky factor of the symmetrized ``a``.

    Raises
    ------
    NotPositiveDefinite
        If the factorization fails.
    """
    a = symmetrize(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return linalg.cholesky(a, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def is_spd(a):
    try:
        cholesky_lower(a)
    except NotPositiveDefinite:
        return False
    return True


def mvn_sample(sigma, n, seed):
    """Draw ``n`` i.i.d. rows from N(0, sigma).

    Rows are ``z @ L.T`` with ``L`` the lower Cholesky factor of ``sigma`` and
    ``z`` standard normal, so the stream is a pure function of ``seed``.
    """
    chol = cholesky_lower(sigma)
    z = as_rng(seed).standard_normal((int(n), chol.shape[0]))
    return z @ chol.T


def center_columns(data):
    data = np.asarray(data, dtype=float)
    if data.shape[0] == 0:
        raise EmptyData("cannot center a matrix with zero rows")
    return data - data.mean(axis=0, keepdims=True)


def sample_covariance(data):
    """``data.T @ data / n`` -- the caller is responsible for centering."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    n = data.shape[0]
    if n == 0:
        raise EmptyData("sample covariance of zero observations")
    return symmetrize(data.T @ data / n)


def log_det_spd(a):
    chol = cholesky_lower(a)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def eig_extremes(a):
    """Smallest and largest eigenvalue of the symmetric matrix ``a``."""
    w = linalg.eigvalsh(symmetrize(a))
    return float(w[0]), float(w[-1])


def inv_spd(a):
    chol = cholesky_lower(a)
    inv = linalg.cho_solve((chol, True), np.eye(chol.shape[0]))
    return symmetrize(inv)


def write_matrix_csv(path, matrix):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, matrix, delimiter=",", fmt=CSV_FMT)


def read_matrix_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
