"""Compiled inner loops for the coordinate-descent solvers.

All kernels mutate their work arrays in place and sweep coordinates in
increasing index order, so results are deterministic.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def lasso_kkt(gram, xty, sigma, lam, active, beta, grad):
    """Max subgradient violation of sigma*(b'Gb - 2b'c) + lam*|b|_1 over ``active``.

    ``grad`` must equal ``gram @ beta - xty``.
    """
    worst = 0.0
    for a in range(active.shape[0]):
        i = active[a]
        g = 2.0 * sigma * grad[i]
        if beta[i] > 0.0:
            v = abs(g + lam)
        elif beta[i] < 0.0:
            v = abs(g - lam)
        else:
            v = abs(g) - lam
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def lasso_cd(gram, xty, sigma, lam, active, beta, grad, tol, max_iter):
    """Cyclic coordinate descent for min sigma*(b'Gb - 2b'c) + lam*|b|_1.

    Only coordinates in ``active`` move.  ``beta`` and ``grad`` (which must
    equal ``gram @ beta - xty`` on entry) are updated in place.  Stops when the
    KKT residual drops to ``tol``.  Returns ``(sweeps, kkt_residual)``.
    """
    p = gram.shape[0]
    if sigma > 0.0:
        thr = lam / (2.0 * sigma)
    else:
        thr = np.inf
    kkt = lasso_kkt(gram, xty, sigma, lam, active, beta, grad)
    if kkt <= tol:
        return 0, kkt
    for sweep in range(max_iter):
        for a in range(active.shape[0]):
            i = active[a]
            gii = gram[i, i]
            old = beta[i]
            new = 0.0
            if gii > 0.0:
                z = gii * old - grad[i]
                if z > thr:
                    new = (z - thr) / gii
                elif z < -thr:
                    new = (z + thr) / gii
            d = new - old
            if d != 0.0:
                beta[i] = new
                for k in range(p):
                    grad[k] += d * gram[k, i]
        kkt = lasso_kkt(gram, xty, sigma, lam, active, beta, grad)
        if kkt <= tol:
            return sweep + 1, kkt
        if not np.isfinite(kkt):
            return sweep + 1, kkt
    return max_iter, kkt


@njit(cache=True, nogil=True)
def glasso_bcd(s, pen, w, coef, tol, inner_tol, max_iter, max_inner):
    """Block coordinate descent on the covariance side (one column at a time).

    Minimizes -logdet(T) + tr(S T) + sum_{i != j} pen[i, j] |T_ij|.  ``w`` is the
    running covariance estimate (diagonal pinned to ``diag(s)``), ``coef[:, j]``
    the column-``j`` regression coefficients (``coef[j, j]`` unused).  Both are
    updated in place.  Returns ``(sweeps, max_abs_change_of_last_sweep)``.
    """
    p = s.shape[0]
    w12 = np.empty(p)
    change = np.inf
    for sweep in range(max_iter):
        change = 0.0
        for j in range(p):
            # w12 = W11 @ beta over k != j
            for k in range(p):
                acc = 0.0
                if k != j:
                    for l in range(p):
                        if l != j:
                            acc += w[k, l] * coef[l, j]
                w12[k] = acc
            for it in range(max_inner):
                delta = 0.0
                for k in range(p):
                    if k == j:
                        continue
                    wkk = w[k, k]
                    old = coef[k, j]
                    r = s[k, j] - (w12[k] - wkk * old)
                    t = pen[k, j]
                    new = 0.0
                    if r > t:
                        new = (r - t) / wkk
                    elif r < -t:
                        new = (r + t) / wkk
                    d = new - old
                    if d != 0.0:
                        coef[k, j] = new
                        for l in range(p):
                            if l != j:
                                w12[l] += d * w[l, k]
                        if abs(d) > delta:
                            delta = abs(d)
                if delta < inner_tol:
                    break
            for k in range(p):
                if k != j:
                    d = abs(w12[k] - w[k, j])
                    if d > change:
                        change = d
                    w[k, j] = w12[k]
                    w[j, k] = w12[k]
        if change < tol:
            return sweep + 1, change
    return max_iter, change


@njit(cache=True, nogil=True)
def glasso_precision(w, coef):
    """Recover the precision matrix from the converged (w, coef) pair."""
    p = w.shape[0]
    theta = np.zeros((p, p))
    for j in range(p):
        acc = 0.0
        for k in range(p):
            if k != j:
                acc += w[k, j] * coef[k, j]
        tjj = 1.0 / (w[j, j] - acc)
        theta[j, j] = tjj
        for k in range(p):
            if k != j:
                theta[k, j] = -coef[k, j] * tjj
    return theta


@njit(cache=True, nogil=True)
def b_column_pass(gram, cmat, b, resid, src, theta, act_ptr, act_idx, lam, tol, max_iter):
    """One cyclic pass over the columns of ``B`` for the multi-response weighted Lasso.

    Column ``j`` minimizes ``theta_jj*(b'Gb - 2b'c_j) + lam*|b|_1`` with
    ``c_j = C_j + sum_{i != j} theta_ij * src[:, i] / theta_jj``, where
    ``src[:, i] = C_i - G B_i``.  ``resid`` is refreshed after every column;
    passing ``src is resid`` gives Gauss-Seidel updates, a frozen copy gives
    Jacobi updates.  Active coordinates of column ``j`` are
    ``act_idx[act_ptr[j]:act_ptr[j+1]]``.  Returns
    ``(max_abs_change, total_sweeps, worst_kkt)``.
    """
    p1, p2 = b.shape
    xty = np.empty(p1)
    grad = np.empty(p1)
    beta = np.empty(p1)
    change = 0.0
    total = 0
    worst = 0.0
    for j in range(p2):
        tjj = theta[j, j]
        for k in range(p1):
            acc = 0.0
            for i in range(p2):
                if i != j:
                    tij = theta[i, j]
                    if tij != 0.0:
                        acc += tij * src[k, i]
            xty[k] = cmat[k, j] + acc / tjj
        active = act_idx[act_ptr[j]:act_ptr[j + 1]]
        for k in range(p1):
            beta[k] = b[k, j]
        for k in range(p1):
            acc = 0.0
            for l in range(p1):
                if beta[l] != 0.0:
                    acc += gram[k, l] * beta[l]
            grad[k] = acc - xty[k]
        sweeps, kkt = lasso_cd(gram, xty, tjj, lam, active, beta, grad, tol, max_iter)
        total += sweeps
        if kkt > worst:
            worst = kkt
        for k in range(p1):
            d = abs(beta[k] - b[k, j])
            if d > change:
                change = d
            b[k, j] = beta[k]
        for k in range(p1):
            acc = 0.0
            for l in range(p1):
                if beta[l] != 0.0:
                    acc += gram[k, l] * beta[l]
            resid[k, j] = cmat[k, j] - acc
    return change, total, worst
