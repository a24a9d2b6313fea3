"""LASSO regularization path by coordinate descent, K-fold CV and penalty rules.

The problem solved at each penalty is

    min_b  |y - ybar - Xs b|^2 / (2 n) + lam |b|_1

where ``Xs`` holds the centered columns of ``X`` scaled to unit empirical
norm (``|x|^2 / n = 1``).  Coordinate descent runs on the ``p x p`` Gram
matrix, which suits ``n >> p`` designs such as a few thousand points by a
few thousand basis functions.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve
from numba import njit


@njit(cache=True)
def _soft(z, lam, gjj):
    if z > lam:
        return (z - lam) / gjj
    if z < -lam:
        return (z + lam) / gjj
    return 0.0


@njit(cache=True)
def _cd(G, c, lam, beta, grad, tol, max_sweeps, chunk):
    """Cyclic coordinate descent at one penalty, updating ``beta`` in place.

    ``grad = c - G beta`` is kept exact on exit.  A full sweep is followed by
    at most ``chunk`` sweeps over the coefficients nonzero at that point;
    returns ``(converged, sweeps)`` where convergence means a full sweep
    moved no coefficient by ``tol`` or more.
    """
    p = G.shape[0]
    it = 0
    while it < max_sweeps:
        it += 1
        dmax = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            new = _soft(grad[j] + gjj * old, lam, gjj)
            if new != old:
                d = new - old
                beta[j] = new
                for i in range(p):
                    grad[i] -= d * G[j, i]
                if abs(d) > dmax:
                    dmax = abs(d)
        if dmax < tol:
            return True, it
        act = np.flatnonzero(beta)
        inner = 0
        while it < max_sweeps and inner < chunk:
            it += 1
            inner += 1
            dmax = 0.0
            for j in act:
                gjj = G[j, j]
                old = beta[j]
                new = _soft(grad[j] + gjj * old, lam, gjj)
                if new != old:
                    d = new - old
                    beta[j] = new
                    for i in act:
                        grad[i] -= d * G[j, i]
                    if abs(d) > dmax:
                        dmax = abs(d)
            if dmax < tol:
                break
        grad[:] = c - G @ beta
        if inner == chunk:
            return False, it
    return False, it


def _feature_sign(G, c, lam, beta, max_iter=20000):
    """Feature-sign active-set search for ``min b'Gb/2 - c'b + lam |b|_1``.

    Starts from ``beta`` (its support and signs) and returns the exact
    minimizer, or None if the iteration budget runs out.  Each pass either
    solves the equality-constrained problem on the active set with a
    discrete line search over sign changes, or adds the worst KKT violator.
    """
    b = beta.copy()
    theta = np.sign(b)
    atol = 1e-11 * max(lam, float(np.abs(c).max(initial=0.0)))
    stalled = False
    for _ in range(max_iter):
        A = np.flatnonzero(theta)
        grad = c - b[A] @ G[A]  # G is symmetric; row gathers are contiguous
        if len(A):
            if np.abs(grad[A] - lam * theta[A]).max() > atol:
                GA = G[np.ix_(A, A)]
                cA = c[A]
                b0 = b[A]
                # a tiny ridge keeps the step a descent direction when the
                # active columns are (nearly) linearly dependent
                ridge = 1e-10 * float(np.diag(GA).max())
                GA[np.diag_indices_from(GA)] += ridge
                try:
                    fac = cho_factor(GA, check_finite=False)
                except np.linalg.LinAlgError:
                    return None
                GA[np.diag_indices_from(GA)] -= ridge
                r = cA - lam * theta[A] - GA @ b0
                d = cho_solve(fac, r, check_finite=False)
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = -b0 / d
                ts = np.concatenate([[1.0], t[(b0 != 0) & (t > 0) & (t < 1)]])
                # objective along b0 + t d, evaluated at every candidate at once
                Gd = GA @ d
                lin = d @ (GA @ b0) - cA @ d
                vals = (ts * lin + 0.5 * ts**2 * (d @ Gd)
                        + lam * np.abs(b0 + ts[:, None] * d).sum(axis=1))
                base = lam * np.abs(b0).sum()
                noise = 1e-13 * max(base, abs(cA @ b0), 1e-300)
                if vals.min() > base + noise:
                    return None
                # a step that gains nothing beyond round-off means the active
                # set is already optimal; go look for violators instead
                if vals.min() < base - noise:
                    stalled = False
                    ti = ts[int(np.argmin(vals))]
                    new = b0 + ti * d
                    if ti < 1.0:
                        new[np.isclose(t, ti, rtol=1e-12, atol=0.0) & (b0 != 0)] = 0.0
                    b[A] = new
                    theta[A] = np.sign(new)
                    continue
                if stalled:
                    return None
                stalled = True
                theta[A] = np.sign(b0)
                A = np.flatnonzero(theta)
                grad = c - b[A] @ G[A]
        viol = np.abs(grad)
        viol[A] = 0.0
        viol[np.diag(G) <= 0] = 0.0
        j = int(np.argmax(viol))
        if viol[j] <= lam * (1.0 + 1e-9):
            return b
        theta[j] = np.sign(grad[j])
    return None


def _cd_path(G, c, lambdas, tol, max_sweeps, chunk=10, budget=200):
    """Warm-started path.  Coordinate descent runs first; when it has not
    converged after ``budget`` sweeps (strongly collinear designs), the
    penalty is solved exactly by feature-sign search from the previous
    solution, and coordinate descent resumes only if that fails."""
    p = G.shape[0]
    beta = np.zeros(p)
    grad = c.copy()
    out = np.zeros((len(lambdas), p))
    sweeps = np.zeros(len(lambdas), np.int64)
    prev = beta.copy()
    for k, lam in enumerate(lambdas):
        total = 0
        tried = False
        while total < max_sweeps:
            ok, it = _cd(G, c, lam, beta, grad, tol, min(budget, max_sweeps - total), chunk)
            total += it
            if ok:
                break
            if not tried:
                tried = True
                b = _feature_sign(G, c, lam, prev)
                if b is not None:
                    beta[:] = b
                    grad[:] = c - G @ b
                    break
        else:
            warnings.warn(f"coordinate descent hit max_sweeps at lambda={lam:.3g}",
                          RuntimeWarning, stacklevel=3)
        out[k] = beta
        sweeps[k] = total
        prev = beta.copy()
    return out, sweeps


def _moments(X, rows=None):
    """Column means, centered Gram ``Xc^T Xc`` and row count for ``X[rows]``."""
    Xr = X if rows is None else X[rows]
    n = Xr.shape[0]
    mean = np.asarray(Xr.mean(axis=0)).ravel()
    XtX = Xr.T @ Xr
    XtX = XtX.toarray() if sp.issparse(XtX) else np.asarray(XtX)
    return mean, XtX - n * np.outer(mean, mean), n


@dataclass
class LassoPath:
    """Solutions along a decreasing penalty grid.

    ``std_coefs`` are on the standardized scale; ``coefs`` and
    ``intercepts`` reproduce fits on the original design,
    ``yhat = intercept + X @ coef``.
    """

    lambdas: np.ndarray
    std_coefs: np.ndarray  # (m, p)
    coefs: np.ndarray  # (m, p)
    intercepts: np.ndarray  # (m,)
    explained_variance: np.ndarray  # (m,)
    y_variance: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    sweeps: np.ndarray
    cv_mean: np.ndarray | None = None
    cv_se: np.ndarray | None = None
    cv_folds: np.ndarray | None = None  # (folds, m) per-fold errors
    cv_seed: int | None = None

    @property
    def n_active(self):
        return (self.std_coefs != 0).sum(axis=1)

    def active(self, k):
        return np.flatnonzero(self.std_coefs[k])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "n_active", "explained_variance", "cv_mean", "cv_se"])
            for k, lam in enumerate(self.lambdas):
                cvm = "" if self.cv_mean is None else repr(float(self.cv_mean[k]))
                cvs = "" if self.cv_se is None else repr(float(self.cv_se[k]))
                w.writerow([repr(float(lam)), int(self.n_active[k]),
                            repr(float(self.explained_variance[k])), cvm, cvs])


def lambda_grid(lam_max, n_lambdas=100, min_ratio=1e-3):
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * np.geomspace(1.0, min_ratio, n_lambdas)


def _fit(mean, XtXc, Xty_c, n, ybar, yvar, lambdas, tol, max_sweeps):
    scale = np.sqrt(np.maximum(np.diag(XtXc), 0.0) / n)
    ok = scale > 0
    inv = np.where(ok, 1.0 / np.where(ok, scale, 1.0), 0.0)
    G = XtXc * np.outer(inv, inv) / n
    c = Xty_c * inv / n
    stdb, sweeps = _cd_path(np.ascontiguousarray(G), np.ascontiguousarray(c),
                            np.asarray(lambdas, float), tol, max_sweeps)
    coefs = stdb * inv
    intercepts = ybar - coefs @ mean
    expl = np.einsum("kp,pq,kq->k", stdb, G, stdb)
    return stdb, coefs, intercepts, expl, scale, sweeps, G, c


def lasso_path(X, y, lambdas=None, n_lambdas=100, min_ratio=1e-3, tol=None,
               max_sweeps=100000):
    """Coordinate-descent LASSO path with warm starts.

    Converged at a penalty when a sweep changes no standardized
    coefficient by more than ``tol`` (default ``1e-7 * sd(y)``).
    """
    X = sp.csc_matrix(X) if sp.issparse(X) else np.asarray(X, float)
    y = np.asarray(y, float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X.data if sp.issparse(X) else X))):
        raise ValueError("non-finite inputs")
    n = len(y)
    mean, XtXc, _ = _moments(X)
    ybar = float(y.mean())
    yc = y - ybar
    Xty_c = np.asarray(X.T @ yc).ravel()
    yvar = float(yc @ yc / n)
    if tol is None:
        tol = 1e-7 * max(np.sqrt(yvar), np.finfo(float).tiny)
    if lambdas is None:
        scale = np.sqrt(np.maximum(np.diag(XtXc), 0.0) / n)
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = np.where(scale > 0, np.abs(Xty_c) / np.where(scale > 0, scale, 1) / n, 0.0)
        lambdas = lambda_grid(float(corr.max()) if corr.size else 0.0, n_lambdas, min_ratio)
    lambdas = np.asarray(lambdas, float)
    if np.any(np.diff(lambdas) > 0):
        raise ValueError("lambdas must be non-increasing")
    stdb, coefs, icpt, expl, scale, sweeps, _, _ = _fit(
        mean, XtXc, Xty_c, n, ybar, yvar, lambdas, tol, max_sweeps)
    return LassoPath(lambdas, stdb, coefs, icpt, expl, yvar, mean, scale, sweeps)


def kkt_violation(X, y, path):
    """Largest KKT violation over the path, on the standardized scale."""
    X = sp.csc_matrix(X) if sp.issparse(X) else np.asarray(X, float)
    y = np.asarray(y, float)
    n = len(y)
    yc = y - y.mean()
    mean, XtXc, _ = _moments(X)
    Xty_c = np.asarray(X.T @ yc).ravel()
    scale = path.x_scale
    ok = scale > 0
    inv = np.where(ok, 1.0 / np.where(ok, scale, 1.0), 0.0)
    G = XtXc * np.outer(inv, inv) / n
    c = Xty_c * inv / n
    worst = 0.0
    for lam, b in zip(path.lambdas, path.std_coefs):
        g = c - G @ b
        act = b != 0
        v_act = np.abs(g[act] - lam * np.sign(b[act]))
        v_in = np.maximum(np.abs(g[~act & ok]) - lam, 0.0)
        worst = max(worst, v_act.max(initial=0.0), v_in.max(initial=0.0))
    return worst


def fold_ids(n, folds=5, seed=0):
    """Deterministic balanced fold assignment."""
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


def cross_validate(X, y, path=None, folds=5, seed=0, tol=None, max_sweeps=100000):
    """K-fold CV mean squared error and its standard error per penalty.

    Uses the penalty grid of ``path`` (computed on the full data if not
    given); training Gram matrices are downdated from the full one.
    Returns the path with ``cv_mean``, ``cv_se`` and ``cv_folds`` filled in.
    """
    X = sp.csr_matrix(X) if sp.issparse(X) else np.asarray(X, float)
    y = np.asarray(y, float)
    n = len(y)
    if n < folds:
        raise ValueError("need at least as many observations as folds")
    if path is None:
        path = lasso_path(X, y, tol=tol)
    lambdas = path.lambdas
    XtX = X.T @ X
    XtX = XtX.toarray() if sp.issparse(XtX) else np.asarray(XtX)
    colsum = np.asarray(X.sum(axis=0)).ravel()
    Xty = np.asarray(X.T @ y).ravel()
    ids = fold_ids(n, folds, seed)
    errs = np.zeros((folds, len(lambdas)))
    for f in range(folds):
        te = ids == f
        Xh = X[te]
        XhtXh = Xh.T @ Xh
        XhtXh = XhtXh.toarray() if sp.issparse(XhtXh) else np.asarray(XhtXh)
        ntr = n - int(te.sum())
        sum_tr = colsum - np.asarray(Xh.sum(axis=0)).ravel()
        mean = sum_tr / ntr
        XtXc = (XtX - XhtXh) - ntr * np.outer(mean, mean)
        ytr = y[~te]
        ybar = float(ytr.mean())
        Xty_tr = Xty - np.asarray(Xh.T @ y[te]).ravel()
        Xty_c = Xty_tr - ybar * sum_tr
        yvar = float(np.var(ytr))
        ftol = tol if tol is not None else 1e-7 * max(np.sqrt(yvar), np.finfo(float).tiny)
        _, coefs, icpt, _, _, _, _, _ = _fit(mean, XtXc, Xty_c, ntr, ybar, yvar, lambdas,
                                            ftol, max_sweeps)
        pred = icpt[None, :] + np.asarray(Xh @ coefs.T)
        errs[f] = np.mean((y[te][:, None] - pred) ** 2, axis=0)
    path.cv_folds = errs
    path.cv_mean = errs.mean(axis=0)
    path.cv_se = errs.std(axis=0, ddof=1) / np.sqrt(folds)
    path.cv_seed = seed
    return path


def select_by_variance_target(path, target_variance):
    """Largest penalty whose fitted values explain at least ``target_variance``.

    Returns ``(k, lambda, active_indices)``; when no penalty qualifies the
    smallest one is returned with a warning.
    """
    if target_variance < 0:
        raise ValueError("target variance must be >= 0")
    ok = np.flatnonzero(path.explained_variance >= target_variance)
    if len(ok) == 0:
        warnings.warn("variance target not reached on the path; using the smallest penalty",
                      RuntimeWarning, stacklevel=2)
        k = len(path.lambdas) - 1
    else:
        k = int(ok[0])
    return k, float(path.lambdas[k]), path.active(k)


def one_se_rule(path):
    """Largest penalty with CV error within one standard error of the minimum."""
    if path.cv_mean is None:
        raise ValueError("cross-validation results missing")
    kmin = int(np.argmin(path.cv_mean))
    bound = path.cv_mean[kmin] + path.cv_se[kmin]
    k = int(np.flatnonzero(path.cv_mean <= bound)[0])
    return k, float(path.lambdas[k]), path.active(k)
