"""Trend handling and prediction under the sparse + low-rank model.

The fitted covariance of the detrended field is

    K(x, y) = S(x, y) + P(x)^T B P(y)

with ``S`` the tapered small-scale covariance plus nugget.  Given the
posterior ``eta | z ~ N(mu, C)``, the conditional mean at ``x0`` is
``P0^T mu + s0^T S^-1 (z - P mu)`` and the conditional variance is

    s00 - s0^T S^-1 s0 + q^T C q,   q = P0 - P^T S^-1 s0,

which is exact Gaussian conditioning (it follows from the tower rule
applied to ``S(x0) | z, eta``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .dictionary import Dictionary, evaluate_design
from .sparse_linalg import assemble_sparse_cov, cholesky
from .spatial import GridIndex
from .variogram import SmallScaleModel

log = logging.getLogger(__name__)


class TrendError(ValueError):
    pass


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class TrendModel:
    """Polynomial drift in the coordinates up to total degree ``degree``."""

    degree: int = 0
    coef: np.ndarray | None = None

    @property
    def powers(self):
        return [(i, d - i) for d in range(self.degree + 1) for i in range(d, -1, -1)]

    @property
    def names(self):
        out = []
        for a, b in self.powers:
            term = "*".join(["x"] * a + ["y"] * b)
            out.append(term or "1")
        return out

    def design(self, points):
        pts = np.atleast_2d(np.asarray(points, float))
        return np.column_stack([pts[:, 0] ** a * pts[:, 1] ** b for a, b in self.powers])

    def __call__(self, points):
        if self.coef is None:
            raise TrendError("trend not fitted")
        return self.design(points) @ self.coef


def ols_detrend(points, values, trend=TrendModel()):
    """OLS trend fit; returns the fitted TrendModel and the residuals."""
    z = np.asarray(values, float)
    F = trend.design(points)
    n, L = F.shape
    if n <= L:
        raise TrendError(f"need more than {L} observations for a degree-{trend.degree} trend")
    Q, R = np.linalg.qr(F)
    d = np.abs(np.diag(R))
    tol = d.max() * max(n, L) * np.finfo(float).eps
    if np.any(d <= tol):
        bad = [trend.names[i] for i in np.flatnonzero(d <= tol)]
        raise TrendError(f"collinear drift functions: {', '.join(bad)}")
    beta = sla.solve_triangular(R, Q.T @ z)
    fitted = replace(trend, coef=beta)
    return fitted, z - F @ beta


@dataclass
class FittedModel:
    """Everything needed to predict: data, trend, covariance and posterior.

    ``small`` is the small-scale covariance of the data (nugget included);
    with ``filter_nugget`` the target covariance omits the nugget.
    """

    points: np.ndarray
    residuals: np.ndarray
    trend: TrendModel
    small: SmallScaleModel
    dictionary: Dictionary | None = None
    B: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    C: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    filter_nugget: bool = False
    _factor: object = field(default=None, repr=False)
    _P: object = field(default=None, repr=False)
    _w: object = field(default=None, repr=False)

    def __post_init__(self):
        p = 0 if self.dictionary is None else len(self.dictionary)
        if self.B.shape != (p, p) or self.mu.shape != (p,) or self.C.shape != (p, p):
            raise ValueError("B, mu and C must match the number of basis functions")

    @property
    def p(self):
        return 0 if self.dictionary is None else len(self.dictionary)

    @property
    def factor(self):
        if self._factor is None:
            A = assemble_sparse_cov(self.points, self.small.kernel, self.small.nugget)
            self._factor = cholesky(A)
        return self._factor

    @property
    def design(self):
        if self._P is None:
            n = len(self.points)
            self._P = (evaluate_design(self.dictionary, self.points) if self.p
                       else sp.csc_matrix((n, 0)))
        return self._P

    @property
    def weights(self):
        """``w = S^-1 (z - P mu)``, computed once."""
        if self._w is None:
            r = self.residuals - (self.design @ self.mu if self.p else 0.0)
            self._w = self.factor.solve(r)
        return self._w

    def target_variance(self):
        """Prior variance of the small-scale part at a target."""
        s = self.small.sill
        return s if self.filter_nugget else s + self.small.nugget

    def cross_cov(self, targets):
        """Sparse ``n x m`` covariance between data and target small-scale values."""
        tgt = np.atleast_2d(np.asarray(targets, float))
        tau = self.small.taper_range
        q, j, d = GridIndex(self.points, tau).cross(tgt, tau)
        v = self.small.kernel(d)
        if not self.filter_nugget and self.small.nugget > 0:
            v = v + self.small.nugget * (d == 0)
        keep = v != 0
        return sp.csc_matrix((v[keep], (j[keep], q[keep])), shape=(len(self.points), len(tgt)))


@dataclass
class PredictionResult:
    coords: np.ndarray
    mean: np.ndarray
    variance: np.ndarray | None = None
    n_clamped: int = 0


def _check_targets(targets):
    tgt = np.atleast_2d(np.asarray(targets, float))
    if tgt.ndim != 2 or tgt.shape[1] != 2:
        raise PredictionError(f"targets must have shape (m, 2), got {np.shape(targets)}")
    return tgt


def predict(model, targets, block=4096):
    """Conditional mean ``f0^T beta + P0^T mu + s0^T S^-1 (z - P mu)``."""
    tgt = _check_targets(targets)
    w = model.weights
    mean = np.empty(len(tgt))
    for i0 in range(0, len(tgt), block):
        t = tgt[i0:i0 + block]
        m = model.trend(t) + np.asarray(model.cross_cov(t).T @ w).ravel()
        if model.p:
            m = m + evaluate_design(model.dictionary, t) @ model.mu
        mean[i0:i0 + block] = m
    return PredictionResult(tgt, mean)


def predict_variance(model, targets, block=1024):
    """Conditional variance at each target; see the module docstring."""
    tgt = _check_targets(targets)
    f = model.factor
    P = model.design
    var = np.empty(len(tgt))
    c00 = model.target_variance()
    for i0 in range(0, len(tgt), block):
        t = tgt[i0:i0 + block]
        S0 = model.cross_cov(t)
        cols = np.flatnonzero(S0.getnnz(axis=0))
        v = np.full(len(t), c00)
        if model.p:
            Q = evaluate_design(model.dictionary, t).T.toarray()  # p x m
        if len(cols):
            S0c = S0[:, cols].toarray()
            X = f.solve(S0c)
            v[cols] -= np.einsum("ij,ij->j", S0c, X)
            if model.p:
                Q[:, cols] -= np.asarray(P.T @ X)
        if model.p:
            v += np.einsum("im,ij,jm->m", Q, model.C, Q)
        var[i0:i0 + block] = v
    neg = var < 0
    if np.any(var < -1e-10 * max(c00, 1.0)):
        raise PredictionError("negative prediction variance beyond round-off")
    n_clamped = int(neg.sum())
    if n_clamped:
        log.info("clamped %d slightly negative variances to 0", n_clamped)
        var[neg] = 0.0
    return PredictionResult(tgt, predict(model, tgt).mean, var, n_clamped)


def dense_uk_oracle(points, values, cov, targets, trend=TrendModel(), nugget_target=None):
    """Universal kriging by solving the bordered system directly (dense).

    ``cov(X, Y)`` returns the covariance matrix between point sets.
    Returns ``(mean, variance)`` at ``targets``; ``trend=None`` gives simple
    kriging with zero mean.
    """
    X = np.atleast_2d(np.asarray(points, float))
    z = np.asarray(values, float)
    T = np.atleast_2d(np.asarray(targets, float))
    if len(X) > 2000:
        raise ValueError("dense oracle limited to n <= 2000")
    K = cov(X, X)
    K0 = cov(X, T)
    k00 = np.diag(cov(T, T)) if nugget_target is None else np.full(len(T), nugget_target)
    if trend is None:
        lam = np.linalg.solve(K, K0)
        return lam.T @ z, k00 - np.einsum("ij,ij->j", K0, lam)
    F = trend.design(X)
    F0 = trend.design(T)
    L = F.shape[1]
    n = len(X)
    bordered = np.block([[K, F], [F.T, np.zeros((L, L))]])
    rhs = np.vstack([K0, F0.T])
    try:
        sol = np.linalg.solve(bordered, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular universal kriging system") from exc
    lam, lagr = sol[:n], sol[n:]
    mean = lam.T @ z
    # var = k00 - lam^T K0 - lagr^T F0^T (sign of the Lagrange term per the bordered system)
    var = k00 - np.einsum("ij,ij->j", lam, K0) - np.einsum("lj,jl->j", lagr, F0)
    return mean, var


def dense_uk_weights(points, cov, target, trend=TrendModel()):
    """Kriging weights of the bordered system at a single target."""
    X = np.atleast_2d(np.asarray(points, float))
    T = np.atleast_2d(np.asarray(target, float))
    K = cov(X, X)
    F = trend.design(X)
    L = F.shape[1]
    bordered = np.block([[K, F], [F.T, np.zeros((L, L))]])
    sol = np.linalg.solve(bordered, np.concatenate([cov(X, T)[:, 0], trend.design(T)[0]]))
    return sol[:len(X)]
