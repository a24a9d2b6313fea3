"""EM estimation of the low-rank coefficient covariance and small-scale weight.

Model: ``z = P eta + e`` with ``eta ~ N(0, B)`` and ``e ~ N(0, sigma2 A)``,
``A`` a fixed sparse small-scale correlation structure.  All quantities
involving ``A^-1`` reduce to ``A^-1 z``, ``P^T A^-1 z``, ``z^T A^-1 z`` and
``G = P^T A^-1 P``, which are computed once per EM run.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .sparse_linalg import NumericError, dense_cholesky

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EMConfig:
    tolerance: float = 1e-3
    patience: int = 20
    max_iter: int = 2000
    fix_sigma: bool = False
    track_loglik: bool = True

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class EMState:
    sigma2: float
    B: np.ndarray
    mu: np.ndarray
    C: np.ndarray
    iterations: int = 0
    converged: bool = False
    history: list = field(default_factory=list)  # (iter, sigma2, logdetB, criterion, loglik)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "sigma2", "logdetB", "criterion", "loglik"])
            for row in self.history:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


class EMCache:
    """Quantities fixed during an EM run (``A`` and ``P`` do not change)."""

    def __init__(self, z, fA, P):
        z = np.asarray(z, float)
        self.n = len(z)
        self.fA = fA
        self.Ainv_z = fA.solve(z)
        self.ztAz = float(z @ self.Ainv_z)
        self.logdetA = fA.log_det
        if P is None or P.shape[1] == 0:
            self.p = 0
            self.PtAz = np.zeros(0)
            self.G = np.zeros((0, 0))
        else:
            self.p = P.shape[1]
            Pd = P.toarray() if sp.issparse(P) else np.asarray(P, float)
            AinvP = fA.solve(Pd)
            self.PtAz = np.asarray(P.T @ self.Ainv_z).ravel()
            G = np.asarray(P.T @ AinvP)
            self.G = 0.5 * (G + G.T)


def _cache(z, fA, P, cache):
    return cache if cache is not None else EMCache(z, fA, P)


def _posterior(cache, sigma2, B):
    """Return ``(mu, C, L_B, L_M)`` with ``M = I + L_B^T G L_B / sigma2``."""
    p = cache.p
    if p == 0:
        return np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0))
    LB = dense_cholesky(B)
    M = np.eye(p) + LB.T @ cache.G @ LB / sigma2
    try:
        LM = sla.cholesky(0.5 * (M + M.T), lower=True)
    except sla.LinAlgError as exc:
        raise NumericError("posterior precision not positive definite") from exc
    # C = (G / sigma2 + B^-1)^-1 = L_B M^-1 L_B^T
    W = sla.solve_triangular(LM, LB.T, lower=True)
    C = W.T @ W
    C = 0.5 * (C + C.T)
    mu = C @ cache.PtAz / sigma2
    return mu, C, LB, LM


def e_step(z, fA, P, sigma2, B, cache=None):
    """Posterior mean and covariance of the basis coefficients.

    ``C = (P^T A^-1 P / sigma2 + B^-1)^-1`` and ``mu = C P^T A^-1 z / sigma2``.
    """
    cache = _cache(z, fA, P, cache)
    mu, C, _, _ = _posterior(cache, sigma2, np.asarray(B, float))
    return mu, C


def m_step(z, fA, P, mu, C, B_prev=None, fix_sigma=False, sigma2=None, cache=None):
    """EM updates ``B = C + mu mu^T`` and the expected residual quadratic form.

    ``sigma2 = (z^T A^-1 z - 2 mu^T P^T A^-1 z + tr(G (C + mu mu^T))) / n``,
    i.e. ``E[(z - P eta)^T A^-1 (z - P eta) | z] / n``.
    """
    cache = _cache(z, fA, P, cache)
    mu = np.asarray(mu, float)
    S = np.asarray(C, float) + np.outer(mu, mu)
    B_new = 0.5 * (S + S.T)
    if fix_sigma:
        if sigma2 is None:
            raise ValueError("fix_sigma requires the current sigma2")
        return float(sigma2), B_new
    quad = cache.ztAz - 2.0 * float(mu @ cache.PtAz) + float(np.sum(cache.G * S))
    return quad / cache.n, B_new


def _logdet_spd(M):
    L = dense_cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def stopping_criterion(sigma2_old, B_old, sigma2_new, B_new):
    """Change in ``sigma2`` plus change in ``log det B``, each the smaller
    of its absolute and relative version."""
    ds = abs(sigma2_new - sigma2_old)
    term1 = min(ds, ds / abs(sigma2_new)) if sigma2_new != 0 else ds
    if np.size(B_new) == 0:
        return term1
    try:
        ld_old = 2.0 * np.sum(np.log(np.diag(sla.cholesky(B_old, lower=True))))
        ld_new = 2.0 * np.sum(np.log(np.diag(sla.cholesky(B_new, lower=True))))
    except sla.LinAlgError as exc:
        raise NumericError("B is not positive definite") from exc
    dl = abs(ld_new - ld_old)
    term2 = min(dl, dl / abs(ld_new)) if ld_new != 0 else dl
    return float(term1 + term2)


def full_log_likelihood(z, sigma2, fA, P, B, cache=None):
    """Gaussian log-density of ``z`` under ``sigma2 A + P B P^T``.

    Log-determinant by the determinant lemma, quadratic form by Woodbury:
    ``log det = n log sigma2 + log det A + log det M`` and
    ``z^T S^-1 z = (z^T A^-1 z - |L_M^-1 L_B^T P^T A^-1 z|^2 / sigma2) / sigma2``.
    """
    cache = _cache(z, fA, P, cache)
    n = cache.n
    logdet = n * np.log(sigma2) + cache.logdetA
    quad = cache.ztAz
    if cache.p:
        LB = dense_cholesky(np.asarray(B, float))
        M = np.eye(cache.p) + LB.T @ cache.G @ LB / sigma2
        LM = sla.cholesky(0.5 * (M + M.T), lower=True)
        logdet += 2.0 * float(np.sum(np.log(np.diag(LM))))
        t = sla.solve_triangular(LM, LB.T @ cache.PtAz, lower=True)
        quad -= float(t @ t) / sigma2
    quad /= sigma2
    return -0.5 * (n * np.log(2.0 * np.pi) + logdet + quad)


def run_em(z, fA, P, sigma2, B=None, cfg=EMConfig(), cache=None):
    """Alternate E and M steps until the stopping criterion stays below
    ``cfg.tolerance`` for ``cfg.patience`` consecutive iterations."""
    cache = _cache(z, fA, P, cache)
    p = cache.p
    B = np.eye(p) if B is None else np.asarray(B, float)
    sigma2 = float(sigma2)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be > 0")
    state = EMState(sigma2, B, np.zeros(p), np.zeros((p, p)))
    ll0 = full_log_likelihood(z, sigma2, None, P, B, cache=cache) if cfg.track_loglik else np.nan
    state.history.append((0, sigma2, _logdet_spd(B) if p else 0.0, np.nan, ll0))
    streak = 0
    for it in range(1, cfg.max_iter + 1):
        mu, C, _, _ = _posterior(cache, sigma2, B)
        s_new, B_new = m_step(z, None, P, mu, C, fix_sigma=cfg.fix_sigma, sigma2=sigma2,
                              cache=cache)
        if not s_new > 0:
            raise NumericError(f"sigma2 collapsed to {s_new} at iteration {it}")
        if p:
            try:
                sla.cholesky(B_new, lower=True)
            except sla.LinAlgError:
                B_new = B_new + 1e-10 * np.trace(B_new) / p * np.eye(p)
        crit = stopping_criterion(sigma2, B, s_new, B_new)
        ll = full_log_likelihood(z, s_new, None, P, B_new, cache=cache) \
            if cfg.track_loglik else np.nan
        ldB = _logdet_spd(B_new) if p else 0.0
        state.history.append((it, s_new, ldB, crit, ll))
        sigma2, B = s_new, B_new
        streak = streak + 1 if crit < cfg.tolerance else 0
        if streak >= cfg.patience:
            state.converged = True
            break
    mu, C, _, _ = _posterior(cache, sigma2, B)
    state.sigma2, state.B, state.mu, state.C = sigma2, B, mu, C
    state.iterations = len(state.history) - 1
    if not state.converged:
        log.warning("EM stopped at max_iter=%d without meeting the stopping rule",
                    cfg.max_iter)
    return state


def nugget_ratio_reweight(sill_old, sill_new, nugget):
    """Re-inject a fixed nugget after EM rescaled the small-scale weight.

    Returns ``(structured_weight, nugget)`` with
    ``structured_weight = sill_new (1 + 1/sill_old - 1/sill_new)``; filtered
    prediction uses ``structured_weight`` alone as the signal covariance
    weight.
    """
    if not (sill_old > 0 and sill_new > 0 and nugget > 0):
        raise ValueError("all inputs must be > 0")
    w = sill_new * (1.0 + 1.0 / sill_old - 1.0 / sill_new)
    if not w > 0:
        raise ValueError(f"non-positive structured weight {w}: inconsistent estimates")
    return w, nugget
