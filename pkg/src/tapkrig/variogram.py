"""Empirical variogram at short lags and WLS fitting of the small-scale model."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .kernels import Kernel, KernelParams, TaperedKernel
from .spatial import GridIndex


class VariogramFitError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class EmpiricalVariogram:
    lags: np.ndarray  # bin centers
    gamma: np.ndarray  # NaN where count == 0
    counts: np.ndarray
    edges: np.ndarray

    @property
    def nonempty(self):
        return self.counts > 0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lag", "gamma", "count"])
            for h, g, c in zip(self.lags, self.gamma, self.counts):
                w.writerow([repr(float(h)), "" if np.isnan(g) else repr(float(g)), int(c)])


@dataclass(frozen=True)
class SmallScaleModel:
    """Tapered small-scale covariance ``sill * R(h) + nugget * 1{h = 0}``.

    ``R`` is the base correlation times the taper correlation; the taper
    range is fixed and never fitted.
    """

    base_family: str = "exponential"
    scale: float = 0.1
    sill: float = 1.0
    taper_family: str = "spherical"
    taper_range: float = 0.025
    nugget: float = 0.0
    smoothness: float | None = None

    @property
    def kernel(self):
        return TaperedKernel(
            Kernel(self.base_family, KernelParams(self.sill, self.scale, self.smoothness)),
            self.taper_family, self.taper_range,
        )

    @property
    def total_variance(self):
        return self.sill + self.nugget

    def correlation(self, h):
        return self.kernel.correlation(h)

    def variogram(self, h):
        h = np.asarray(h, float)
        return self.nugget * (h > 0) + self.sill * (1.0 - self.correlation(h))

    def rescaled(self, factor):
        return replace(self, sill=self.sill * factor, nugget=self.nugget * factor)


def empirical_variogram(points, values, max_lag, n_bins=10):
    """Binned semivariance ``sum (z_i - z_j)^2 / (2 N_bin)`` on ``[0, max_lag)``."""
    if not max_lag > 0:
        raise ValueError("max_lag must be > 0")
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    pts = np.atleast_2d(np.asarray(points, float))
    z = np.asarray(values, float)
    ii, jj, dd = GridIndex(pts, max_lag).pairs(max_lag)
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    b = np.minimum((dd / max_lag * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sq = np.bincount(b, weights=(z[ii] - z[jj]) ** 2, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sq / (2.0 * counts), np.nan)
    return EmpiricalVariogram(0.5 * (edges[:-1] + edges[1:]), gamma, counts, edges)


def wls_objective(v, model):
    """``sum_b w_b (gamma_hat_b - gamma_model(h_b))^2`` with ``w_b = count_b / h_b^2``."""
    m = v.nonempty
    h = v.lags[m]
    w = v.counts[m] / h**2
    r = v.gamma[m] - model.variogram(h)
    return float(np.sum(w * r * r))


def fit_small_scale(v, template, restarts=3, seed=0):
    """Fit sill, scale and nugget of ``template`` to an empirical variogram.

    Nelder-Mead over (log sill, log scale, log nugget) with the scale box
    ``[tau/10, 10 tau]``; the best of ``restarts`` starts wins.
    """
    m = v.nonempty
    if m.sum() < 3:
        raise VariogramFitError("need at least 3 nonempty variogram bins")
    g = v.gamma[m]
    if np.all(g == 0):
        return replace(template, sill=0.0, nugget=0.0)
    tau = template.taper_range
    lo, hi = np.log(tau / 10.0), np.log(10.0 * tau)
    gmax = float(np.max(g))
    floor = np.log(gmax) - 40.0

    def unpack(t):
        return replace(template, sill=float(np.exp(t[0])),
                       scale=float(np.exp(np.clip(t[1], lo, hi))),
                       nugget=float(np.exp(t[2])))

    def obj(t):
        return wls_objective(v, unpack(t))

    # objective of the zero model sets an absolute scale for the tolerance
    fscale = float(np.sum(v.counts[m] / v.lags[m] ** 2 * g * g))
    scale0 = np.clip(template.scale, tau / 10.0, 10.0 * tau)
    g0 = float(g[0])
    starts = [
        (np.log(max(gmax - g0, 1e-3 * gmax)), np.log(scale0), np.log(max(g0, 1e-3 * gmax))),
        (np.log(gmax), np.log(tau), np.log(1e-2 * gmax)),
        (np.log(0.5 * gmax), np.log(tau / 3.0), np.log(0.5 * gmax)),
    ]
    rng = np.random.default_rng(seed)
    while len(starts) < restarts:
        starts.append((np.log(gmax) + rng.normal(), rng.uniform(lo, hi),
                       np.log(gmax) + rng.normal()))
    best = None
    for t0 in starts[:max(restarts, 1)]:
        res = optimize.minimize(
            obj, np.asarray(t0), method="Nelder-Mead",
            bounds=[(floor, None), (lo, hi), (floor, None)],
            options=dict(xatol=1e-10, fatol=1e-14 * max(obj(t0), 1e-300), maxiter=20000,
                         maxfev=40000, adaptive=True),
        )
        # restart from the optimum to escape simplex collapse
        res = optimize.minimize(
            obj, res.x, method="Nelder-Mead",
            bounds=[(floor, None), (lo, hi), (floor, None)],
            options=dict(xatol=1e-10, fatol=1e-16 * fscale, maxiter=20000, maxfev=40000,
                         adaptive=True),
        )
        if best is None or res.fun < best.fun:
            best = res
    if not np.all(np.isfinite(best.x)):
        raise VariogramFitError("variogram fit did not converge", best=best)
    model = unpack(best.x)
    # variances driven to the log floor are zero
    tiny = 1e-12 * gmax
    if model.nugget < tiny:
        model = replace(model, nugget=0.0)
    if model.sill < tiny:
        model = replace(model, sill=0.0)
    return model
