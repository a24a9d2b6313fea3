"""Gaussian random field simulation on grids and sampling of observations.

Two simulators are provided: dense Cholesky for small grids, and spectral
cosine-wave sums

    Z(x) = sqrt(2 / N) sum_k w_k(x) cos(<omega_k, x> + phi_k)

with frequencies ``omega_k`` drawn from a spectral density ``g`` and phases
uniform on ``[0, 2 pi)``.  For stationary models ``w_k = sqrt(sill)``; for
the nonstationary Matern model ``w_k(x) = sqrt(f_x(omega_k) / g(omega_k))``
with ``f_x`` the local spectral density.

All randomness comes from numpy's PCG64 generator seeded through
``SeedSequence``; sub-streams are spawned per component so that results
depend only on the seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numba import njit, prange
from scipy.special import ndtr

from .kernels import Kernel, KernelParams, LocalParamField, _bilinear

log = logging.getLogger(__name__)

RNG_NAME = "numpy.random.PCG64 via SeedSequence"


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn(seed, n):
    """``n`` independent generators derived deterministically from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(n)]


@dataclass(frozen=True)
class Grid:
    """Regular ``nx x ny`` grid of cell centers; row-major, x varying fastest."""

    nx: int
    ny: int
    bounds: tuple = ((0.0, 1.0), (0.0, 1.0))

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs nx, ny >= 1")

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def xs(self):
        (x0, x1), _ = self.bounds
        return x0 + (np.arange(self.nx) + 0.5) * (x1 - x0) / self.nx

    @property
    def ys(self):
        _, (y0, y1) = self.bounds
        return y0 + (np.arange(self.ny) + 0.5) * (y1 - y0) / self.ny

    def coords(self):
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def interpolate(self, values, points):
        """Bilinear interpolation of cell values, constant beyond the outer centers."""
        v = np.asarray(values, float).reshape(self.shape)
        return _bilinear(self.xs, self.ys, v, points)


def simulate_dense(points, cov, seed, jitter=1e-10):
    """Exact simulation by dense Cholesky of ``cov(points, points)``.

    ``points`` may be a Grid or an ``(m, 2)`` array.  Returns a flat array.
    """
    X = points.coords() if isinstance(points, Grid) else np.atleast_2d(np.asarray(points, float))
    if len(X) > 20000:
        raise ValueError(f"dense simulation limited to 20000 points, got {len(X)}")
    K = cov(X, X)
    try:
        L = sla.cholesky(K, lower=True)
    except sla.LinAlgError:
        sill = float(np.max(np.diag(K)))
        try:
            L = sla.cholesky(K + jitter * sill * np.eye(len(X)), lower=True)
        except sla.LinAlgError as exc:
            raise np.linalg.LinAlgError("covariance not positive definite") from exc
    return L @ _rng(seed).standard_normal(len(X))


# ---------------------------------------------------------------- spectra

_SPH_BOUND = 4.0  # sup of normalized sphere spectrum / half-Cauchy density


def _radial_matern(rng, n, scale, nu):
    """Radii of 2-D frequencies for the Matern(scale, nu) covariance.

    The 2-D spectral density is ``nu a^2 / pi (1 + a^2 |w|^2)^-(nu+1)``, whose
    radial CDF ``1 - (1 + a^2 r^2)^-nu`` inverts in closed form.
    """
    u = rng.random(n)
    return np.sqrt(np.expm1(-np.log1p(-u) / nu)) / scale


def _radial_sphere3(rng, n):
    """Draws of ``x = k R`` from the density ``(6/pi) (sin x - x cos x)^2 / x^4``.

    This is the radial law of the 3-D spectrum of the spherical model
    (self-convolution of a ball indicator); rejection from a half-Cauchy.
    """
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = max(2 * (n - filled), 64)
        x = np.tan(0.5 * np.pi * rng.random(m))
        u = rng.random(m)
        with np.errstate(invalid="ignore", divide="ignore"):
            h = (6.0 / np.pi) * (np.sin(x) - x * np.cos(x)) ** 2 / x**4
        g = 2.0 / (np.pi * (1.0 + x * x))
        acc = x[(x > 0) & (u * _SPH_BOUND * g < h)]
        take = acc[: n - filled]
        out[filled:filled + len(take)] = take
        filled += len(take)
    return out


def sample_frequencies(rng, family, n, scale, smoothness=None):
    """2-D frequencies whose characteristic function is the correlation."""
    if family == "gaussian":
        return rng.normal(scale=np.sqrt(2.0) / scale, size=(n, 2))
    if family in ("exponential", "matern"):
        nu = 0.5 if family == "exponential" else float(smoothness)
        r = _radial_matern(rng, n, scale, nu)
        t = 2.0 * np.pi * rng.random(n)
        return np.column_stack([r * np.cos(t), r * np.sin(t)])
    if family == "spherical":
        k = _radial_sphere3(rng, n) / (0.5 * scale)
        # uniform direction on the 2-sphere, keep the planar components
        cz = 2.0 * rng.random(n) - 1.0
        t = 2.0 * np.pi * rng.random(n)
        s = np.sqrt(1.0 - cz * cz)
        return np.column_stack([k * s * np.cos(t), k * s * np.sin(t)])
    raise ValueError(f"no spectral sampler for family {family!r}")


@njit(parallel=True, cache=True)
def _wave_sum(X, om, ph):
    m = X.shape[0]
    out = np.zeros(m)
    for i in prange(m):
        x, y = X[i, 0], X[i, 1]
        s = 0.0
        for k in range(om.shape[0]):
            s += np.cos(om[k, 0] * x + om[k, 1] * y + ph[k])
        out[i] = s
    return out


@dataclass(frozen=True)
class Component:
    """One stationary term ``sill * rho(h / scale)`` of a nested model."""

    family: str
    sill: float
    scale: float
    smoothness: float | None = None

    @property
    def kernel(self):
        return Kernel(self.family, KernelParams(self.sill, self.scale, self.smoothness))


def nested_covariance(components):
    """Covariance callable ``cov(X, Y)`` for a sum of stationary components."""
    def cov(X, Y):
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        d = np.sqrt(((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1))
        return sum(c.kernel(d) for c in components)
    return cov


def simulate_spectral(points, components, n_waves, seed):
    """Stationary cosine-wave simulation of a nested model.

    Each wave picks a component with probability proportional to its sill,
    so the sum has the mixture spectrum and total variance ``sum(sills)``.
    """
    X = points.coords() if isinstance(points, Grid) else np.atleast_2d(np.asarray(points, float))
    if n_waves < 1:
        raise ValueError("need at least one wave")
    sills = np.array([c.sill for c in components], float)
    total = float(sills.sum())
    r_pick, r_freq, r_phase = spawn(seed, 3)
    which = r_pick.choice(len(components), size=n_waves, p=sills / total)
    om = np.empty((n_waves, 2))
    for i, c in enumerate(components):
        sel = which == i
        om[sel] = sample_frequencies(r_freq, c.family, int(sel.sum()), c.scale, c.smoothness)
    ph = 2.0 * np.pi * r_phase.random(n_waves)
    return np.sqrt(2.0 * total / n_waves) * _wave_sum(np.ascontiguousarray(X), om, ph)


# -------------------------------------------------------- nonstationary


@dataclass(frozen=True)
class SpectralConfig:
    """Cosine-wave settings; ``instrumental = (scale, nu)`` or None for the
    field's medians (geometric mean of the two median scales)."""

    n_waves: int = 10000
    seed: int = 0
    instrumental: tuple | None = None
    max_ratio: float = 1e6

    def __post_init__(self):
        if self.n_waves < 1:
            raise ValueError("need at least one wave")


def instrumental_params(field):
    a = float(np.sqrt(np.median(field.a1) * np.median(field.a2)))
    return a, float(np.median(field.nu))


@njit(cache=True)
def _log_local_density(om0, om1, a1, a2, ang, nu):
    """log of ``nu/pi |S|^1/2 (1 + w^T S w)^-(nu+1)``, S = R diag(a1^2, a2^2) R^T."""
    c, s = np.cos(ang), np.sin(ang)
    u1 = c * om0 + s * om1
    u2 = -s * om0 + c * om1
    q = a1 * a1 * u1 * u1 + a2 * a2 * u2 * u2
    return np.log(nu / np.pi) + np.log(a1 * a2) - (nu + 1.0) * np.log1p(q)


@njit(cache=True)
def _max_log_ratio(a1, a2, ang, nu, om, logg):
    out = np.full(om.shape[0], -np.inf)
    for k in range(om.shape[0]):
        for i in range(a1.shape[0]):
            v = _log_local_density(om[k, 0], om[k, 1], a1[i], a2[i], ang[i], nu[i]) - logg[k]
            if v > out[k]:
                out[k] = v
    return out


@njit(parallel=True, cache=True)
def _weighted_wave_sum(X, a1, a2, ang, nu, om, ph, logg, logcap):
    m = X.shape[0]
    out = np.zeros(m)
    w2 = np.zeros(m)
    for i in prange(m):
        s = 0.0
        t = 0.0
        for k in range(om.shape[0]):
            lr = _log_local_density(om[k, 0], om[k, 1], a1[i], a2[i], ang[i], nu[i]) - logg[k]
            if lr > logcap:
                lr = logcap
            w = np.exp(0.5 * lr)
            s += w * np.cos(om[k, 0] * X[i, 0] + om[k, 1] * X[i, 1] + ph[k])
            t += w * w
        out[i] = s
        w2[i] = t
    return out, w2


@dataclass
class SpectralResult:
    values: np.ndarray
    mean_sq_weight: np.ndarray  # (1/N) sum_k w_k(x)^2, the conditional variance
    n_rejected: int
    instrumental: tuple


def simulate_nonstationary(points, field, cfg=SpectralConfig()):
    """Importance-weighted cosine-wave simulation of the nonstationary Matern model.

    Waves whose importance ratio exceeds ``cfg.max_ratio`` at some node of
    the parameter grid are rejected and redrawn; the count is returned.
    """
    X = points.coords() if isinstance(points, Grid) else np.atleast_2d(np.asarray(points, float))
    X = np.ascontiguousarray(X)
    a, nu_g = cfg.instrumental or instrumental_params(field)
    r_freq, r_phase = spawn(cfg.seed, 2)
    N = cfg.n_waves
    logcap = float(np.log(cfg.max_ratio))
    na1, na2, nang, nnu = (np.ascontiguousarray(np.ravel(v), dtype=float)
                           for v in (field.a1, field.a2, field.angle, field.nu))

    def draw(n):
        om = sample_frequencies(r_freq, "matern", n, a, nu_g)
        logg = (np.log(nu_g / np.pi) + 2.0 * np.log(a)
                - (nu_g + 1.0) * np.log1p(a * a * (om * om).sum(1)))
        return om, logg

    om, logg = draw(N)
    rejected = 0
    for _ in range(100):
        bad = _max_log_ratio(na1, na2, nang, nnu, om, logg) > logcap
        nb = int(bad.sum())
        if nb == 0:
            break
        rejected += nb
        om[bad], logg[bad] = draw(nb)
    else:
        raise FloatingPointError(
            "importance ratios keep overflowing; widen the instrumental density")
    if rejected:
        log.info("rejected and redrew %d waves with excessive importance ratio", rejected)
    ph = 2.0 * np.pi * r_phase.random(N)
    a1, a2, ang, nu = field.at(X)
    s, w2 = _weighted_wave_sum(X, a1, a2, ang, nu, om, ph, logg, logcap)
    return SpectralResult(np.sqrt(2.0 / N) * s, w2 / N, rejected, (a, nu_g))


def random_param_field(seed, n_nodes=51, scale=0.5, a_range=(0.1, 1.1), nu_range=(0.5, 2.0),
                       n_waves=2000, bounds=((0.0, 1.0), (0.0, 1.0))):
    """Smooth random anisotropy field with smoothness decreasing upward.

    ``a1``, ``a2`` and ``angle`` are uniform transforms ``Phi(G)`` of
    independent unit-variance Gaussian-covariance fields with the given
    scale; ``nu`` goes linearly from ``nu_range[1]`` at the bottom to
    ``nu_range[0]`` at the top.
    """
    xs = np.linspace(bounds[0][0], bounds[0][1], n_nodes)
    ys = np.linspace(bounds[1][0], bounds[1][1], n_nodes)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    comp = [Component("gaussian", 1.0, scale)]
    seeds = np.random.SeedSequence(seed).spawn(3)
    u = [ndtr(simulate_spectral(nodes, comp, n_waves, s)).reshape(gx.shape) for s in seeds]
    lo, hi = a_range
    t = (gy - ys[0]) / (ys[-1] - ys[0]) if n_nodes > 1 else np.zeros_like(gy)
    nu = nu_range[1] + (nu_range[0] - nu_range[1]) * t
    return LocalParamField(xs, ys, lo + (hi - lo) * u[0], lo + (hi - lo) * u[1],
                           np.pi * u[2] * (1 - 1e-12), nu)


def sample_locations(grid, values, n, seed):
    """``n`` uniform points over the grid domain with bilinearly interpolated values."""
    if n < 1:
        raise ValueError("n must be >= 1")
    (x0, x1), (y0, y1) = grid.bounds
    u = _rng(seed).random((n, 2))
    pts = np.column_stack([x0 + (x1 - x0) * u[:, 0], y0 + (y1 - y0) * u[:, 1]])
    return pts, grid.interpolate(values, pts)
