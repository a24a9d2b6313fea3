"""Covariance and correlation kernels.

All stationary families are parametrized by a sill and a scale and are
evaluated on distances ``h``; the correlation shape is a function of
``r = h / scale``.  Compactly supported families (spherical, cubic,
wendland2) vanish exactly for ``r >= 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

FAMILIES = ("spherical", "exponential", "gaussian", "cubic", "wendland2", "matern")
COMPACT_FAMILIES = ("spherical", "cubic", "wendland2")


class KernelParameterError(ValueError):
    """Raised for invalid kernel parameters."""


def _check_family(family):
    if family not in FAMILIES:
        raise KernelParameterError(
            f"unknown kernel family {family!r}; expected one of {FAMILIES}"
        )


def matern_shape(r, nu):
    """Unit-sill Matérn correlation ``2^(1-nu)/Gamma(nu) r^nu K_nu(r)``.

    ``nu`` may be an array broadcastable against ``r``.  At ``r = 0`` the
    limit ``r^nu K_nu(r) -> Gamma(nu) 2^(nu-1)`` gives exactly 1.
    """
    r = np.asarray(r, dtype=float)
    nu = np.asarray(nu, dtype=float)
    r, nu = np.broadcast_arrays(r, nu)
    out = np.ones(r.shape)
    pos = r > 0
    if np.any(pos):
        rp, nup = r[pos], nu[pos]
        # log-space avoids overflow of r^nu for large nu
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            kv = special.kv(nup, rp)
            val = np.exp(
                (1.0 - nup) * np.log(2.0) - special.gammaln(nup)
                + nup * np.log(rp) + np.log(kv)
            )
        val[kv == 0] = 0.0
        out[pos] = val
    return out


def correlation(family, r, smoothness=None):
    """Correlation shape of ``family`` at scaled distance ``r >= 0``."""
    _check_family(family)
    r = np.abs(np.asarray(r, dtype=float))
    if family == "exponential":
        return np.exp(-r)
    if family == "gaussian":
        return np.exp(-r * r)
    if family == "matern":
        if smoothness is None or np.any(np.asarray(smoothness) <= 0):
            raise KernelParameterError("matern requires smoothness > 0")
        return matern_shape(r, smoothness)
    inside = r < 1.0
    rc = np.where(inside, r, 1.0)
    if family == "spherical":
        val = 1.0 - 1.5 * rc + 0.5 * rc**3
    elif family == "cubic":
        # cubic model: 1 - 7r^2 + 35/4 r^3 - 7/2 r^5 + 3/4 r^7
        r2 = rc * rc
        val = 1.0 - r2 * (7.0 - rc * (35.0 / 4.0 - r2 * (7.0 / 2.0 - 0.75 * r2)))
    else:
        # Wendland (d=2, k=2): (1 - r)^6 (35 r^2 + 18 r + 3) / 3
        val = (1.0 - rc) ** 6 * (35.0 * rc * rc + 18.0 * rc + 3.0) / 3.0
    return np.where(inside, val, 0.0)


@dataclass(frozen=True)
class KernelParams:
    sill: float = 1.0
    scale: float = 1.0
    smoothness: float | None = None

    def __post_init__(self):
        if not self.sill >= 0:
            raise KernelParameterError(f"sill must be >= 0, got {self.sill}")
        if not self.scale > 0:
            raise KernelParameterError(f"scale must be > 0, got {self.scale}")
        if self.smoothness is not None and not self.smoothness > 0:
            raise KernelParameterError(
                f"smoothness must be > 0, got {self.smoothness}"
            )


@dataclass(frozen=True)
class Kernel:
    """A stationary isotropic covariance ``sill * rho(h / scale)``."""

    family: str
    params: KernelParams = field(default_factory=KernelParams)

    def __post_init__(self):
        _check_family(self.family)
        if self.family == "matern" and self.params.smoothness is None:
            raise KernelParameterError("matern requires smoothness > 0")

    @property
    def compact(self):
        return self.family in COMPACT_FAMILIES

    def __call__(self, h):
        p = self.params
        return p.sill * correlation(self.family, np.asarray(h) / p.scale, p.smoothness)


def eval_kernel(family, params, h):
    """Covariance of ``family`` with ``params`` at distance(s) ``h``."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise KernelParameterError("distances must be non-negative")
    return Kernel(family, params)(h)


@dataclass(frozen=True)
class TaperedKernel:
    """Product of a base covariance with a compactly supported taper.

    The taper is a unit-sill correlation of family ``taper_family`` with
    range ``taper_range``; the product is identically zero beyond it.
    """

    base: Kernel
    taper_family: str = "spherical"
    taper_range: float = 0.025

    def __post_init__(self):
        if self.taper_family not in COMPACT_FAMILIES:
            raise KernelParameterError(
                f"taper must be compactly supported, got {self.taper_family!r}"
            )
        if not self.taper_range > 0:
            raise KernelParameterError("taper_range must be > 0")

    @property
    def sill(self):
        return self.base.params.sill

    def correlation(self, h):
        """Tapered correlation (unit sill) at distance ``h``."""
        h = np.asarray(h, dtype=float)
        p = self.base.params
        return correlation(self.base.family, h / p.scale, p.smoothness) * correlation(
            self.taper_family, h / self.taper_range
        )

    def __call__(self, h):
        return self.sill * self.correlation(h)


def eval_tapered(k, x, y):
    """Tapered covariance between points ``x`` and ``y`` (arrays of shape (..., 2))."""
    d = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
    return k(d)


# ---------------------------------------------------------------------------
# anisotropy helpers


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def anisotropy_matrix(a1, a2, angle):
    """``Sigma = R(angle) diag(a1^2, a2^2) R(angle)^T``, vectorized.

    Returns an array of shape ``broadcast(a1, a2, angle).shape + (2, 2)``.
    """
    a1, a2, angle = np.broadcast_arrays(*(np.asarray(v, float) for v in (a1, a2, angle)))
    c, s = np.cos(angle), np.sin(angle)
    l1, l2 = a1 * a1, a2 * a2
    out = np.empty(a1.shape + (2, 2))
    out[..., 0, 0] = c * c * l1 + s * s * l2
    out[..., 1, 1] = s * s * l1 + c * c * l2
    out[..., 0, 1] = out[..., 1, 0] = c * s * (l1 - l2)
    return out


def _bilinear(xs, ys, values, pts):
    """Bilinear interpolation of ``values[iy, ix]`` on axes ``xs``/``ys``.

    Points outside the axes are clamped to the boundary.
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    fx = np.interp(pts[:, 0], xs, np.arange(len(xs)))
    fy = np.interp(pts[:, 1], ys, np.arange(len(ys)))
    ix = np.clip(np.floor(fx).astype(int), 0, max(len(xs) - 2, 0))
    iy = np.clip(np.floor(fy).astype(int), 0, max(len(ys) - 2, 0))
    tx = fx - ix if len(xs) > 1 else np.zeros_like(fx)
    ty = fy - iy if len(ys) > 1 else np.zeros_like(fy)
    ix1 = np.minimum(ix + 1, len(xs) - 1)
    iy1 = np.minimum(iy + 1, len(ys) - 1)
    v00 = values[iy, ix]
    v01 = values[iy, ix1]
    v10 = values[iy1, ix]
    v11 = values[iy1, ix1]
    return (v00 * (1 - tx) * (1 - ty) + v01 * tx * (1 - ty)
            + v10 * (1 - tx) * ty + v11 * tx * ty)


@dataclass(frozen=True)
class LocalParamField:
    """Gridded local anisotropy and smoothness parameters.

    ``a1``, ``a2``, ``angle`` and ``nu`` are arrays of shape ``(len(ys), len(xs))``
    sampled at the axis coordinates; values elsewhere are bilinear
    interpolates.
    """

    xs: np.ndarray
    ys: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    angle: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        shape = (len(self.ys), len(self.xs))
        for name in ("a1", "a2", "angle", "nu"):
            arr = np.asarray(getattr(self, name), float)
            if arr.shape != shape:
                raise KernelParameterError(f"{name} has shape {arr.shape}, expected {shape}")
        if np.any(self.a1 <= 0) or np.any(self.a2 <= 0):
            raise KernelParameterError("local scales must be > 0")
        if np.any(self.nu <= 0):
            raise KernelParameterError("local smoothness must be > 0")

    @classmethod
    def constant(cls, a1, a2, angle, nu, bounds=((0.0, 1.0), (0.0, 1.0))):
        xs = np.array(bounds[0], float)
        ys = np.array(bounds[1], float)
        full = lambda v: np.full((2, 2), float(v))
        return cls(xs, ys, full(a1), full(a2), full(angle), full(nu))

    def at(self, pts):
        """Interpolated ``(a1, a2, angle, nu)`` at points of shape (m, 2)."""
        return tuple(
            _bilinear(self.xs, self.ys, np.asarray(v, float), pts)
            for v in (self.a1, self.a2, self.angle, self.nu)
        )

    def sigma(self, pts):
        a1, a2, angle, _ = self.at(pts)
        return anisotropy_matrix(a1, a2, angle)


def _det2(S):
    return S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]


def nonstationary_matern_matrix(field, X, Y=None, block=512):
    """Nonstationary Matérn covariance matrix between point sets ``X`` and ``Y``.

    Implements ``phi_xy 2^(1-nu_xy) / sqrt(Gamma(nu_x) Gamma(nu_y)) M_nu_xy(sqrt(Q_xy))``
    with ``M_nu(h) = h^nu K_nu(h)``, ``nu_xy = (nu_x + nu_y) / 2``,
    ``Q_xy(h) = h^T ((Sigma_x + Sigma_y) / 2)^-1 h`` and
    ``phi_xy = |Sigma_x|^1/4 |Sigma_y|^1/4 |(Sigma_x + Sigma_y) / 2|^-1/2``.
    The diagonal (x = y) equals 1 for every x.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, float))
    a1x, a2x, thx, nux = field.at(X)
    a1y, a2y, thy, nuy = field.at(Y)
    Sx = anisotropy_matrix(a1x, a2x, thx)
    Sy = anisotropy_matrix(a1y, a2y, thy)
    dx = _det2(Sx) ** 0.25
    dy = _det2(Sy) ** 0.25
    lgx = special.gammaln(nux)
    lgy = special.gammaln(nuy)
    out = np.empty((len(X), len(Y)))
    for i0 in range(0, len(X), block):
        sl = slice(i0, i0 + block)
        S = 0.5 * (Sx[sl, None] + Sy[None, :])
        det = _det2(S)
        h = X[sl, None, :] - Y[None, :, :]
        # inverse of 2x2 via adjugate
        q = (S[..., 1, 1] * h[..., 0] ** 2 - 2 * S[..., 0, 1] * h[..., 0] * h[..., 1]
             + S[..., 0, 0] * h[..., 1] ** 2) / det
        r = np.sqrt(np.maximum(q, 0.0))
        nu = 0.5 * (nux[sl, None] + nuy[None, :])
        phi = dx[sl, None] * dy[None, :] / np.sqrt(det)
        # 2^(1-nu)/sqrt(G(nu_x)G(nu_y)) M_nu(r) = Matérn shape * G(nu)/sqrt(G G)
        norm = np.exp(special.gammaln(nu) - 0.5 * (lgx[sl, None] + lgy[None, :]))
        out[sl] = phi * norm * matern_shape(r, nu)
    return out


def eval_nonstationary_matern(field, x, y):
    """Nonstationary Matérn covariance between two single points."""
    return float(nonstationary_matern_matrix(field, np.reshape(x, (1, 2)),
                                             np.reshape(y, (1, 2)))[0, 0])
