"""Candidate dictionary of anisotropic, multi-scale, compactly supported bases.

Each basis function is a correlation-shaped bump ``rho(r)`` with value 1
at its knot, where ``r`` is the anisotropic distance to the knot scaled so
that the support is an ellipse with semi-axes ``range`` (along ``angle``)
and ``range / ratio``.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernels import COMPACT_FAMILIES, correlation
from .spatial import GridIndex

UNIT_SQUARE = ((0.0, 1.0), (0.0, 1.0))


@dataclass(frozen=True)
class BasisSpec:
    """Recipe for a candidate dictionary.

    ``spacing`` is the knot-grid step as a fraction of the range, either a
    scalar or one value per range.  The lattice starts at the lower domain
    corner and extends past the domain; knots whose support ellipse misses
    the domain entirely are dropped.
    """

    families: tuple = ("cubic", "spherical")
    ranges: tuple = (0.5, 0.2)
    angles: tuple = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
    ratio: float = 2.0
    spacing: float | tuple = 0.5
    bounds: tuple = UNIT_SQUARE

    def __post_init__(self):
        for f in self.families:
            if f not in COMPACT_FAMILIES:
                raise ValueError(f"basis family must be compactly supported, got {f!r}")
        if any(r <= 0 for r in self.ranges):
            raise ValueError("ranges must be > 0")
        if any(not (0 <= a < np.pi) for a in self.angles):
            raise ValueError("angles must lie in [0, pi)")
        if not self.ratio >= 1:
            raise ValueError("ratio must be >= 1")

    @classmethod
    def full_scale(cls, bounds=UNIT_SQUARE):
        """Cubic and spherical bases, ranges 0.5 and 0.2, four orientations.

        Knot steps 0.33 * 0.5 and 0.44 * 0.2 give 2658 candidates on the
        unit square.
        """
        return cls(spacing=(0.33, 0.44), bounds=bounds)

    @classmethod
    def empty(cls):
        return cls(families=(), ranges=(), angles=())

    def spacing_for(self, i):
        if np.ndim(self.spacing) == 0:
            return float(self.spacing)
        return float(self.spacing[i])


@dataclass(frozen=True)
class Dictionary:
    family: np.ndarray  # object array of family names
    range: np.ndarray
    angle: np.ndarray
    ratio: np.ndarray
    knots: np.ndarray  # (p, 2)
    grids: tuple = field(default=())  # (range, step, knots kept) per resolution

    def __len__(self):
        return len(self.range)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dictionary(self.family[idx], self.range[idx], self.angle[idx],
                          self.ratio[idx], self.knots[idx], self.grids)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "family", "range", "angle", "ratio", "knot_x", "knot_y"])
            for i in range(len(self)):
                w.writerow([i, self.family[i], repr(float(self.range[i])),
                            repr(float(self.angle[i])), repr(float(self.ratio[i])),
                            repr(float(self.knots[i, 0])), repr(float(self.knots[i, 1]))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            return cls(np.array([], object), np.zeros(0), np.zeros(0), np.zeros(0),
                       np.zeros((0, 2)))
        col = lambda k: np.array([float(r[k]) for r in rows])
        return cls(np.array([r["family"] for r in rows], dtype=object), col("range"),
                   col("angle"), col("ratio"), np.column_stack([col("knot_x"), col("knot_y")]))


def _aniso_metric(angle, rmaj, rmin):
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, s], [-s, c]])
    return R.T @ np.diag([1.0 / rmaj**2, 1.0 / rmin**2]) @ R


def _support_meets_box(knot, Q, bounds):
    """Whether ``{x in box : (x-k)^T Q (x-k) < 1}`` is nonempty."""
    (x0, x1), (y0, y1) = bounds
    if x0 <= knot[0] <= x1 and y0 <= knot[1] <= y1:
        return True
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    best = np.inf
    for a, b in zip(corners, np.roll(corners, -1, axis=0)):
        e = b - a
        t = np.clip(-(e @ Q @ (a - knot)) / (e @ Q @ e), 0.0, 1.0)
        d = a + t * e - knot
        best = min(best, d @ Q @ d)
    return best < 1.0 - 1e-12


def knot_lattice(r, step, bounds):
    (x0, x1), (y0, y1) = bounds
    m = int(np.ceil(r / step)) + 1
    xs = x0 + step * np.arange(-m, int(np.ceil((x1 - x0) / step)) + m + 1)
    ys = y0 + step * np.arange(-m, int(np.ceil((y1 - y0) / step)) + m + 1)
    xs = xs[(xs > x0 - r) & (xs < x1 + r)]
    ys = ys[(ys > y0 - r) & (ys < y1 + r)]
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_dictionary(spec):
    """Cartesian product families x ranges x angles, each on its knot grid."""
    fam, rng_, ang, rat, knots, grids = [], [], [], [], [], []
    lattices = {}
    for i, r in enumerate(spec.ranges):
        step = spec.spacing_for(i) * r
        lattices[i] = knot_lattice(r, step, spec.bounds)
    for f, (i, r), a in itertools.product(spec.families, enumerate(spec.ranges), spec.angles):
        Q = _aniso_metric(a, r, r / spec.ratio)
        keep = np.array([_support_meets_box(k, Q, spec.bounds) for k in lattices[i]], bool)
        K = lattices[i][keep]
        grids.append((f, float(r), float(a), spec.spacing_for(i) * r, int(len(K))))
        fam.extend([f] * len(K))
        rng_.append(np.full(len(K), r))
        ang.append(np.full(len(K), a))
        rat.append(np.full(len(K), spec.ratio))
        knots.append(K)
    if not fam:
        raise ValueError("basis specification produces an empty dictionary")
    return Dictionary(np.array(fam, dtype=object), np.concatenate(rng_), np.concatenate(ang),
                      np.concatenate(rat), np.vstack(knots), tuple(grids))


def basis_values(family, rng, angle, ratio, offsets):
    """Basis value for offsets ``x - knot`` (shape (m, 2)) of one function type."""
    c, s = np.cos(angle), np.sin(angle)
    u1 = c * offsets[:, 0] + s * offsets[:, 1]
    u2 = -s * offsets[:, 0] + c * offsets[:, 1]
    r = np.sqrt(u1 * u1 + (ratio * u2) ** 2) / rng
    return correlation(family, r)


def evaluate_design(d, points):
    """Sparse ``n x p`` design with entry ``(i, j) = basis_j(x_i)``."""
    pts = np.atleast_2d(np.asarray(points, float))
    n, p = len(pts), len(d)
    if p == 0:
        return sp.csc_matrix((n, 0))
    rows, cols, vals = [], [], []
    for r in np.unique(d.range):
        sel = np.flatnonzero(d.range == r)
        index = GridIndex(pts, r)
        q, j, _ = index.cross(d.knots[sel], r)
        col = sel[q]
        off = pts[j] - d.knots[col]
        v = np.empty(len(col))
        # evaluate per (family, angle, ratio) group
        keys = np.stack([np.unique(d.family[col], return_inverse=True)[1],
                         np.unique(d.angle[col], return_inverse=True)[1],
                         np.unique(d.ratio[col], return_inverse=True)[1]], axis=1) \
            if len(col) else np.zeros((0, 3), int)
        for key in np.unique(keys, axis=0):
            m = np.all(keys == key, axis=1)
            c0 = col[np.flatnonzero(m)[0]]
            v[m] = basis_values(d.family[c0], r, d.angle[c0], d.ratio[c0], off[m])
        nz = v > 0
        rows.append(j[nz])
        cols.append(col[nz])
        vals.append(v[nz])
    X = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, p))
    X.sort_indices()
    return X
