"""Uniform-grid spatial index for fixed-radius neighbor queries."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _bin_points(pts, x0, y0, cell, nx, ny):
    n = pts.shape[0]
    cid = np.empty(n, np.int64)
    for i in range(n):
        cx = min(max(int((pts[i, 0] - x0) / cell), 0), nx - 1)
        cy = min(max(int((pts[i, 1] - y0) / cell), 0), ny - 1)
        cid[i] = cy * nx + cx
    start = np.zeros(nx * ny + 1, np.int64)
    for i in range(n):
        start[cid[i] + 1] += 1
    for c in range(nx * ny):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    order = np.empty(n, np.int64)
    for i in range(n):
        order[fill[cid[i]]] = i
        fill[cid[i]] += 1
    return start, order


@njit(cache=True)
def _self_pairs(pts, start, order, nx, ny, radius, count_only, oi, oj, od):
    r2 = radius * radius
    m = 0
    for cy in range(ny):
        for cx in range(nx):
            c = cy * nx + cx
            for a in range(start[c], start[c + 1]):
                i = order[a]
                for dy in range(-1, 2):
                    ky = cy + dy
                    if ky < 0 or ky >= ny:
                        continue
                    for dx in range(-1, 2):
                        kx = cx + dx
                        if kx < 0 or kx >= nx:
                            continue
                        k = ky * nx + kx
                        for b in range(start[k], start[k + 1]):
                            j = order[b]
                            if j <= i:
                                continue
                            ex = pts[i, 0] - pts[j, 0]
                            ey = pts[i, 1] - pts[j, 1]
                            d2 = ex * ex + ey * ey
                            if d2 < r2:
                                if not count_only:
                                    oi[m] = i
                                    oj[m] = j
                                    od[m] = np.sqrt(d2)
                                m += 1
    return m


@njit(cache=True)
def _cross_pairs(pts, qry, start, order, x0, y0, cell, nx, ny, radius, count_only,
                 oq, oj, od):
    r2 = radius * radius
    reach = int(np.ceil(radius / cell))
    m = 0
    for q in range(qry.shape[0]):
        cx = int(np.floor((qry[q, 0] - x0) / cell))
        cy = int(np.floor((qry[q, 1] - y0) / cell))
        for ky in range(max(cy - reach, 0), min(cy + reach + 1, ny)):
            for kx in range(max(cx - reach, 0), min(cx + reach + 1, nx)):
                k = ky * nx + kx
                for b in range(start[k], start[k + 1]):
                    j = order[b]
                    ex = qry[q, 0] - pts[j, 0]
                    ey = qry[q, 1] - pts[j, 1]
                    d2 = ex * ex + ey * ey
                    if d2 < r2:
                        if not count_only:
                            oq[m] = q
                            oj[m] = j
                            od[m] = np.sqrt(d2)
                        m += 1
    return m


class GridIndex:
    """Bucket points into square cells of side ``cell``.

    Queries return pairs at Euclidean distance strictly below a radius.
    Self queries require ``radius <= cell``; cross queries accept any
    radius.
    """

    def __init__(self, points, cell):
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        if pts.shape[1] != 2:
            raise ValueError("points must have shape (n, 2)")
        if not cell > 0:
            raise ValueError("cell size must be positive")
        self.points = pts
        self.cell = float(cell)
        if len(pts):
            lo = pts.min(axis=0)
            hi = pts.max(axis=0)
        else:
            lo = hi = np.zeros(2)
        self.x0, self.y0 = float(lo[0]), float(lo[1])
        # cap the cell count so tiny radii on wide domains stay bounded
        span = np.maximum(hi - lo, 0.0)
        self.cell = max(self.cell, float(span.max()) / 4096.0) if span.max() > 0 else self.cell
        self.nx = int(span[0] / self.cell) + 1
        self.ny = int(span[1] / self.cell) + 1
        self._start, self._order = _bin_points(pts, self.x0, self.y0, self.cell,
                                               self.nx, self.ny)

    def pairs(self, radius):
        """All ``(i, j, d)`` with ``i < j`` and ``d = |x_i - x_j| < radius``."""
        if radius > self.cell * (1 + 1e-12):
            raise ValueError("self-pair radius exceeds cell size")
        args = (self.points, self._start, self._order, self.nx, self.ny, float(radius))
        e_i = np.empty(0, np.int64)
        e_d = np.empty(0)
        m = _self_pairs(*args, True, e_i, e_i, e_d)
        oi = np.empty(m, np.int64)
        oj = np.empty(m, np.int64)
        od = np.empty(m)
        _self_pairs(*args, False, oi, oj, od)
        return oi, oj, od

    def cross(self, queries, radius):
        """All ``(q, j, d)`` with ``d = |queries_q - x_j| < radius``."""
        qry = np.ascontiguousarray(np.atleast_2d(queries), dtype=float)
        args = (self.points, qry, self._start, self._order, self.x0, self.y0,
                self.cell, self.nx, self.ny, float(radius))
        e_i = np.empty(0, np.int64)
        e_d = np.empty(0)
        m = _cross_pairs(*args, True, e_i, e_i, e_d)
        oq = np.empty(m, np.int64)
        oj = np.empty(m, np.int64)
        od = np.empty(m)
        _cross_pairs(*args, False, oq, oj, od)
        return oq, oj, od
