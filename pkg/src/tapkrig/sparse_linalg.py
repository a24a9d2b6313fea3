"""Sparse symmetric covariance assembly, sparse Cholesky and Woodbury solves.

The small-scale covariance ``A`` is sparse by construction (compact
support), the low-rank term ``P B P^T`` has ``p`` columns.  Everything
here works with ``A`` through its Cholesky factor and only ever forms
``p x p`` dense matrices.
"""
from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit

from .spatial import GridIndex


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Cholesky met a non-positive pivot.

    ``index`` is the failing row/column in the caller's (unpermuted)
    ordering.
    """

    def __init__(self, index, pivot=None):
        self.index = int(index)
        self.pivot = pivot
        msg = f"matrix is not positive definite (pivot at index {self.index}"
        msg += f" = {pivot:.3e})" if pivot is not None else ")"
        super().__init__(msg)


class NumericError(np.linalg.LinAlgError):
    pass


@dataclass
class SparseSymMatrix:
    """Symmetric matrix stored as its lower triangle in CSC form.

    Column ``j`` holds rows ``i >= j`` in ``indices[indptr[j]:indptr[j+1]]``,
    sorted and unique, the first of which is the diagonal.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def from_scipy(cls, M):
        """Build from any scipy sparse matrix; only the lower triangle is read."""
        L = sp.tril(sp.csc_matrix(M), format="csc")
        n = L.shape[0]
        # ensure an explicit diagonal in the pattern
        L = (L + sp.csc_matrix((np.zeros(n), (np.arange(n), np.arange(n))), (n, n))).tocsc()
        L.sum_duplicates()
        L.sort_indices()
        return cls(n, L.indptr.astype(np.int64), L.indices.astype(np.int64),
                   L.data.astype(float))

    @classmethod
    def from_dense(cls, M):
        return cls.from_scipy(sp.csc_matrix(np.asarray(M, float)))

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def lower(self):
        return sp.csc_matrix((self.data, self.indices, self.indptr), (self.n, self.n))

    def to_scipy(self):
        """Full symmetric matrix as scipy CSC."""
        L = self.lower()
        D = sp.diags(L.diagonal())
        return (L + L.T - D).tocsc()

    def toarray(self):
        return self.to_scipy().toarray()

    def diagonal(self):
        return self.data[self.indptr[:-1]]

    def __matmul__(self, v):
        return self.to_scipy() @ v

    def scaled(self, factor):
        return SparseSymMatrix(self.n, self.indptr, self.indices, self.data * factor)

    def added_diagonal(self, value):
        data = self.data.copy()
        data[self.indptr[:-1]] += value
        return SparseSymMatrix(self.n, self.indptr, self.indices, data)


def assemble_sparse_cov(points, kernel, nugget=0.0):
    """Covariance matrix of a tapered kernel plus nugget at ``points``.

    Pairs farther apart than the taper range are structural zeros;
    neighbors come from a grid index with cell size equal to the range.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    n = len(pts)
    if n < 1:
        raise ValueError("need at least one point")
    tau = kernel.taper_range
    ii, jj, dd = GridIndex(pts, tau).pairs(tau)
    if nugget <= 0 and np.any(dd == 0):
        warnings.warn("duplicate coordinates without nugget: covariance matrix is singular",
                      RuntimeWarning, stacklevel=2)
    off = kernel(dd)
    diag = np.full(n, float(kernel(0.0)) + nugget)
    # lower triangle: row = max, col = min
    rows = np.concatenate([np.arange(n), np.maximum(ii, jj)])
    cols = np.concatenate([np.arange(n), np.minimum(ii, jj)])
    vals = np.concatenate([diag, off])
    L = sp.csc_matrix((vals, (rows, cols)), (n, n))
    L.sort_indices()
    return SparseSymMatrix(n, L.indptr.astype(np.int64), L.indices.astype(np.int64),
                           L.data.astype(float))


def write_matrix_market(path, A):
    """Dump a SparseSymMatrix in MatrixMarket symmetric coordinate format."""
    L = A.lower().tocoo()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        fh.write(f"{A.n} {A.n} {L.nnz}\n")
        for i, j, v in zip(L.row, L.col, L.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


# ---------------------------------------------------------------------------
# ordering


def minimum_degree_order(A):
    """Minimum-degree elimination ordering of the symmetric pattern of ``A``.

    Plain minimum degree on the explicit elimination graph with a lazy
    heap; ties are broken by the lower index so the order is deterministic.
    """
    n = A.n
    Lf = A.lower()
    full = (Lf + Lf.T).tocsc()
    adj = [set(full.indices[full.indptr[j]:full.indptr[j + 1]].tolist()) for j in range(n)]
    for j in range(n):
        adj[j].discard(j)
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, bool)
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nb = adj[v]
        for u in nb:
            au = adj[u]
            au.discard(v)
            au |= nb
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = None
    return np.asarray(order, dtype=np.int64)


# ---------------------------------------------------------------------------
# up-looking sparse Cholesky on the upper triangle of C = A[p][:, p]


@njit(cache=True)
def _etree(Cp, Ci, n):
    parent = -np.ones(n, np.int64)
    ancestor = -np.ones(n, np.int64)
    for k in range(n):
        for q in range(Cp[k], Cp[k + 1]):
            i = Ci[q]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, w):
    # nonzero pattern of row k of L, returned in s[top:n] in topological order
    n = parent.shape[0]
    top = n
    w[k] = k
    for q in range(Cp[k], Cp[k + 1]):
        i = Ci[q]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@njit(cache=True)
def _colcounts(Cp, Ci, parent, n):
    counts = np.ones(n, np.int64)
    s = np.empty(n, np.int64)
    w = -np.ones(n, np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@njit(cache=True)
def _numeric(Cp, Ci, Cx, parent, Lp, n):
    nnz = Lp[n]
    Li = np.empty(nnz, np.int64)
    Lx = np.empty(nnz)
    nxt = Lp[:n].copy()
    x = np.zeros(n)
    s = np.empty(n, np.int64)
    w = -np.ones(n, np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        x[k] = 0.0
        for q in range(Cp[k], Cp[k + 1]):
            if Ci[q] <= k:
                x[Ci[q]] = Cx[q]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for q in range(Lp[i] + 1, nxt[i]):
                x[Li[q]] -= Lx[q] * lki
            d -= lki * lki
            q = nxt[i]
            nxt[i] += 1
            Li[q] = k
            Lx[q] = lki
        if not d > 0.0:
            return Li, Lx, k, d
        q = nxt[k]
        nxt[k] += 1
        Li[q] = k
        Lx[q] = np.sqrt(d)
    return Li, Lx, -1, 0.0


@njit(cache=True)
def _lsolve(Lp, Li, Lx, X):
    n, m = X.shape
    for j in range(n):
        djj = Lx[Lp[j]]
        for c in range(m):
            X[j, c] /= djj
        for q in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[q]
            l = Lx[q]
            for c in range(m):
                X[i, c] -= l * X[j, c]


@njit(cache=True)
def _ltsolve(Lp, Li, Lx, X):
    n, m = X.shape
    for j in range(n - 1, -1, -1):
        for q in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[q]
            l = Lx[q]
            for c in range(m):
                X[j, c] -= l * X[i, c]
        djj = Lx[Lp[j]]
        for c in range(m):
            X[j, c] /= djj


class CholeskyFactor:
    """Sparse Cholesky factor ``A[perm][:, perm] = L L^T``.

    Immutable after construction; ``solve`` may be called concurrently.
    """

    def __init__(self, perm, Lp, Li, Lx):
        self.perm = perm
        self.iperm = np.empty_like(perm)
        self.iperm[perm] = np.arange(len(perm))
        self._Lp, self._Li, self._Lx = Lp, Li, Lx
        self.n = len(perm)
        self.log_det = 2.0 * float(np.sum(np.log(Lx[Lp[:-1]])))

    @property
    def L(self):
        return sp.csc_matrix((self._Lx, self._Li, self._Lp), (self.n, self.n))

    @property
    def nnz(self):
        return int(self._Lp[-1])

    def _as_block(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.n:
            raise ValueError(f"rhs has {rhs.shape[0]} rows, factor has dimension {self.n}")
        vec = rhs.ndim == 1
        X = np.ascontiguousarray(rhs.reshape(self.n, -1)[self.perm])
        return X, vec

    def solve(self, rhs):
        """Solve ``A x = rhs`` for a vector or an ``n x k`` block."""
        if sp.issparse(rhs):
            rhs = rhs.toarray()
        X, vec = self._as_block(rhs)
        _lsolve(self._Lp, self._Li, self._Lx, X)
        _ltsolve(self._Lp, self._Li, self._Lx, X)
        out = X[self.iperm]
        return out[:, 0] if vec else out

    def solve_L(self, rhs):
        """Half solve ``L^-1 (rhs permuted)``; ``|L^-1 b|^2 = b^T A^-1 b``."""
        if sp.issparse(rhs):
            rhs = rhs.toarray()
        X, vec = self._as_block(rhs)
        _lsolve(self._Lp, self._Li, self._Lx, X)
        return X[:, 0] if vec else X


def cholesky(A, order="mindeg"):
    """Sparse Cholesky factorization of a SparseSymMatrix.

    ``order`` is ``"mindeg"`` (minimum degree), ``"natural"`` or an explicit
    permutation array.
    """
    n = A.n
    if isinstance(order, str):
        if order == "mindeg":
            perm = minimum_degree_order(A)
        elif order == "natural":
            perm = np.arange(n, dtype=np.int64)
        else:
            raise ValueError(f"unknown ordering {order!r}")
    else:
        perm = np.asarray(order, dtype=np.int64)
    C = A.to_scipy()[perm][:, perm]
    Cu = sp.triu(C, format="csc")
    Cu.sort_indices()
    Cp = Cu.indptr.astype(np.int64)
    Ci = Cu.indices.astype(np.int64)
    Cx = Cu.data.astype(float)
    parent = _etree(Cp, Ci, n)
    counts = _colcounts(Cp, Ci, parent, n)
    Lp = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=Lp[1:])
    Li, Lx, fail, pivot = _numeric(Cp, Ci, Cx, parent, Lp, n)
    if fail >= 0:
        raise NotPositiveDefinite(perm[fail], pivot)
    return CholeskyFactor(perm, Lp, Li, Lx)


def solve(f, rhs):
    return f.solve(rhs)


# ---------------------------------------------------------------------------
# dense helpers and Woodbury


def dense_cholesky(M, jitter=True):
    """Lower Cholesky factor of a small dense SPD matrix.

    On failure, retries once with ``1e-10 * trace / p`` on the diagonal.
    """
    M = np.asarray(M, float)
    M = 0.5 * (M + M.T)
    p = M.shape[0]
    if p == 0:
        return np.zeros((0, 0))
    try:
        return sla.cholesky(M, lower=True, check_finite=True)
    except sla.LinAlgError:
        if not jitter:
            raise NumericError("dense matrix not positive definite")
    eps = 1e-10 * max(np.trace(M), 0.0) / p
    try:
        return sla.cholesky(M + eps * np.eye(p), lower=True)
    except sla.LinAlgError as exc:
        raise NumericError("dense matrix not positive definite after jitter") from exc


def _as_dense_design(P, n):
    if P is None:
        return np.zeros((n, 0))
    if sp.issparse(P):
        return P
    return np.asarray(P, float).reshape(n, -1)


class WoodburySolver:
    """Apply ``(A + P B P^T)^-1`` and its log-determinant.

    ``G = P^T A^-1 P`` and ``A^-1 P`` are computed once.  The inner system
    is written in terms of ``B = L_B L_B^T`` as ``M = I + L_B^T G L_B``;
    ``(B^-1 + G)^-1 = L_B M^-1 L_B^T``, so ``B`` need not be inverted.
    """

    def __init__(self, fA, P):
        self.fA = fA
        n = fA.n
        self.P = _as_dense_design(P, n)
        p = self.P.shape[1]
        self.p = p
        if p:
            Pd = self.P.toarray() if sp.issparse(self.P) else self.P
            self.AinvP = fA.solve(Pd)
            self.G = np.asarray(self.P.T @ self.AinvP)
            self.G = 0.5 * (self.G + self.G.T)
        else:
            self.AinvP = np.zeros((n, 0))
            self.G = np.zeros((0, 0))

    def inner(self, B):
        """Return ``(L_B, L_M)`` with ``M = I + L_B^T G L_B``."""
        LB = dense_cholesky(B)
        M = np.eye(self.p) + LB.T @ self.G @ LB
        try:
            LM = sla.cholesky(0.5 * (M + M.T), lower=True)
        except sla.LinAlgError as exc:
            raise NumericError("inner Woodbury system not positive definite") from exc
        return LB, LM

    def apply(self, B, v):
        Ainv_v = self.fA.solve(v)
        if self.p == 0:
            return Ainv_v
        LB, LM = self.inner(B)
        t = self.P.T @ Ainv_v
        t = LB @ sla.cho_solve((LM, True), LB.T @ t)
        return Ainv_v - self.AinvP @ t

    def log_det(self, B):
        """``log det(A + P B P^T) = log det A + log det(I + L_B^T G L_B)``."""
        if self.p == 0:
            return self.fA.log_det
        _, LM = self.inner(B)
        return self.fA.log_det + 2.0 * float(np.sum(np.log(np.diag(LM))))


def woodbury_apply(fA, P, B, v):
    """``(A + P B P^T)^-1 v`` from a factor of ``A`` (Woodbury identity)."""
    return WoodburySolver(fA, P).apply(np.atleast_2d(np.asarray(B, float)), v)


def woodbury_log_det(fA, P, B):
    """``log det(A + P B P^T)`` via the matrix determinant lemma."""
    return WoodburySolver(fA, P).log_det(B)
