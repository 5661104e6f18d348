"""Sparse Cholesky factorization for matrices with a fixed symmetric pattern.

The ordering and the symbolic analysis (elimination tree, column counts)
are done once in :class:`SymbolicCholesky`; every later factorization only
redoes the numeric up-looking pass over the cached structure.
"""
from __future__ import annotations

import heapq
import math

import numpy as np
from numba import njit


class CholeskyError(np.linalg.LinAlgError):
    pass


JITTER_LADDER = (1e-10, 1e-8, 1e-6)


def minimum_degree_order(n, I, J) -> np.ndarray:
    """Minimum-degree elimination order of the graph with edges (I[p], J[p]).

    Plain elimination-graph version with a lazy heap; ties go to the
    smaller index so the result is deterministic.
    """
    adj = [set() for _ in range(n)]
    for i, j in zip(np.asarray(I).tolist(), np.asarray(J).tolist()):
        if i != j:
            adj[i].add(j)
            adj[j].add(i)
    heap = [(len(a), v) for v, a in enumerate(adj)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


@njit(cache=True)
def _etree(n, Cp, Ci):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@njit(cache=True)
def _ereach(k, Cp, Ci, parent, stack, mark):
    n = parent.shape[0]
    top = n
    mark[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while mark[i] != k:
            stack[length] = i
            length += 1
            mark[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            stack[top] = stack[length]
    return top


@njit(cache=True)
def _col_counts(n, Cp, Ci, parent):
    counts = np.ones(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, stack, mark)
        for t in range(top, n):
            counts[stack[t]] += 1
    return counts


@njit(cache=True)
def _numeric(n, Cp, Ci, Cx, parent, Lp, Li, Lx):
    """Up-looking Cholesky; returns -1 on success or the failing column."""
    nxt = Lp[:-1].copy()
    x = np.zeros(n)
    stack = np.empty(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, stack, mark)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = stack[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, nxt[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = nxt[i]
            nxt[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return k
        p = nxt[k]
        nxt[k] += 1
        Li[p] = k
        Lx[p] = math.sqrt(d)
    return -1


@njit(cache=True)
def _lsolve(Lp, Li, Lx, X):
    n, m = X.shape
    for j in range(n):
        piv = Lx[Lp[j]]
        for c in range(m):
            X[j, c] /= piv
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                X[i, c] -= v * X[j, c]


@njit(cache=True)
def _ltsolve(Lp, Li, Lx, X):
    n, m = X.shape
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                X[j, c] -= v * X[i, c]
        piv = Lx[Lp[j]]
        for c in range(m):
            X[j, c] /= piv


@njit(cache=True)
def _lmul(Lp, Li, Lx, X):
    # returns L @ X for a column-stored lower-triangular L
    n, m = X.shape
    out = np.zeros((n, m))
    for j in range(n):
        for p in range(Lp[j], Lp[j + 1]):
            i = Li[p]
            v = Lx[p]
            for c in range(m):
                out[i, c] += v * X[j, c]
    return out


class SymbolicCholesky:
    """Ordering and symbolic factorization of a symmetric pattern.

    Parameters
    ----------
    n : int
        Matrix size.
    I, J : array_like
        Index pairs with ``I[p] <= J[p]``; every diagonal entry must be
        present.
    ordering : {"mindegree", "natural"}
    """

    def __init__(self, n, I, J, ordering="mindegree"):
        I = np.asarray(I, dtype=np.int64)
        J = np.asarray(J, dtype=np.int64)
        self.n = int(n)
        self.npairs = I.size
        if ordering == "mindegree":
            perm = minimum_degree_order(n, I, J)
        elif ordering == "natural":
            perm = np.arange(n, dtype=np.int64)
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        self.perm = perm
        self.iperm = np.empty(n, dtype=np.int64)
        self.iperm[perm] = np.arange(n)
        # permuted upper triangle in CSC; slot[p] locates pair p
        pi = self.iperm[I]
        pj = self.iperm[J]
        row = np.minimum(pi, pj)
        col = np.maximum(pi, pj)
        order = np.lexsort((row, col))
        self.Ci = row[order]
        self.Cp = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.Cp, col + 1, 1)
        self.Cp = np.cumsum(self.Cp)
        self.slot = np.empty(I.size, dtype=np.int64)
        self.slot[order] = np.arange(I.size)
        self.diag_pairs = np.flatnonzero(I == J)
        if self.diag_pairs.size != n:
            raise ValueError("pattern must contain every diagonal entry exactly once")
        self.parent = _etree(self.n, self.Cp, self.Ci)
        counts = _col_counts(self.n, self.Cp, self.Ci, self.parent)
        self.Lp = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.n_numeric = 0

    @property
    def nnz_factor(self) -> int:
        return int(self.Lp[-1])

    def factor(self, values, jitter=True) -> "SparseCholeskyFactor":
        """Numeric factorization of the matrix with the given pair values.

        On failure, the diagonal is inflated by 1e-10, 1e-8, then 1e-6 times
        its mean before giving up with :class:`CholeskyError`.
        """
        values = np.asarray(values, dtype=float)
        Cx = np.empty(self.npairs)
        Cx[self.slot] = values
        Li = np.empty(self.nnz_factor, dtype=np.int64)
        Lx = np.empty(self.nnz_factor)
        self.n_numeric += 1
        bad = _numeric(self.n, self.Cp, self.Ci, Cx, self.parent, self.Lp, Li, Lx)
        added = 0.0
        if bad >= 0 and jitter:
            dslots = self.slot[self.diag_pairs]
            scale = float(np.mean(np.abs(Cx[dslots])))
            for eps in JITTER_LADDER:
                Cj = Cx.copy()
                Cj[dslots] += eps * scale
                self.n_numeric += 1
                bad = _numeric(self.n, self.Cp, self.Ci, Cj, self.parent, self.Lp, Li, Lx)
                if bad < 0:
                    added = eps * scale
                    break
        if bad >= 0:
            raise CholeskyError(f"sparse Cholesky failed at pivot {bad} (original index {self.perm[bad]})")
        return SparseCholeskyFactor(self, Li, Lx, added)


class SparseCholeskyFactor:
    """``P A P' = L L'`` with solve, log-determinant and sampling helpers."""

    def __init__(self, symbolic: SymbolicCholesky, Li, Lx, jitter=0.0):
        self.symbolic = symbolic
        self.Li = Li
        self.Lx = Lx
        self.jitter = jitter

    @property
    def n(self):
        return self.symbolic.n

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        X = np.ascontiguousarray(rhs.reshape(self.n, -1)[self.symbolic.perm])
        _lsolve(self.symbolic.Lp, self.Li, self.Lx, X)
        _ltsolve(self.symbolic.Lp, self.Li, self.Lx, X)
        out = np.empty_like(X)
        out[self.symbolic.perm] = X
        return out[:, 0] if vec else out

    def half_solve(self, rhs):
        """``L^{-1} P rhs``; its squared column norms give quadratic forms."""
        rhs = np.asarray(rhs, dtype=float)
        X = np.ascontiguousarray(rhs.reshape(self.n, -1)[self.symbolic.perm])
        _lsolve(self.symbolic.Lp, self.Li, self.Lx, X)
        return X[:, 0] if rhs.ndim == 1 else X

    def correlate(self, white):
        """``P' L white``: maps iid standard normals to draws with covariance A."""
        white = np.asarray(white, dtype=float)
        X = _lmul(self.symbolic.Lp, self.Li, self.Lx, np.ascontiguousarray(white.reshape(self.n, -1)))
        out = np.empty_like(X)
        out[self.symbolic.perm] = X
        return out[:, 0] if white.ndim == 1 else out

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.Lx[self.symbolic.Lp[:-1]])))


class DenseCholeskyFactor:
    """Dense stand-in with the same interface, for oracles and small problems."""

    def __init__(self, A, jitter=True):
        from scipy.linalg import cholesky

        A = np.asarray(A, dtype=float)
        self.jitter = 0.0
        try:
            self.L = cholesky(A, lower=True)
        except np.linalg.LinAlgError:
            if not jitter:
                raise CholeskyError("dense Cholesky failed")
            scale = float(np.mean(np.abs(np.diag(A))))
            for eps in JITTER_LADDER:
                try:
                    self.L = cholesky(A + eps * scale * np.eye(A.shape[0]), lower=True)
                    self.jitter = eps * scale
                    break
                except np.linalg.LinAlgError:
                    continue
            else:
                raise CholeskyError("dense Cholesky failed after jitter")

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, rhs):
        from scipy.linalg import cho_solve

        return cho_solve((self.L, True), np.asarray(rhs, dtype=float))

    def half_solve(self, rhs):
        from scipy.linalg import solve_triangular

        return solve_triangular(self.L, np.asarray(rhs, dtype=float), lower=True)

    def correlate(self, white):
        return self.L @ np.asarray(white, dtype=float)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))
