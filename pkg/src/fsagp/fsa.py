"""Low-rank plus tapered-remainder covariance algebra.

The data covariance is ``Sigma_Z = B W B' + V`` where ``B`` holds the
predictive-process basis at the observed locations, ``W`` is the inverse
knot correlation matrix and ``V`` is the sparse tapered remainder plus
nugget. Nothing here ever forms ``Sigma_Z``; solves and log-determinants go
through the Woodbury identity and the sparse factor of ``V``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .covkernels import (
    LocalParams,
    ParentCovParams,
    TaperSpec,
    as_locs,
    cross_corr,
    local_params,
    pair_cov,
)
from .sparse import JITTER_LADDER, CholeskyError, DenseCholeskyFactor, SymbolicCholesky

LOG2PI = math.log(2.0 * math.pi)

# incremented whenever a tapered pattern (neighbour search + ordering) is built
PATTERN_BUILDS = 0


def neighbor_pairs(locs, L):
    """All index pairs ``i <= j`` with ``|s_i - s_j| < L``.

    Uses uniform grid cells of side ``L``; only adjacent cells are compared.
    Pairs come back sorted by ``(i, j)`` along with their distances.
    """
    if not L > 0:
        raise ValueError("taper length must be positive")
    locs = as_locs(locs)
    n, d = locs.shape
    cells = np.floor(locs / L).astype(np.int64)
    buckets: dict[tuple, list] = {}
    for idx, key in enumerate(map(tuple, cells)):
        buckets.setdefault(key, []).append(idx)
    buckets = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}
    offsets = list(itertools.product((-1, 0, 1), repeat=d))
    Is, Js, Ds = [], [], []
    for key, members in buckets.items():
        for off in offsets:
            other = buckets.get(tuple(k + o for k, o in zip(key, off)))
            if other is None:
                continue
            diff = locs[members][:, None, :] - locs[other][None, :, :]
            dist = np.sqrt((diff**2).sum(-1))
            a, b = np.nonzero(dist < L)
            ii, jj = members[a], other[b]
            keep = ii <= jj
            Is.append(ii[keep])
            Js.append(jj[keep])
            Ds.append(dist[a, b][keep])
    I = np.concatenate(Is) if Is else np.zeros(0, dtype=np.int64)
    J = np.concatenate(Js) if Js else np.zeros(0, dtype=np.int64)
    D = np.concatenate(Ds) if Ds else np.zeros(0)
    order = np.lexsort((J, I))
    return I[order], J[order], D[order]


class KnotSet:
    """Ordered knot locations, shape (r, d); r may be zero."""

    def __init__(self, knots, dim=None):
        k = np.asarray(knots, dtype=float)
        if k.size == 0:
            k = np.zeros((0, dim or (k.shape[1] if k.ndim == 2 else 1)))
        elif k.ndim == 1:
            k = k.reshape(-1, dim or 1)
        self.locs = k

    @property
    def r(self) -> int:
        return self.locs.shape[0]

    @property
    def dim(self) -> int:
        return self.locs.shape[1]

    def __len__(self):
        return self.r

    def added(self, k) -> "KnotSet":
        return KnotSet(np.vstack([self.locs, np.reshape(k, (1, self.dim))]))

    def deleted(self, j: int) -> "KnotSet":
        return KnotSet(np.delete(self.locs, j, axis=0), self.dim)

    def moved(self, j: int, k) -> "KnotSet":
        return self.deleted(j).added(k)

    def too_close(self, k, min_sep: float) -> bool:
        if self.r == 0 or min_sep <= 0:
            return False
        return bool(np.min(np.linalg.norm(self.locs - np.reshape(k, (1, self.dim)), axis=1)) < min_sep)


@dataclass
class KnotPrecision:
    """Cholesky factor of the knot correlation matrix; W is its inverse."""

    corr: np.ndarray  # R_K, possibly with jitter on the diagonal
    chol: np.ndarray  # lower factor of corr
    jitter: float = 0.0

    @property
    def r(self) -> int:
        return self.corr.shape[0]

    def logdet_corr(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol)))) if self.r else 0.0


def factor_knot_corr(R) -> KnotPrecision:
    R = np.asarray(R, dtype=float)
    r = R.shape[0]
    if r == 0:
        return KnotPrecision(np.zeros((0, 0)), np.zeros((0, 0)))
    try:
        return KnotPrecision(R, cholesky(R, lower=True))
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(R)))
    for eps in JITTER_LADDER:
        Rj = R + eps * scale * np.eye(r)
        try:
            return KnotPrecision(Rj, cholesky(Rj, lower=True), eps * scale)
        except np.linalg.LinAlgError:
            continue
    raise CholeskyError("knot correlation matrix is singular even after jitter")


def knot_precision(params: ParentCovParams, knots: KnotSet) -> KnotPrecision:
    lk = local_params(params, knots.locs)
    R = cross_corr(lk, lk)
    np.fill_diagonal(R, 1.0)
    return factor_knot_corr(R)


def basis_matrix(params: ParentCovParams, locs, knots: KnotSet) -> np.ndarray:
    """Rows ``b(s)' = sigma(s) (rho(s, k_1), ..., rho(s, k_r))``."""
    lp = local_params(params, locs)
    return _basis_from_local(lp, local_params(params, knots.locs) if knots.r else None, knots.r)


def _basis_from_local(lp: LocalParams, lk: LocalParams | None, r: int) -> np.ndarray:
    if r == 0:
        return np.zeros((lp.locs.shape[0], 0))
    return lp.sigma[:, None] * cross_corr(lp, lk)


def predictive_cov(s1, s2, params: ParentCovParams, knots: KnotSet) -> np.ndarray:
    """Covariance ``b(s1)' W b(s2)`` of the predictive process between two location sets."""
    knots = knots if isinstance(knots, KnotSet) else KnotSet(knots, params.dim)
    s1, s2 = as_locs(s1), as_locs(s2)
    if knots.r == 0:
        return np.zeros((s1.shape[0], s2.shape[0]))
    kp = knot_precision(params, knots)
    U1 = solve_triangular(kp.chol, basis_matrix(params, s1, knots).T, lower=True)
    U2 = solve_triangular(kp.chol, basis_matrix(params, s2, knots).T, lower=True)
    return U1.T @ U2


class TaperedPattern:
    """Fixed sparsity pattern of the tapered matrices for one location set.

    The neighbour search, taper values and fill-reducing ordering are
    computed here once and reused by every later factorization.
    """

    def __init__(self, locs, taper: TaperSpec | float, dense: bool = False, ordering: str = "mindegree"):
        global PATTERN_BUILDS
        PATTERN_BUILDS += 1
        self.taper = taper if isinstance(taper, TaperSpec) else TaperSpec(float(taper))
        self.locs = as_locs(locs)
        self.n = self.locs.shape[0]
        self.I, self.J, self.lags = neighbor_pairs(self.locs, self.taper.length)
        self.taper_vals = self.taper(self.lags)
        self.is_diag = self.I == self.J
        self.diag_pairs = np.flatnonzero(self.is_diag)
        self.dense = dense
        self.symbolic = None if dense else SymbolicCholesky(self.n, self.I, self.J, ordering)

    @property
    def nnz(self) -> int:
        """Nonzeros of the full symmetric matrix."""
        return int(2 * self.I.size - self.diag_pairs.size)

    def to_dense(self, values) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        A[self.I, self.J] = values
        A[self.J, self.I] = values
        return A

    def to_sparse(self, values):
        import scipy.sparse as sp

        off = ~self.is_diag
        rows = np.concatenate([self.I, self.J[off]])
        cols = np.concatenate([self.J, self.I[off]])
        return sp.csr_matrix((np.concatenate([values, values[off]]), (rows, cols)), shape=(self.n, self.n))

    def factor(self, values):
        if self.dense:
            return DenseCholeskyFactor(self.to_dense(values))
        return self.symbolic.factor(values)


def remainder_values(pattern: TaperedPattern, cp_vals, U) -> np.ndarray:
    """Tapered remainder ``T(h/L) (C_P - b'Wb)`` on the pattern; ``U = L_K^{-1} B'``."""
    if U.shape[0]:
        cnu = np.einsum("ij,ij->j", U[:, pattern.I], U[:, pattern.J])
        return pattern.taper_vals * (cp_vals - cnu)
    return pattern.taper_vals * cp_vals


class DataCovOps:
    """Solves and log-determinants with ``Sigma_Z = B W B' + V`` for fixed (theta, K).

    Instances are treated as immutable; the knot updates return new objects
    that share the pattern, the parent covariance values and the unchanged
    basis columns.
    """

    def __init__(self, pattern: TaperedPattern, params: ParentCovParams, knots: KnotSet, noise_var: float,
                 _lp: LocalParams | None = None, _cp_vals=None, _B=None, _R=None):
        if not noise_var > 0:
            raise ValueError("noise variance must be positive")
        self.pattern = pattern
        self.params = params
        self.knots = knots if isinstance(knots, KnotSet) else KnotSet(knots, params.dim)
        self.noise_var = float(noise_var)
        self.lp = local_params(params, pattern.locs) if _lp is None else _lp
        self.cp_vals = pair_cov(self.lp, pattern.I, pattern.J) if _cp_vals is None else _cp_vals
        if _B is None or _R is None:
            if self.knots.r:
                lk = local_params(params, self.knots.locs)
                _B = _basis_from_local(self.lp, lk, self.knots.r)
                _R = cross_corr(lk, lk)
                np.fill_diagonal(_R, 1.0)
            else:
                _B = np.zeros((pattern.n, 0))
                _R = np.zeros((0, 0))
        self.B = _B
        self.kp = factor_knot_corr(_R)
        self._raw_R = _R
        self._finish()

    @property
    def r(self) -> int:
        return self.knots.r

    def _finish(self):
        pat = self.pattern
        self.U = solve_triangular(self.kp.chol, self.B.T, lower=True) if self.r else np.zeros((0, pat.n))
        self.vdelta_vals = remainder_values(pat, self.cp_vals, self.U)
        self.v_vals = self.vdelta_vals.copy()
        self.v_vals[pat.diag_pairs] += self.noise_var
        self.vfac = pat.factor(self.v_vals)
        if self.r:
            self.VinvB = self.vfac.solve(self.B)
            G = self.kp.corr + self.B.T @ self.VinvB
            G = 0.5 * (G + G.T)
            try:
                self.gchol = cholesky(G, lower=True)
            except np.linalg.LinAlgError as exc:
                raise CholeskyError("inner r x r factorization failed") from exc
            logdet_inner = 2.0 * float(np.sum(np.log(np.diag(self.gchol)))) - self.kp.logdet_corr()
        else:
            self.VinvB = np.zeros((pat.n, 0))
            self.gchol = np.zeros((0, 0))
            logdet_inner = 0.0
        self._logdet = self.vfac.logdet() + logdet_inner

    # --- knot updates -----------------------------------------------------

    def _with(self, knots: KnotSet, B, R) -> "DataCovOps":
        return DataCovOps(self.pattern, self.params, knots, self.noise_var,
                          _lp=self.lp, _cp_vals=self.cp_vals, _B=B, _R=R)

    def _new_columns(self, k):
        lk = local_params(self.params, np.reshape(k, (1, -1)))
        col = self.lp.sigma * cross_corr(self.lp, lk)[:, 0]
        if self.r:
            rk = cross_corr(local_params(self.params, self.knots.locs), lk)[:, 0]
        else:
            rk = np.zeros(0)
        return col, rk

    def with_knot_added(self, k) -> "DataCovOps":
        col, rk = self._new_columns(k)
        r = self.r
        R = np.empty((r + 1, r + 1))
        R[:r, :r] = self._raw_R
        R[:r, r] = rk
        R[r, :r] = rk
        R[r, r] = 1.0
        return self._with(self.knots.added(k), np.column_stack([self.B, col]), R)

    def with_knot_deleted(self, j: int) -> "DataCovOps":
        if not 0 <= j < self.r:
            raise IndexError("knot index out of range")
        R = np.delete(np.delete(self._raw_R, j, axis=0), j, axis=1)
        return self._with(self.knots.deleted(j), np.delete(self.B, j, axis=1), R)

    def with_knot_moved(self, j: int, k) -> "DataCovOps":
        return self.with_knot_deleted(j).with_knot_added(k)

    # --- linear algebra ------------------------------------------------------

    def solve(self, rhs):
        """``Sigma_Z^{-1} rhs`` via Woodbury."""
        rhs = np.asarray(rhs, dtype=float)
        out = self.vfac.solve(rhs)
        if self.r:
            t = self.B.T @ out
            out = out - self.VinvB @ cho_solve((self.gchol, True), t)
        return out

    def logdet(self) -> float:
        """``log|V| + log|I_r + W B'V^{-1}B|``."""
        return self._logdet

    def quad(self, resid) -> float:
        resid = np.asarray(resid, dtype=float)
        h = self.vfac.half_solve(resid)
        q = float(h @ h)
        if self.r:
            g = solve_triangular(self.gchol, self.VinvB.T @ resid, lower=True)
            q -= float(g @ g)
        return q

    def loglik(self, resid) -> float:
        n = self.pattern.n
        return -0.5 * n * LOG2PI - 0.5 * self._logdet - 0.5 * self.quad(resid)

    def dense_sigma(self) -> np.ndarray:
        """Dense ``Sigma_Z``; for tests and small problems only."""
        V = self.pattern.to_dense(self.v_vals)
        if self.r:
            V = V + self.U.T @ self.U
        return V


def build_tapered_v(pattern: TaperedPattern, params, knots, noise_var):
    """Sparse ``V = V_delta + noise_var I`` as a scipy matrix."""
    ops = DataCovOps(pattern, params, knots, noise_var)
    return pattern.to_sparse(ops.v_vals)


def smw_solve(ops: DataCovOps, rhs):
    return ops.solve(rhs)


def logdet_sigma_z(ops: DataCovOps) -> float:
    return ops.logdet()


def gaussian_loglik(ops: DataCovOps, resid) -> float:
    return ops.loglik(resid)
