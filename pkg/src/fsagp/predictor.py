"""Posterior prediction of the latent process at arbitrary locations.

For each retained posterior draw of (beta, theta, K) we draw the basis
weights eta from their Gaussian full conditional and the tapered remainder
at the prediction locations by conditional simulation, so the conditional
covariance of the remainder is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve, solve_triangular

from .covkernels import ParentCovParams, as_locs, local_params, pair_cov
from .data import Dataset
from .fsa import DataCovOps, KnotSet, TaperedPattern, _basis_from_local, remainder_values
from .sampler import ChainRecord, make_rng


@dataclass
class PredictionSet:
    locs: np.ndarray
    X: np.ndarray
    overlap: np.ndarray  # observed index per prediction location, -1 if unobserved

    @classmethod
    def build(cls, locs, obs_locs, X=None, tol: float = 1e-12) -> "PredictionSet":
        locs = as_locs(locs)
        obs_locs = as_locs(obs_locs)
        if X is None:
            X = np.ones((locs.shape[0], 1))
        overlap = np.full(locs.shape[0], -1, dtype=np.int64)
        from scipy.spatial import cKDTree

        if obs_locs.shape[0]:
            dist, idx = cKDTree(obs_locs).query(locs, k=1)
            hit = dist <= tol
            overlap[hit] = idx[hit]
        return cls(locs, np.asarray(X, dtype=float).reshape(locs.shape[0], -1), overlap)

    @property
    def n(self) -> int:
        return self.locs.shape[0]


class JointLayout:
    """Observed locations followed by the unobserved prediction locations.

    Holds the tapered pattern over the union and the sparse structure of
    the prediction-by-observation cross covariance.
    """

    def __init__(self, obs_pattern: TaperedPattern, pset: PredictionSet):
        n = obs_pattern.n
        unobs = np.flatnonzero(pset.overlap < 0)
        self.n_obs = n
        self.locs = np.vstack([obs_pattern.locs, pset.locs[unobs]])
        self.pred_index = pset.overlap.copy()
        self.pred_index[unobs] = n + np.arange(unobs.size)
        self.pattern = TaperedPattern(self.locs, obs_pattern.taper, dense=obs_pattern.dense)
        I, J = self.pattern.I, self.pattern.J
        # entries of cov(delta_joint, delta_obs): column index must be observed
        rows, cols, src = [], [], []
        both = J < n
        rows += [I[both], J[both & (I != J)]]
        cols += [J[both], I[both & (I != J)]]
        src += [np.flatnonzero(both), np.flatnonzero(both & (I != J))]
        mixed = (I < n) & (J >= n)
        rows.append(J[mixed])
        cols.append(I[mixed])
        src.append(np.flatnonzero(mixed))
        self.cross_rows = np.concatenate(rows)
        self.cross_cols = np.concatenate(cols)
        self.cross_src = np.concatenate(src)

    def cross(self, vals) -> sp.csr_matrix:
        return sp.csr_matrix((vals[self.cross_src], (self.cross_rows, self.cross_cols)),
                             shape=(self.locs.shape[0], self.n_obs))


def sample_eta(ops: DataCovOps, resid, rng=None, return_moments=False):
    """Draw eta ~ N(G^-1 B'V^-1 resid, G^-1) with G = B'V^-1B + W^-1."""
    if ops.r == 0:
        return (np.zeros(0), np.zeros((0, 0))) if return_moments else np.zeros(0)
    t = ops.VinvB.T @ np.asarray(resid, dtype=float)
    mean = cho_solve((ops.gchol, True), t)
    if return_moments:
        return mean, cho_solve((ops.gchol, True), np.eye(ops.r))
    return mean + solve_triangular(ops.gchol.T, rng.standard_normal(ops.r), lower=False)


@dataclass
class RemainderBlocks:
    """Tapered remainder covariances on the joint layout for one (theta, K)."""

    layout: JointLayout
    vals: np.ndarray

    def joint_dense(self):
        return self.layout.pattern.to_dense(self.vals)

    def cross(self):
        return self.layout.cross(self.vals)


def remainder_blocks(ops: DataCovOps, layout: JointLayout) -> RemainderBlocks:
    lpj = local_params(ops.params, layout.locs)
    cp = pair_cov(lpj, layout.pattern.I, layout.pattern.J)
    if ops.r:
        lk = local_params(ops.params, ops.knots.locs)
        Bj = _basis_from_local(lpj, lk, ops.r)
        U = solve_triangular(ops.kp.chol, Bj.T, lower=True)
    else:
        U = np.zeros((0, layout.locs.shape[0]))
    return RemainderBlocks(layout, remainder_values(layout.pattern, cp, U))


def conditional_sim_delta(ops: DataCovOps, eta, resid, layout: JointLayout, rng, blocks=None):
    """One draw of the tapered remainder at every joint location given eta and the data.

    Returns the draw on the joint layout; index it with
    ``layout.pred_index`` for the prediction locations.
    """
    blocks = remainder_blocks(ops, layout) if blocks is None else blocks
    fac = layout.pattern.factor(blocks.vals)
    d_check = fac.correlate(rng.standard_normal(layout.locs.shape[0]))
    e_check = np.sqrt(ops.noise_var) * rng.standard_normal(layout.n_obs)
    target = np.asarray(resid, dtype=float) - (ops.B @ eta if ops.r else 0.0) - d_check[:layout.n_obs] - e_check
    return d_check + blocks.cross() @ ops.vfac.solve(target)


def conditional_delta_moments(ops: DataCovOps, eta, resid, layout: JointLayout, blocks=None):
    """Exact conditional mean and covariance of the remainder (dense; small problems only)."""
    blocks = remainder_blocks(ops, layout) if blocks is None else blocks
    C = blocks.cross().toarray()
    r = np.asarray(resid, dtype=float) - (ops.B @ eta if ops.r else 0.0)
    mean = C @ ops.vfac.solve(r)
    cov = blocks.joint_dense() - C @ ops.vfac.solve(C.T)
    return mean, cov


@dataclass
class PosteriorField:
    locs: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    smooth_mean: np.ndarray
    draws: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_csv(self, path):
        d = self.locs.shape[1]
        head = ",".join([f"x{j + 1}" for j in range(d)] + ["mean", "sd", "lower", "upper", "smooth_mean"]
                        + list(self.extra))
        cols = [self.locs, self.mean[:, None], self.sd[:, None], self.lower[:, None], self.upper[:, None],
                self.smooth_mean[:, None]] + [np.asarray(v)[:, None] for v in self.extra.values()]
        np.savetxt(path, np.hstack(cols), delimiter=",", header=head, comments="", fmt="%.17g")

    def write_draws(self, path):
        """Raw draws as little-endian float64, one row per location, one column per draw."""
        if self.draws is None:
            raise ValueError("draws were not kept")
        np.ascontiguousarray(self.draws, dtype="<f8").tofile(path)


def summarize(draws, level=0.95):
    draws = np.asarray(draws)
    a = (1.0 - level) / 2.0
    mean = draws.mean(axis=1)
    sd = draws.std(axis=1, ddof=1) if draws.shape[1] > 1 else np.zeros(draws.shape[0])
    lower, upper = np.quantile(draws, [a, 1.0 - a], axis=1)
    return mean, sd, lower, upper


def predict_field(chain: ChainRecord, data: Dataset, pset: PredictionSet, template: ParentCovParams,
                  taper_length: float, keep_every: int = 10, level: float = 0.95, seed: int = 0,
                  include_noise: bool = False, keep_draws: bool = False,
                  pattern: TaperedPattern | None = None) -> PosteriorField:
    """Posterior summaries of Y (or of Z with ``include_noise``) at the prediction set.

    ``template`` supplies the structure used to turn the recorded free
    parameter vectors back into covariance parameters.
    """
    if len(chain) == 0:
        raise ValueError("chain record is empty")
    if data.noise_var is None:
        raise ValueError("the measurement-error variance must be supplied")
    if pattern is None:
        pattern = TaperedPattern(data.locs, taper_length)
    layout = JointLayout(pattern, pset)
    rng = make_rng(seed)
    picks = range(0, len(chain), keep_every)
    ys, smooth = [], []
    for i in picks:
        beta, params, knots = chain.draw(i, template)
        ops = DataCovOps(pattern, params, knots, data.noise_var)
        resid = data.z - data.X @ beta
        eta = sample_eta(ops, resid, rng)
        delta = conditional_sim_delta(ops, eta, resid, layout, rng)[layout.pred_index]
        trend = pset.X @ beta
        if knots.r:
            trend = trend + _basis_from_local(local_params(params, pset.locs), local_params(params, knots.locs), knots.r) @ eta
        y = trend + delta
        if include_noise:
            y = y + np.sqrt(data.noise_var) * rng.standard_normal(pset.n)
        ys.append(y)
        smooth.append(trend)
    draws = np.column_stack(ys)
    mean, sd, lower, upper = summarize(draws, level)
    return PosteriorField(pset.locs, mean, sd, lower, upper, level, np.column_stack(smooth).mean(axis=1),
                          draws if keep_draws else None)
