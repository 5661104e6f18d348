"""Reversible-jump MCMC over (beta, theta, knots).

Each iteration draws beta from its Gaussian full conditional, updates the
covariance parameters with one adaptive random-walk Metropolis step on the
unconstrained scale, and proposes a birth, death or move of a knot.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .covkernels import ParentCovParams
from .data import Dataset
from .fsa import DataCovOps, KnotSet, TaperedPattern
from .sparse import CholeskyError

ADD, DELETE, MOVE, NONE = "add", "delete", "move", "none"


class ChainError(RuntimeError):
    """Numerical failure inside a chain; carries the iteration and the partial record."""

    def __init__(self, message, iteration, record):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
        self.record = record


@dataclass
class AdaptConfig:
    start: int = 200
    init_scale: float = 0.1
    target: float = 0.234
    regularization: float = 1e-8


@dataclass
class ChainConfig:
    n_iter: int = 10_000
    n_burn: int = 5_000
    thin: int = 10
    seed: int = 0
    taper_length: float = 6.5
    knot_mode: str = "random"  # or "fixed"
    proposal_domain: tuple | None = None
    domain_expand: float = 0.02
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    noise_var: float | None = None
    check_every: int = 100
    min_knot_sep: float = 1e-6  # fraction of the proposal-domain diameter
    use_likelihood: bool = True
    dense: bool = False

    def __post_init__(self):
        if not 0 <= self.n_burn < self.n_iter:
            raise ValueError("need 0 <= n_burn < n_iter")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.knot_mode not in ("random", "fixed"):
            raise ValueError(f"unknown knot mode {self.knot_mode!r}")


@dataclass
class ModelState:
    beta: np.ndarray
    params: ParentCovParams
    knots: KnotSet
    ops: DataCovOps | None
    loglik: float


@dataclass
class ChainRecord:
    """Kept iterations of one chain (append-only)."""

    theta_labels: list
    beta_dim: int
    dim: int
    iters: list = field(default_factory=list)
    r: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    move: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    knots: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def append(self, it, state: ModelState, free, move, accepted):
        self.iters.append(int(it))
        self.r.append(state.knots.r)
        self.beta.append(np.array(state.beta, dtype=float))
        self.theta.append(np.array(free, dtype=float))
        self.loglik.append(float(state.loglik))
        self.move.append(move)
        self.accepted.append(bool(accepted))
        self.knots.append(state.knots.locs.copy())

    def __len__(self):
        return len(self.iters)

    def draw(self, i, template: ParentCovParams):
        return self.beta[i], template.with_free_vector(self.theta[i]), KnotSet(self.knots[i], self.dim)

    def header(self) -> list[str]:
        return (["iter", "r"] + [f"beta{j}" for j in range(self.beta_dim)] + list(self.theta_labels)
                + ["loglik", "move", "accepted", "knots"])

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for i in range(len(self)):
            knots = ";".join(" ".join(repr(float(c)) for c in k) for k in self.knots[i])
            w.writerow([self.iters[i], self.r[i], *map(repr, map(float, self.beta[i])),
                        *map(repr, map(float, self.theta[i])), repr(self.loglik[i]), self.move[i],
                        int(self.accepted[i]), knots])
        text = buf.getvalue()
        if path_or_buf is not None:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, dim: int) -> "ChainRecord":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head = rows[0]
        nb = sum(1 for h in head if h.startswith("beta"))
        labels = head[2 + nb:-4]
        rec = cls(theta_labels=labels, beta_dim=nb, dim=dim)
        for row in rows[1:]:
            rec.iters.append(int(row[0]))
            rec.r.append(int(row[1]))
            rec.beta.append(np.array(row[2:2 + nb], dtype=float))
            rec.theta.append(np.array(row[2 + nb:2 + nb + len(labels)], dtype=float))
            rec.loglik.append(float(row[-4]))
            rec.move.append(row[-3])
            rec.accepted.append(row[-2] == "1")
            kn = [list(map(float, k.split())) for k in row[-1].split(";") if k.strip()]
            rec.knots.append(np.array(kn, dtype=float).reshape(-1, dim))
        return rec


# ---------------------------------------------------------------------------
# individual updates


def gibbs_beta(ops: DataCovOps, z, X, rng=None, return_moments=False):
    """Draw beta from N((X'S^-1X)^-1 X'S^-1 z, (X'S^-1X)^-1) under a flat prior."""
    SiX = ops.solve(X)
    A = X.T @ SiX
    A = 0.5 * (A + A.T)
    try:
        LA = cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariate matrix is rank deficient") from exc
    rhs = SiX.T @ z
    mean = solve_triangular(LA.T, solve_triangular(LA, rhs, lower=True), lower=False)
    if return_moments:
        cov = solve_triangular(LA.T, solve_triangular(LA, np.eye(A.shape[0]), lower=True), lower=False)
        return mean, cov
    w = rng.standard_normal(A.shape[0])
    return mean + solve_triangular(LA.T, w, lower=False)


def propose_knot_move(r: int, rng, domain):
    """Pick add / delete / move with probability 1/3 each; always add when r = 0.

    Returns ``(kind, j, k)`` with ``j`` the knot index to remove (or None)
    and ``k`` the new location (or None).
    """
    lo, hi = (np.asarray(b, dtype=float) for b in domain)
    kind = ADD if r == 0 else (ADD, DELETE, MOVE)[int(rng.integers(3))]
    j = int(rng.integers(r)) if kind in (DELETE, MOVE) else None
    k = lo + (hi - lo) * rng.random(lo.size) if kind in (ADD, MOVE) else None
    return kind, j, k


def proposal_ratio(r_old: int, move: str) -> float:
    """Reverse-over-forward proposal probability for a knot move from ``r_old`` knots."""
    if move == ADD:
        return 1.0 / 3.0 if r_old == 0 else 1.0 / (r_old + 1)
    if move == DELETE:
        if r_old < 1:
            raise ValueError("cannot delete from an empty knot set")
        # from one knot the reverse move is the forced add out of r = 0
        return 3.0 if r_old == 1 else float(r_old)
    if move == MOVE:
        return 1.0
    raise ValueError(f"unknown move {move!r}")


def rj_log_ratio(loglik_new, loglik_old, r_old, move) -> float:
    return loglik_new - loglik_old + math.log(proposal_ratio(r_old, move))


def rj_accept_prob(loglik_new, loglik_old, r_old, move) -> float:
    return math.exp(min(0.0, rj_log_ratio(loglik_new, loglik_old, r_old, move)))


def mh_log_ratio(logpost_new, logpost_old) -> float:
    """Log of the untruncated Metropolis ratio for a symmetric proposal."""
    return logpost_new - logpost_old


class ThetaAdapter:
    """Adaptive random-walk proposal on the free parameter vector.

    Starts from a diagonal proposal proportional to the prior scales, then
    switches to the running empirical covariance times 2.38^2/dim. A global
    log-scale is tuned toward the target acceptance. Everything freezes
    once ``freeze()`` is called.
    """

    def __init__(self, x0, prior_sd, cfg: AdaptConfig):
        self.cfg = cfg
        self.dim = x0.size
        self.t = 0
        self.mean = np.array(x0, dtype=float)
        self.M2 = np.zeros((self.dim, self.dim))
        self.log_scale = 0.0
        self.frozen = False
        self.init_cov = np.diag((cfg.init_scale * prior_sd) ** 2)
        self._chol = cholesky(self.init_cov, lower=True)

    def _cov(self):
        if self.t < max(self.cfg.start, 2):
            C = self.init_cov
        else:
            emp = self.M2 / (self.t - 1)
            C = (2.38**2 / self.dim) * (emp + self.cfg.regularization * np.eye(self.dim))
        return math.exp(self.log_scale) * C

    def propose(self, x, rng):
        return x + self._chol @ rng.standard_normal(self.dim)

    def update(self, x, accept_prob):
        if self.frozen:
            return
        self.t += 1
        delta = x - self.mean
        self.mean += delta / self.t
        self.M2 += np.outer(delta, x - self.mean)
        gain = 1.0 / (self.t ** 0.6)
        self.log_scale += gain * (accept_prob - self.cfg.target)
        self.log_scale = float(np.clip(self.log_scale, -20, 20))
        C = self._cov()
        try:
            self._chol = cholesky(0.5 * (C + C.T), lower=True)
        except np.linalg.LinAlgError:
            pass

    def freeze(self):
        self.frozen = True


def _loglik(ops, z, X, beta):
    return ops.loglik(z - X @ beta)


def mh_theta(state: ModelState, data: Dataset, pattern, adapter: ThetaAdapter, rng, use_likelihood=True):
    """One Metropolis-Hastings update of theta. Returns (state, accepted, accept_prob)."""
    x = state.params.free_vector()
    xs = adapter.propose(x, rng)
    params_new = state.params.with_free_vector(xs)
    lp_old = state.params.log_prior()
    lp_new = params_new.log_prior()
    if use_likelihood:
        try:
            ops_new = DataCovOps(pattern, params_new, state.knots, state.ops.noise_var)
            ll_new = _loglik(ops_new, data.z, data.X, state.beta)
        except (CholeskyError, FloatingPointError):
            ops_new, ll_new = None, -np.inf
    else:
        ops_new, ll_new = None, 0.0
    log_ratio = mh_log_ratio(lp_new + ll_new, lp_old + state.loglik)
    prob = math.exp(min(0.0, log_ratio)) if np.isfinite(log_ratio) else 0.0
    accepted = rng.random() < prob
    if accepted:
        state = ModelState(state.beta, params_new, state.knots, ops_new if use_likelihood else state.ops, ll_new)
    return state, accepted, prob


def rj_knots(state: ModelState, data: Dataset, rng, domain, min_sep, use_likelihood=True):
    """One reversible-jump knot update. Returns (state, move, accepted)."""
    r = state.knots.r
    kind, j, k = propose_knot_move(r, rng, domain)
    u = rng.random()
    if kind in (ADD, MOVE):
        base = state.knots if kind == ADD else state.knots.deleted(j)
        if base.too_close(k, min_sep):
            return state, kind, False
    if kind == ADD:
        new_knots = state.knots.added(k)
    elif kind == DELETE:
        new_knots = state.knots.deleted(j)
    else:
        new_knots = state.knots.moved(j, k)
    if use_likelihood:
        try:
            if kind == ADD:
                ops_new = state.ops.with_knot_added(k)
            elif kind == DELETE:
                ops_new = state.ops.with_knot_deleted(j)
            else:
                ops_new = state.ops.with_knot_moved(j, k)
            ll_new = _loglik(ops_new, data.z, data.X, state.beta)
        except CholeskyError:
            return state, kind, False
    else:
        ops_new, ll_new = None, 0.0
    if math.log(u) < rj_log_ratio(ll_new, state.loglik if use_likelihood else 0.0, r, kind):
        return ModelState(state.beta, state.params, new_knots, ops_new if use_likelihood else state.ops, ll_new), kind, True
    return state, kind, False


# ---------------------------------------------------------------------------


def proposal_domain(data: Dataset, config: ChainConfig):
    if config.proposal_domain is not None:
        lo, hi = config.proposal_domain
        return np.atleast_1d(np.asarray(lo, dtype=float)), np.atleast_1d(np.asarray(hi, dtype=float))
    return data.bounding_box(config.domain_expand)


def make_rng(seed) -> np.random.Generator:
    """Counter-based stream so chains with distinct seeds never share state."""
    return np.random.Generator(np.random.Philox(seed))


def run_chain(data: Dataset, params: ParentCovParams, config: ChainConfig, knots=None,
              pattern: TaperedPattern | None = None) -> ChainRecord:
    """Run the sampler and return the thinned post-burn-in record.

    ``params`` is the starting value and also fixes which fields vary
    spatially. ``knots`` gives the initial knots (random mode) or the fixed
    knot set (fixed mode).
    """
    noise_var = config.noise_var if config.noise_var is not None else data.noise_var
    if noise_var is None:
        raise ValueError("the measurement-error variance must be supplied")
    rng = make_rng(config.seed)
    if pattern is None:
        pattern = TaperedPattern(data.locs, config.taper_length, dense=config.dense)
    knots = KnotSet(np.zeros((0, data.dim)) if knots is None else knots, data.dim)
    lo, hi = proposal_domain(data, config)
    min_sep = config.min_knot_sep * float(np.linalg.norm(hi - lo))
    use_ll = config.use_likelihood

    ops = DataCovOps(pattern, params, knots, noise_var) if use_ll else None
    if use_ll:
        beta = gibbs_beta(ops, data.z, data.X, return_moments=True)[0]
        ll = _loglik(ops, data.z, data.X, beta)
    else:
        beta = np.zeros(data.X.shape[1])
        ll = 0.0
    state = ModelState(beta, params, knots, ops, ll)
    adapter = ThetaAdapter(params.free_vector(), params.prior_sd_vector(), config.adapt)
    record = ChainRecord(theta_labels=params.free_labels(), beta_dim=data.X.shape[1], dim=data.dim)
    n_theta_acc = 0
    n_moves = {ADD: 0, DELETE: 0, MOVE: 0}
    n_move_acc = {ADD: 0, DELETE: 0, MOVE: 0}
    max_audit_err = 0.0

    for it in range(config.n_iter):
        if it == config.n_burn:
            adapter.freeze()
        try:
            if use_ll:
                beta = gibbs_beta(state.ops, data.z, data.X, rng)
                state = ModelState(beta, state.params, state.knots, state.ops, _loglik(state.ops, data.z, data.X, beta))
            state, acc, prob = mh_theta(state, data, pattern, adapter, rng, use_ll)
            adapter.update(state.params.free_vector(), prob)
            if it >= config.n_burn:
                n_theta_acc += acc
            move, moved = NONE, False
            if config.knot_mode == "random":
                state, move, moved = rj_knots(state, data, rng, (lo, hi), min_sep, use_ll)
                if it >= config.n_burn:
                    n_moves[move] += 1
                    n_move_acc[move] += moved
            if use_ll and config.check_every and (it + 1) % config.check_every == 0:
                fresh = DataCovOps(pattern, state.params, state.knots, noise_var)
                ll_fresh = _loglik(fresh, data.z, data.X, state.beta)
                err = abs(ll_fresh - state.loglik)
                max_audit_err = max(max_audit_err, err)
                if err > 1e-8 * max(1.0, abs(ll_fresh)):
                    raise ChainError(f"cached log-likelihood drifted by {err:g}", it, record)
        except (CholeskyError, np.linalg.LinAlgError) as exc:
            raise ChainError(f"numerical failure: {exc}", it, record) from exc
        if it >= config.n_burn and (it - config.n_burn) % config.thin == config.thin - 1:
            record.append(it, state, state.params.free_vector(), move, moved)

    kept = config.n_iter - config.n_burn
    record.stats = {
        "theta_accept_rate": n_theta_acc / kept,
        "move_counts": n_moves,
        "move_accepts": n_move_acc,
        "max_audit_error": max_audit_err,
        "pattern_nnz": pattern.nnz,
        "numeric_factorizations": None if pattern.symbolic is None else pattern.symbolic.n_numeric,
        "proposal_domain": (lo.tolist(), hi.tolist()),
    }
    return record
