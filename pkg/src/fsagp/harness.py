"""One-dimensional simulation studies: truth generators, designs, model variants and scores."""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky

from .covkernels import LocalParams, cross_cov, default_params, norm_cdf
from .data import Dataset
from .predictor import PredictionSet, predict_field
from .sampler import ChainConfig, run_chain

GRID = np.arange(1, 513, dtype=float)
MBD_STARTS = (70, 198, 326, 454)
MBD_LENGTH = 25
SIM1_NOISE = 0.004
GP_NOISE = 0.45
TAPER_LENGTH = 6.5
KNOT_DOMAIN = (-9.0, 522.0)
SV_CENTERS = (64.0, 192.0, 320.0, 448.0)
SV_SCALE = 74.0
GROUPS = ("ALL", "OBS", "MAR", "MBD")

VARIANTS = {
    "random-NPC": ("random", True),
    "random-SPC": ("random", False),
    "fixed8-NPC": ("fixed8", True),
    "fixed8-SPC": ("fixed8", False),
    "fixed14-NPC": ("fixed14", True),
    "fixed14-SPC": ("fixed14", False),
}

FIXED_KNOTS = {
    "fixed8": np.linspace(-10.0, 522.0, 8),
    "fixed14": np.linspace(-4.0, 516.0, 14),
}


def gen_sim1_truth(s):
    s = np.asarray(s, dtype=float)
    return 1.0 + np.sin(2 * np.pi * ((s - 306) / 512) ** 2) * np.sin(20 * np.pi * ((s - 50) / 512) ** 2)


def gen_sim2_params(s):
    """Standard deviation, scale and smoothness fields of the nonstationary truth."""
    s = np.asarray(s, dtype=float)
    sigma = 3 * np.exp(np.sin((1 - np.abs(s / 256 - 1)) * 2 * np.pi) / 2)
    gamma = 600 * np.exp(-2 * np.sin(s * 2 * np.pi / 256)) * (s / 256)
    smooth = 3 * norm_cdf(-np.sin(s * 2 * np.pi / 256))
    return sigma, gamma, smooth


def gen_sim3_params(s):
    s = np.asarray(s, dtype=float)
    return np.full(s.shape, 3.0), np.full(s.shape, 600.0), np.ones(s.shape)


def truth_covariance(study: str, s=GRID) -> np.ndarray:
    """Dense parent covariance of the Gaussian-process truths."""
    sigma, gamma, smooth = (gen_sim2_params if study == "sim2" else gen_sim3_params)(s)
    s = np.asarray(s, dtype=float).reshape(-1, 1)
    lp = LocalParams(s, sigma, smooth, gamma.reshape(-1, 1, 1), np.log(gamma))
    C = cross_cov(lp, lp)
    np.fill_diagonal(C, sigma**2)
    return C


def gen_gp_truth(study: str, seed, s=GRID, cov=None) -> np.ndarray:
    """Trend 1 plus an exact draw of the zero-mean Gaussian process (dense Cholesky)."""
    if study not in ("sim2", "sim3"):
        raise ValueError("Gaussian-process truths exist for sim2 and sim3 only")
    C = truth_covariance(study, s) if cov is None else cov
    scale = float(np.mean(np.diag(C)))
    for eps in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            L = cholesky(C + eps * scale * np.eye(C.shape[0]), lower=True)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise np.linalg.LinAlgError("truth covariance is not positive definite")
    rng = np.random.default_rng(seed)
    return 1.0 + L @ rng.standard_normal(C.shape[0])


def simulate_data(Y, noise_var, seed):
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    rng = np.random.default_rng(seed)
    return np.asarray(Y, dtype=float) + math.sqrt(noise_var) * rng.standard_normal(np.shape(Y))


@dataclass
class StudyDesign:
    """Index groups (0-based into the 512-point grid) for one replicate."""

    obs: np.ndarray
    mar: np.ndarray
    mbd: np.ndarray

    @classmethod
    def draw(cls, rng, n=512, starts=MBD_STARTS, length=MBD_LENGTH) -> "StudyDesign":
        mbd_mask = np.zeros(n, dtype=bool)
        for b in starts:
            mbd_mask[b - 1:b - 1 + length] = True
        rest = np.flatnonzero(~mbd_mask)
        mar = np.sort(rng.choice(rest, rest.size // 3, replace=False))
        obs = np.setdiff1d(rest, mar)
        return cls(obs, mar, np.flatnonzero(mbd_mask))

    def group(self, name: str) -> np.ndarray:
        if name == "ALL":
            return np.arange(self.obs.size + self.mar.size + self.mbd.size)
        return {"OBS": self.obs, "MAR": self.mar, "MBD": self.mbd}[name]


def mspe(pred_mean, truth, group=None) -> float:
    pred_mean = np.asarray(pred_mean, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred_mean.shape != truth.shape:
        raise ValueError("prediction and truth differ in length")
    if group is not None:
        pred_mean, truth = pred_mean[group], truth[group]
    if pred_mean.size == 0:
        raise ValueError("empty location group")
    return float(np.mean((pred_mean - truth) ** 2))


def interval_scores(lower, upper, truth, alpha=0.05) -> np.ndarray:
    """Pointwise interval score: width plus 2/alpha times the miss distance."""
    lower, upper, truth = (np.asarray(a, dtype=float) for a in (lower, upper, truth))
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return (upper - lower) + (2 / alpha) * (lower - truth) * (truth < lower) + (2 / alpha) * (truth - upper) * (truth > upper)


def interval_score(lower, upper, truth, alpha=0.05, group=None) -> float:
    s = interval_scores(lower, upper, truth, alpha)
    if group is not None:
        s = s[group]
    if s.size == 0:
        raise ValueError("empty location group")
    return float(np.mean(s))


def asd(pred_mean, observed, group=None) -> float:
    """Average squared distance of predictive means to held-out observations."""
    return mspe(pred_mean, observed, group)


@dataclass
class StudySettings:
    n_iter: int = 10_000
    n_burn: int = 5_000
    thin: int = 10
    keep_every: int = 1
    level: float = 0.95


def study_setup(study: str, Y):
    """Noise variance and prior means for sigma and the scale."""
    if study == "sim1":
        return SIM1_NOISE, math.log(math.sqrt(np.var(gen_sim1_truth(GRID)))), math.log(3000.0)
    return GP_NOISE, math.log(3.0), math.log(600.0)


def variant_params(nonstationary: bool, mu_sigma: float, mu_gamma: float):
    if nonstationary:
        return default_params(1, mu_sigma, mu_gamma, basis_centers=SV_CENTERS, basis_scale=SV_SCALE)
    return default_params(1, mu_sigma, mu_gamma)


def replicate_data(study: str, seed: int, rep: int, cov=None):
    """Truth, noisy data on the whole grid, and the design for one replicate."""
    ss = np.random.SeedSequence([seed, rep])
    s_truth, s_noise, s_design = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    Y = gen_sim1_truth(GRID) if study == "sim1" else gen_gp_truth(study, s_truth, cov=cov)
    noise_var = study_setup(study, Y)[0]
    Z = simulate_data(Y, noise_var, s_noise)
    design = StudyDesign.draw(np.random.default_rng(s_design))
    return Y, Z, design


def fit_and_score(study: str, variant: str, Y, Z, design: StudyDesign, settings: StudySettings, chain_seed: int) -> dict:
    knot_kind, nonstationary = VARIANTS[variant]
    noise_var, mu_sigma, mu_gamma = study_setup(study, Y)
    params = variant_params(nonstationary, mu_sigma, mu_gamma)
    data = Dataset(GRID[design.obs], Z[design.obs], noise_var=noise_var)
    cfg = ChainConfig(n_iter=settings.n_iter, n_burn=settings.n_burn, thin=settings.thin, seed=chain_seed,
                      taper_length=TAPER_LENGTH, proposal_domain=([KNOT_DOMAIN[0]], [KNOT_DOMAIN[1]]),
                      knot_mode="random" if knot_kind == "random" else "fixed")
    knots = None if knot_kind == "random" else FIXED_KNOTS[knot_kind]
    t0 = time.perf_counter()
    chain = run_chain(data, params, cfg, knots=knots)
    elapsed = time.perf_counter() - t0
    pset = PredictionSet.build(GRID, data.locs)
    field_ = predict_field(chain, data, pset, params, TAPER_LENGTH, keep_every=settings.keep_every,
                           level=settings.level, seed=chain_seed + 1)
    alpha = 1.0 - settings.level
    row = {"variant": variant, "time_sec": elapsed, "mean_r": float(np.mean(chain.r)),
           "theta_accept": chain.stats["theta_accept_rate"]}
    for g in GROUPS:
        idx = design.group(g) if g != "ALL" else None
        row[f"MSPE_{g}"] = mspe(field_.mean, Y, idx)
        row[f"IS_{g}"] = interval_score(field_.lower, field_.upper, Y, alpha, idx)
    return row


def _replicate_job(args):
    study, variants, seed, rep, settings = args
    cov = truth_covariance(study) if study != "sim1" else None
    Y, Z, design = replicate_data(study, seed, rep, cov)
    rows = []
    for v_idx, variant in enumerate(variants):
        chain_seed = int(np.random.SeedSequence([seed, rep, 1000 + v_idx]).generate_state(1)[0])
        row = fit_and_score(study, variant, Y, Z, design, settings, chain_seed)
        row["replicate"] = rep
        rows.append(row)
    return rows


@dataclass
class ScoreTable:
    study: str
    variants: list
    rows: list = field(default_factory=list)  # one dict per (variant, replicate)

    METRICS = ("time_sec",) + tuple(f"MSPE_{g}" for g in GROUPS) + tuple(f"IS_{g}" for g in GROUPS) + ("mean_r",)

    def mean(self, variant: str, metric: str) -> float:
        vals = [r[metric] for r in self.rows if r["variant"] == variant]
        return float(np.mean(vals))

    def summary(self) -> dict:
        return {v: {m: self.mean(v, m) for m in self.METRICS} for v in self.variants}

    def write_raw_csv(self, path):
        keys = ["replicate", "variant", *self.METRICS, "theta_accept"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in keys})

    def write_csv(self, path):
        s = self.summary()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", *self.variants])
            for m in self.METRICS:
                w.writerow([m, *(repr(s[v][m]) for v in self.variants)])

    def to_text(self) -> str:
        """Aligned table; scores scaled by 100 for sim1 as in the published layout."""
        s = self.summary()
        scale = 100.0 if self.study == "sim1" else 1.0
        suffix = " x 100" if scale != 1.0 else ""
        width = max(12, *(len(v) + 2 for v in self.variants))
        lines = ["".ljust(22) + "".join(v.rjust(width) for v in self.variants)]
        labels = [("Time (sec)", "time_sec", 1.0)]
        labels += [(f"MSPE ({g}){suffix}", f"MSPE_{g}", scale) for g in GROUPS]
        labels += [(f"IS ({g}){suffix}", f"IS_{g}", scale) for g in GROUPS]
        labels += [("Posterior mean of r", "mean_r", 1.0)]
        for label, key, sc in labels:
            lines.append(label.ljust(22) + "".join(f"{s[v][key] * sc:.2f}".rjust(width) for v in self.variants))
        return "\n".join(lines) + "\n"


def run_study(study: str, variants=("random-NPC", "random-SPC"), replicates: int = 10, seed: int = 0,
              settings: StudySettings | None = None, n_jobs: int = 1) -> ScoreTable:
    """Replicated simulation study; rows are ordered by replicate, then variant."""
    if study not in ("sim1", "sim2", "sim3"):
        raise ValueError(f"unknown study {study!r}")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    settings = settings or StudySettings()
    jobs = [(study, list(variants), seed, rep, settings) for rep in range(replicates)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_replicate_job, jobs))
    else:
        results = [_replicate_job(j) for j in jobs]
    table = ScoreTable(study, list(variants))
    for rows in results:
        table.rows.extend(rows)
    return table
