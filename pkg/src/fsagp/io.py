"""File formats: data CSV ingestion, run configuration, transforms."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .covkernels import ParentCovParams, SvParamField
from .data import Dataset, trend_matrix


def ingest_csv(path, dims: int, has_header: bool = True, noise_var=None, trend: str = "intercept") -> Dataset:
    """Read ``d`` coordinate columns, then z, then optional covariate columns."""
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and has_header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < dims + 1:
                raise ValueError(f"{path}:{lineno}: expected at least {dims + 1} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in row {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            if rows and len(vals) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: inconsistent number of columns")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no observations")
    arr = np.asarray(rows)
    locs = arr[:, :dims]
    z = arr[:, dims]
    extra = arr[:, dims + 1:]
    data = Dataset(locs, z, trend_matrix(locs, trend, extra), noise_var)
    dup = data.duplicate_locations()
    if dup:
        data.notes.append(f"{dup} rows share coordinates with an earlier row")
    return data


def read_locations(path, dims: int, has_header: bool = True):
    """Prediction locations: ``d`` coordinates, then optional covariate columns."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2)
    if arr.shape[1] < dims:
        raise ValueError(f"{path}: expected {dims} coordinate columns")
    return arr[:, :dims], arr[:, dims:]


def shift_log_transform(tc, shift: float = 160.0):
    tc = np.asarray(tc, dtype=float)
    if np.any(tc + shift <= 0):
        raise ValueError("shifted value must be positive")
    out = np.log(tc + shift)
    return float(out) if out.ndim == 0 else out


def inverse_shift_log(y, shift: float = 160.0):
    out = np.exp(np.asarray(y, dtype=float)) - shift
    return float(out) if out.ndim == 0 else out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_points(text: str, dims: int) -> np.ndarray:
    pts = [list(map(float, p.split())) for p in text.split(";") if p.strip()]
    arr = np.asarray(pts, dtype=float)
    if arr.size == 0:
        return np.zeros((0, dims))
    if arr.ndim != 2 or arr.shape[1] != dims:
        raise ValueError(f"points must have {dims} coordinates each: {text!r}")
    return arr


@dataclass
class RunConfig:
    """Flat ``key = value`` configuration; unknown keys are rejected."""

    dims: int = 1
    has_header: bool = True
    noise_var: float | None = None
    trend: str = "intercept"
    transform: str = "none"  # or "shiftlog"
    shift: float = 160.0
    taper_length: float = 6.5
    knot_mode: str = "random"  # random | fixed | grid
    fixed_knots: str = ""
    knot_grid: int = 8
    knot_domain: str = ""  # "lo1 lo2; hi1 hi2"; empty = expanded bounding box
    domain_expand: float = 0.02
    sv_centers: str = ""
    sv_scale: float = 1.0
    mu_sigma: float | None = None
    mu_gamma: float | None = None
    sigma_prior_var: float = 0.25
    scale_prior_var: float = 0.25
    smooth_prior_mean: float = 0.0
    smooth_prior_var: float = 1.0
    angle_prior_mean: float = 0.0
    angle_prior_var: float = 1.0
    coeff_prior_var: float = 0.0625
    smooth_cap: float = 2.0
    n_iter: int = 10_000
    n_burn: int = 5_000
    thin: int = 10
    seed: int = 0
    credible_level: float = 0.95
    keep_every: int = 10
    check_every: int = 100
    source_text: str = field(default="", repr=False)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls) if f.name != "source_text"}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            if key in kwargs:
                raise ValueError(f"config line {lineno}: duplicate key {key!r}")
            kwargs[key] = _convert(key, val, types[key])
        cfg = cls(**kwargs, source_text=text)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def validate(self):
        if self.dims not in (1, 2, 3):
            raise ValueError("dims must be 1, 2 or 3")
        if self.trend not in ("intercept", "linear"):
            raise ValueError("trend must be 'intercept' or 'linear'")
        if self.transform not in ("none", "shiftlog"):
            raise ValueError("transform must be 'none' or 'shiftlog'")
        if self.knot_mode not in ("random", "fixed", "grid"):
            raise ValueError("knot_mode must be random, fixed or grid")
        if not self.taper_length > 0:
            raise ValueError("taper_length must be positive")
        if not 0 < self.credible_level < 1:
            raise ValueError("credible_level must lie in (0, 1)")
        if self.noise_var is not None and not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "source_text"}

    def digest(self) -> str:
        canon = "\n".join(f"{k}={v!r}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(canon.encode()).hexdigest()

    def require_noise_var(self) -> float:
        if self.noise_var is None:
            raise ValueError("noise_var is required: the measurement-error variance must be supplied")
        return self.noise_var

    def sv_center_array(self) -> np.ndarray:
        return _parse_points(self.sv_centers, self.dims)

    def domain(self, data: Dataset):
        if self.knot_domain.strip():
            box = _parse_points(self.knot_domain, self.dims)
            if box.shape[0] != 2:
                raise ValueError("knot_domain needs exactly two points: lower; upper")
            return box[0], box[1]
        return data.bounding_box(self.domain_expand)

    def initial_knots(self, data: Dataset) -> np.ndarray | None:
        if self.knot_mode == "random":
            return None
        if self.knot_mode == "fixed":
            return _parse_points(self.fixed_knots, self.dims)
        lo, hi = self.domain(data)
        axes = [np.linspace(lo[j], hi[j], self.knot_grid) for j in range(self.dims)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def params(self, data: Dataset) -> ParentCovParams:
        """Starting parameters at the prior means."""
        mu_sigma = self.mu_sigma
        if mu_sigma is None:
            resid = data.z - data.X @ np.linalg.lstsq(data.X, data.z, rcond=None)[0]
            signal = max(np.var(resid) - (self.noise_var or 0.0), 1e-12)
            mu_sigma = 0.5 * math.log(signal)
        mu_gamma = self.mu_gamma
        if mu_gamma is None:
            lo, hi = data.bounding_box()
            mu_gamma = 2.0 * math.log(max(float(np.max(hi - lo)) / 10.0, 1e-12))
        centers = self.sv_center_array()
        tau2 = self.coeff_prior_var if centers.shape[0] else 0.0
        common = dict(basis_centers=centers, basis_scale=self.sv_scale, coeff_prior_var=tau2)
        sigma = SvParamField(mu_sigma, transform="exp", prior_mean=mu_sigma, prior_var=self.sigma_prior_var, **common)
        smooth = SvParamField(self.smooth_prior_mean, transform="normcdf", cap=self.smooth_cap,
                              prior_mean=self.smooth_prior_mean, prior_var=self.smooth_prior_var, **common)
        scales = [SvParamField(mu_gamma, transform="exp", prior_mean=mu_gamma, prior_var=self.scale_prior_var, **common)
                  for _ in range(self.dims)]
        angles = [SvParamField(self.angle_prior_mean, transform="normcdf", cap=math.pi / 2,
                               prior_mean=self.angle_prior_mean, prior_var=self.angle_prior_var, **common)
                  for _ in range(self.dims - 1)]
        return ParentCovParams(sigma, smooth, scales, angles)


def _convert(key, val, typ):
    typ = str(typ)
    try:
        if "bool" in typ:
            low = val.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if "int" in typ:
            return int(val)
        if "float" in typ:
            if val.lower() in ("none", ""):
                return None
            return float(val)
        return val
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {val!r}") from None
