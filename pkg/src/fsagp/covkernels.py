"""Covariance functions for the nonstationary Matern parent process.

Scalar entry points (``bessel_k``, ``matern_corr``, ``nonstat_matern``,
``parent_cov``, ...) mirror the mathematical definitions one location pair
at a time. The matrix builders at the bottom (``local_params``,
``pair_cov``, ``cross_cov``) are the vectorized numba paths used by the
linear algebra and the sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit

SMOOTH_FLOOR = 1e-3
BESSEL_UNDERFLOW = 700.0

# Taylor coefficients of 1/Gamma(z) about z = 0 (c_1 .. c_26).
_RGAMMA_COEFFS = np.array([
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
])

_EPS = 1e-16


@njit(cache=True)
def _temme_gammas(mu):
    # gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu), gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2
    gam1 = 0.0
    gam2 = 0.0
    for k in range(_RGAMMA_COEFFS.shape[0] - 1, -1, -1):
        c = _RGAMMA_COEFFS[k]
        # entry k multiplies mu**k in the series of 1/Gamma(1+mu)
        if k % 2 == 0:
            gam2 = gam2 * mu * mu + c
        else:
            gam1 = gam1 * mu * mu - c
    return gam1, gam2


@njit(cache=True)
def _bessel_k(nu, x):
    if x > BESSEL_UNDERFLOW:
        return 0.0
    nl = int(nu + 0.5)
    mu = nu - nl
    mu2 = mu * mu
    xi = 1.0 / x
    xi2 = 2.0 * xi
    if x < 2.0:
        x2 = 0.5 * x
        pimu = math.pi * mu
        fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        gam1, gam2 = _temme_gammas(mu)
        gampl = gam2 - mu * gam1
        gammi = gam2 + mu * gam1
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        d = x2 * x2
        total1 = p
        i = 1
        while i < 10000:
            ff = (i * ff + p + q) / (i * i - mu2)
            c *= d / i
            p /= i - mu
            q /= i + mu
            term = c * ff
            total += term
            total1 += c * (p - i * ff)
            if abs(term) < abs(total) * _EPS:
                break
            i += 1
        kmu = total
        k1 = total1 * xi2
    else:
        # Steed's continued fraction with Temme's normalization
        b = 2.0 * (1.0 + x)
        d = 1.0 / b
        h = d
        delh = d
        q1 = 0.0
        q2 = 1.0
        a1 = 0.25 - mu2
        q = a1
        c = a1
        a = -a1
        s = 1.0 + q * delh
        i = 2
        while i < 10000:
            a -= 2.0 * (i - 1)
            c = -a * c / i
            qnew = (q1 - b * q2) / a
            q1 = q2
            q2 = qnew
            q += c * qnew
            b += 2.0
            d = 1.0 / (b + a * d)
            delh = (b * d - 1.0) * delh
            h += delh
            dels = q * delh
            s += dels
            if abs(dels / s) < _EPS:
                break
            i += 1
        h = a1 * h
        kmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
        k1 = kmu * (mu + x + 0.5 - h) * xi
    for i in range(1, nl + 1):
        tmp = (mu + i) * xi2 * k1 + kmu
        kmu = k1
        k1 = tmp
    return kmu


def bessel_k(order: float, x: float) -> float:
    """Modified Bessel function of the second kind, K_order(x).

    Temme's series is used for ``x < 2`` and Steed's continued fraction
    above, followed by upward recurrence in the order. Arguments beyond
    700 return 0.
    """
    order = float(order)
    x = float(x)
    if not (np.isfinite(order) and np.isfinite(x)) or order <= 0 or x <= 0:
        raise ValueError(f"bessel_k needs positive finite order and argument, got ({order}, {x})")
    return _bessel_k(order, x)


@njit(cache=True)
def _matern(h, nu):
    if h <= 0.0:
        return 1.0
    z = 2.0 * h * math.sqrt(nu)
    if z > BESSEL_UNDERFLOW:
        return 0.0
    if nu * math.log(z) < -600.0:
        # 1 - M is below z^(2 min(nu, 1)), far under double precision
        return 1.0
    logpre = nu * math.log(z) + (1.0 - nu) * math.log(2.0) - math.lgamma(nu)
    return min(math.exp(logpre) * _bessel_k(nu, z), 1.0)


def matern_corr(h: float, smooth: float) -> float:
    """Matern correlation ``(2h sqrt(v))^v K_v(2h sqrt(v)) 2^(1-v) / Gamma(v)``, 1 at h = 0."""
    if h < 0:
        raise ValueError("lag must be nonnegative")
    if smooth <= 0:
        raise ValueError("smoothness must be positive")
    return _matern(float(h), float(smooth))


@njit(cache=True)
def _norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_cdf(x):
    """Standard normal CDF through the complementary error function."""
    from scipy.special import erfc

    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


@njit(cache=True)
def _kanter(x):
    if x <= 0.0:
        return 1.0
    if x >= 1.0:
        return 0.0
    tpx = 2.0 * math.pi * x
    # 1 - cos(2 pi x) written as 2 sin^2(pi x) to avoid cancellation near 0
    val = (1.0 - x) * math.sin(tpx) / tpx + math.sin(math.pi * x) ** 2 / (math.pi * math.pi * x)
    return min(val, 1.0)


def kanter_taper(x):
    """Kanter's compactly supported correlation on lag/L; works on scalars and arrays."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise ValueError("taper argument must be nonnegative")
    out = np.zeros_like(arr)
    inside = (arr > 0) & (arr < 1)
    xi = arr[inside]
    tpx = 2.0 * np.pi * xi
    val = (1.0 - xi) * np.sin(tpx) / tpx + np.sin(np.pi * xi) ** 2 / (np.pi**2 * xi)
    out[inside] = np.minimum(val, 1.0)
    out[arr == 0] = 1.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TaperSpec:
    length: float
    family: str = "kanter"

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("taper length must be positive")
        if self.family != "kanter":
            raise ValueError(f"unknown taper family {self.family!r}")

    def __call__(self, lag):
        return kanter_taper(np.asarray(lag, dtype=float) / self.length)


# ---------------------------------------------------------------------------
# Spatially varying parameter fields


def as_locs(locs) -> np.ndarray:
    """Location set as an (n, d) array; a flat array means n points in 1-D."""
    locs = np.asarray(locs, dtype=float)
    if locs.ndim == 0:
        return locs.reshape(1, 1)
    if locs.ndim == 1:
        return locs.reshape(-1, 1)
    return locs


def _as_point(s) -> np.ndarray:
    return np.asarray(s, dtype=float).reshape(1, -1)


def power_exp_basis(locs, centers, scale):
    """Fixed basis values ``exp(-(|s - c_j| / scale)^2)``, shape (n, r_theta)."""
    locs = as_locs(locs)
    centers = np.asarray(centers, dtype=float).reshape(-1, locs.shape[1]) if len(centers) else np.zeros((0, locs.shape[1]))
    d2 = ((locs[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / scale**2)


@dataclass(frozen=True)
class SvParamField:
    """One parameter ``g(offset + b(s)'coeffs)`` with a fixed power-exponential basis.

    ``transform`` is ``"exp"`` or ``"normcdf"``; the latter maps to
    ``(0, cap)`` through ``cap * Phi(.)``. ``coeff_prior_var == 0`` pins the
    field to a constant.
    """

    offset: float
    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    basis_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    basis_scale: float = 1.0
    transform: str = "exp"
    cap: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 1.0
    coeff_prior_var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).ravel())
        centers = np.asarray(self.basis_centers, dtype=float)
        if centers.ndim == 1:
            centers = centers.reshape(-1, 1)
        object.__setattr__(self, "basis_centers", centers)
        if self.transform not in ("exp", "normcdf"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.coeffs.size not in (0, centers.shape[0]):
            raise ValueError("coefficient vector does not match basis size")
        if self.coeffs.size == 0 and centers.shape[0]:
            object.__setattr__(self, "coeffs", np.zeros(centers.shape[0]))

    @property
    def varying(self) -> bool:
        return self.coeff_prior_var > 0 and self.basis_centers.shape[0] > 0

    def link(self, u):
        if self.transform == "exp":
            return np.exp(u)
        return self.cap * norm_cdf(u)

    def linear_predictor(self, locs, basis=None):
        locs = as_locs(locs)
        u = np.full(locs.shape[0], float(self.offset))
        if self.coeffs.size and np.any(self.coeffs != 0):
            if basis is None:
                basis = power_exp_basis(locs, self.basis_centers, self.basis_scale)
            u = u + basis @ self.coeffs
        return u

    def evaluate(self, locs, basis=None):
        return self.link(self.linear_predictor(locs, basis))

    def log_prior(self) -> float:
        lp = -0.5 * (self.offset - self.prior_mean) ** 2 / self.prior_var - 0.5 * math.log(2 * math.pi * self.prior_var)
        if self.varying:
            tau2 = self.coeff_prior_var
            lp += float(-0.5 * (self.coeffs @ self.coeffs) / tau2 - 0.5 * self.coeffs.size * math.log(2 * math.pi * tau2))
        return lp


def sv_param_eval(field_: SvParamField, s) -> float:
    """Value of a spatially varying parameter at a single location."""
    return float(field_.evaluate(_as_point(s))[0])


@dataclass(frozen=True)
class ParentCovParams:
    """The full parameter bundle for the parent covariance in d dimensions."""

    sigma: SvParamField
    smooth: SvParamField
    scales: tuple
    angles: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(self.scales))
        object.__setattr__(self, "angles", tuple(self.angles))
        if len(self.scales) not in (1, 2, 3):
            raise ValueError("need 1, 2 or 3 scale fields")
        if len(self.angles) != len(self.scales) - 1:
            raise ValueError("need d - 1 rotation angle fields")

    @property
    def dim(self) -> int:
        return len(self.scales)

    def fields(self) -> list[SvParamField]:
        return [self.sigma, self.smooth, *self.scales, *self.angles]

    def with_fields(self, fields: Sequence[SvParamField]) -> "ParentCovParams":
        d = self.dim
        return ParentCovParams(fields[0], fields[1], tuple(fields[2:2 + d]), tuple(fields[2 + d:]))

    # free vector = per field: offset, then coefficients if the field varies
    def free_vector(self) -> np.ndarray:
        parts = []
        for f in self.fields():
            parts.append([f.offset])
            if f.varying:
                parts.append(f.coeffs)
        return np.concatenate(parts)

    def with_free_vector(self, v) -> "ParentCovParams":
        v = np.asarray(v, dtype=float)
        out, pos = [], 0
        for f in self.fields():
            off = v[pos]
            pos += 1
            if f.varying:
                k = f.coeffs.size
                out.append(replace(f, offset=float(off), coeffs=v[pos:pos + k].copy()))
                pos += k
            else:
                out.append(replace(f, offset=float(off)))
        if pos != v.size:
            raise ValueError("free vector has the wrong length")
        return self.with_fields(out)

    def free_labels(self) -> list[str]:
        names = ["sigma", "smooth"] + [f"scale{j + 1}" for j in range(self.dim)] + [f"angle{j + 1}" for j in range(self.dim - 1)]
        labels = []
        for name, f in zip(names, self.fields()):
            labels.append(f"{name}_offset")
            if f.varying:
                labels.extend(f"{name}_eta{j + 1}" for j in range(f.coeffs.size))
        return labels

    def prior_sd_vector(self) -> np.ndarray:
        parts = []
        for f in self.fields():
            parts.append([math.sqrt(f.prior_var)])
            if f.varying:
                parts.append(np.full(f.coeffs.size, math.sqrt(f.coeff_prior_var)))
        return np.concatenate(parts)

    def log_prior(self) -> float:
        return sum(f.log_prior() for f in self.fields())


def default_params(
    dim: int,
    mu_sigma: float,
    mu_gamma: float,
    basis_centers=None,
    basis_scale: float = 1.0,
    coeff_prior_var: float = 0.25**2,
    smooth_cap: float = 2.0,
) -> ParentCovParams:
    """Parameters at their prior means with the standard transforms and prior variances.

    Passing ``basis_centers=None`` or ``coeff_prior_var=0`` gives the
    stationary parent covariance.
    """
    centers = np.zeros((0, dim)) if basis_centers is None else np.asarray(basis_centers, dtype=float).reshape(-1, dim)
    tau2 = coeff_prior_var if centers.shape[0] else 0.0
    common = dict(basis_centers=centers, basis_scale=basis_scale, coeff_prior_var=tau2)
    sigma = SvParamField(mu_sigma, transform="exp", prior_mean=mu_sigma, prior_var=0.25, **common)
    smooth = SvParamField(0.0, transform="normcdf", cap=smooth_cap, prior_mean=0.0, prior_var=1.0, **common)
    scales = tuple(SvParamField(mu_gamma, transform="exp", prior_mean=mu_gamma, prior_var=0.25, **common) for _ in range(dim))
    angles = tuple(SvParamField(0.0, transform="normcdf", cap=math.pi / 2, prior_mean=0.0, prior_var=1.0, **common) for _ in range(dim - 1))
    return ParentCovParams(sigma, smooth, scales, angles)


# ---------------------------------------------------------------------------
# Anisotropy and the nonstationary Matern


def _rotation(angle, i, j, d):
    R = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    R[i, i] = c
    R[j, j] = c
    R[i, j] = -s
    R[j, i] = s
    return R


def anisotropy_from_values(gammas, kappas) -> np.ndarray:
    """``R diag(gammas) R'`` with R rotating by kappa_1 in the (1,2)-plane, then kappa_2 in the (1,3)-plane."""
    gammas = np.asarray(gammas, dtype=float)
    d = gammas.size
    R = np.eye(d)
    if d >= 2:
        R = _rotation(kappas[0], 0, 1, d)
    if d == 3:
        R = _rotation(kappas[1], 0, 2, d) @ R
    return R @ np.diag(gammas) @ R.T


def anisotropy_matrix(s, params: ParentCovParams) -> np.ndarray:
    s = _as_point(s)
    gammas = [f.evaluate(s)[0] for f in params.scales]
    kappas = [f.evaluate(s)[0] for f in params.angles]
    return anisotropy_from_values(gammas, kappas)


def sv_distance(s1, s2, A1, A2) -> float:
    """Mahalanobis-like distance ``sqrt(2 h' (A1 + A2)^-1 h)``."""
    h = np.atleast_1d(np.asarray(s1, dtype=float) - np.asarray(s2, dtype=float))
    S = np.atleast_2d(A1) + np.atleast_2d(A2)
    c = np.linalg.cholesky(S)  # raises LinAlgError on a non-SPD sum
    y = np.linalg.solve(c, h)
    return math.sqrt(2.0 * float(y @ y))


def _logdet_spd(A) -> float:
    sign, ld = np.linalg.slogdet(np.atleast_2d(A))
    if sign <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return ld


def nonstat_matern(s1, s2, params: ParentCovParams) -> float:
    A1 = anisotropy_matrix(s1, params)
    A2 = anisotropy_matrix(s2, params)
    nu = max(0.5 * (sv_param_eval(params.smooth, s1) + sv_param_eval(params.smooth, s2)), SMOOTH_FLOOR)
    logc = 0.25 * _logdet_spd(A1) + 0.25 * _logdet_spd(A2) - 0.5 * _logdet_spd(0.5 * (A1 + A2))
    return math.exp(logc) * _matern(sv_distance(s1, s2, A1, A2), nu)


def parent_cov(s1, s2, params: ParentCovParams) -> float:
    return sv_param_eval(params.sigma, s1) * sv_param_eval(params.sigma, s2) * nonstat_matern(s1, s2, params)


def implied_cov_y(s1, s2, params: ParentCovParams, knots, taper: TaperSpec) -> float:
    """Covariance of the full-scale process: predictive part plus the tapered remainder."""
    from .fsa import predictive_cov

    s1 = _as_point(s1)
    s2 = _as_point(s2)
    c_nu = float(predictive_cov(s1, s2, params, knots)[0, 0])
    lag = float(np.linalg.norm(s1[0] - s2[0]))
    return c_nu + float(taper(lag)) * (parent_cov(s1[0], s2[0], params) - c_nu)


# ---------------------------------------------------------------------------
# Vectorized evaluation


@dataclass
class LocalParams:
    """Parameter values evaluated at a set of locations."""

    locs: np.ndarray  # (n, d)
    sigma: np.ndarray  # (n,)
    smooth: np.ndarray  # (n,)
    aniso: np.ndarray  # (n, d, d)
    logdet: np.ndarray  # (n,)

    def subset(self, idx) -> "LocalParams":
        return LocalParams(self.locs[idx], self.sigma[idx], self.smooth[idx], self.aniso[idx], self.logdet[idx])


def local_params(params: ParentCovParams, locs) -> LocalParams:
    locs = as_locs(locs)
    n, d = locs.shape
    if d != params.dim:
        raise ValueError(f"locations are {d}-D but parameters are {params.dim}-D")
    cache = {}

    def ev(f):
        # fields normally share one basis; evaluate it once per location set
        if not (f.coeffs.size and np.any(f.coeffs != 0)):
            return f.evaluate(locs)
        key = (f.basis_centers.tobytes(), f.basis_scale)
        if key not in cache:
            cache[key] = power_exp_basis(locs, f.basis_centers, f.basis_scale)
        return f.evaluate(locs, cache[key])

    sigma = ev(params.sigma)
    smooth = ev(params.smooth)
    gam = np.column_stack([ev(f) for f in params.scales])
    if d == 1:
        aniso = gam.reshape(n, 1, 1)
        logdet = np.log(gam[:, 0])
    else:
        kap = np.column_stack([ev(f) for f in params.angles])
        c1, s1 = np.cos(kap[:, 0]), np.sin(kap[:, 0])
        R = np.zeros((n, d, d))
        R[:, 0, 0] = c1
        R[:, 0, 1] = -s1
        R[:, 1, 0] = s1
        R[:, 1, 1] = c1
        if d == 3:
            R[:, 2, 2] = 1.0
            c2, s2 = np.cos(kap[:, 1]), np.sin(kap[:, 1])
            R2 = np.zeros((n, 3, 3))
            R2[:, 0, 0] = c2
            R2[:, 0, 2] = -s2
            R2[:, 2, 0] = s2
            R2[:, 2, 2] = c2
            R2[:, 1, 1] = 1.0
            R = R2 @ R
        aniso = R @ (gam[:, :, None] * np.transpose(R, (0, 2, 1)))
        aniso = 0.5 * (aniso + np.transpose(aniso, (0, 2, 1)))
        logdet = np.log(gam).sum(axis=1)
    return LocalParams(locs, sigma, smooth, aniso, logdet)


@njit(cache=True)
def _pair_corr_one(xa, xb, Aa, Ab, lda, ldb, nua, nub):
    d = xa.shape[0]
    h0 = xa[0] - xb[0]
    if d == 1:
        s = 0.5 * (Aa[0, 0] + Ab[0, 0])
        q2 = h0 * h0 / s
        lds = math.log(s)
    elif d == 2:
        h1 = xa[1] - xb[1]
        a = 0.5 * (Aa[0, 0] + Ab[0, 0])
        b = 0.5 * (Aa[0, 1] + Ab[0, 1])
        c = 0.5 * (Aa[1, 1] + Ab[1, 1])
        det = a * c - b * b
        q2 = (c * h0 * h0 - 2.0 * b * h0 * h1 + a * h1 * h1) / det
        lds = math.log(det)
    else:
        # small Cholesky of the averaged 3x3 matrix
        S = 0.5 * (Aa + Ab)
        l00 = math.sqrt(S[0, 0])
        l10 = S[1, 0] / l00
        l20 = S[2, 0] / l00
        l11 = math.sqrt(S[1, 1] - l10 * l10)
        l21 = (S[2, 1] - l20 * l10) / l11
        l22 = math.sqrt(S[2, 2] - l20 * l20 - l21 * l21)
        h1 = xa[1] - xb[1]
        h2 = xa[2] - xb[2]
        y0 = h0 / l00
        y1 = (h1 - l10 * y0) / l11
        y2 = (h2 - l20 * y0 - l21 * y1) / l22
        q2 = y0 * y0 + y1 * y1 + y2 * y2
        lds = 2.0 * (math.log(l00) + math.log(l11) + math.log(l22))
    if q2 < 0.0:
        q2 = 0.0
    nu = 0.5 * (nua + nub)
    if nu < SMOOTH_FLOOR:
        nu = SMOOTH_FLOOR
    c = math.exp(0.25 * lda + 0.25 * ldb - 0.5 * lds)
    return c * _matern(math.sqrt(q2), nu)


@njit(cache=True)
def _pair_cov_kernel(X, A, LD, NU, SG, I, J, out):
    for p in range(I.shape[0]):
        i = I[p]
        j = J[p]
        if i == j:
            out[p] = SG[i] * SG[i]
        else:
            out[p] = SG[i] * SG[j] * _pair_corr_one(X[i], X[j], A[i], A[j], LD[i], LD[j], NU[i], NU[j])


@njit(cache=True)
def _cross_corr_kernel(Xa, Aa, LDa, NUa, Xb, Ab, LDb, NUb, out):
    for i in range(Xa.shape[0]):
        for j in range(Xb.shape[0]):
            out[i, j] = _pair_corr_one(Xa[i], Xb[j], Aa[i], Ab[j], LDa[i], LDb[j], NUa[i], NUb[j])


def pair_cov(lp: LocalParams, I, J) -> np.ndarray:
    """Parent covariance for index pairs (I[p], J[p]) of one location set."""
    out = np.empty(len(I))
    _pair_cov_kernel(lp.locs, lp.aniso, lp.logdet, lp.smooth, lp.sigma,
                     np.asarray(I, dtype=np.int64), np.asarray(J, dtype=np.int64), out)
    return out


def cross_corr(a: LocalParams, b: LocalParams) -> np.ndarray:
    """Dense nonstationary Matern correlation matrix between two location sets."""
    out = np.empty((a.locs.shape[0], b.locs.shape[0]))
    if out.size:
        _cross_corr_kernel(a.locs, a.aniso, a.logdet, a.smooth, b.locs, b.aniso, b.logdet, b.smooth, out)
    return out


def cross_cov(a: LocalParams, b: LocalParams) -> np.ndarray:
    return a.sigma[:, None] * cross_corr(a, b) * b.sigma[None, :]


def parent_cov_matrix(params: ParentCovParams, locs) -> np.ndarray:
    lp = local_params(params, locs)
    C = cross_cov(lp, lp)
    np.fill_diagonal(C, lp.sigma**2)
    return C
