"""Observed data container shared by the sampler, the predictor and the CLI."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covkernels import as_locs


def trend_matrix(locs, trend: str = "intercept", extra=None) -> np.ndarray:
    """Covariates ``x(s)``: an intercept, optionally the coordinates, then extra columns."""
    locs = as_locs(locs)
    cols = [np.ones(locs.shape[0])]
    if trend == "linear":
        cols.extend(locs.T)
    elif trend != "intercept":
        raise ValueError(f"unknown trend {trend!r}")
    if extra is not None and np.size(extra):
        extra = np.asarray(extra, dtype=float).reshape(locs.shape[0], -1)
        cols.extend(extra.T)
    return np.column_stack(cols)


@dataclass
class Dataset:
    locs: np.ndarray
    z: np.ndarray
    X: np.ndarray | None = None
    noise_var: float | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.locs = as_locs(self.locs)
        self.z = np.asarray(self.z, dtype=float).ravel()
        n, d = self.locs.shape
        if n == 0:
            raise ValueError("no observations")
        if d not in (1, 2, 3):
            raise ValueError(f"locations must be 1-, 2- or 3-dimensional, got {d}")
        if self.z.size != n:
            raise ValueError("z and locations differ in length")
        if self.X is None:
            self.X = np.ones((n, 1))
        self.X = np.asarray(self.X, dtype=float).reshape(n, -1)
        if not (np.all(np.isfinite(self.locs)) and np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.X))):
            raise ValueError("data contain non-finite values")
        if not np.all(self.X[:, 0] == 1.0):
            raise ValueError("first covariate column must be the intercept")
        if np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            raise ValueError("covariate matrix is rank deficient")
        if self.noise_var is not None and not self.noise_var > 0:
            raise ValueError("noise variance must be positive")

    @property
    def n(self) -> int:
        return self.locs.shape[0]

    @property
    def dim(self) -> int:
        return self.locs.shape[1]

    def duplicate_locations(self) -> int:
        """Number of rows whose coordinates repeat an earlier row."""
        _, counts = np.unique(self.locs, axis=0, return_counts=True)
        return int(np.sum(counts - 1))

    def bounding_box(self, expand: float = 0.0):
        lo = self.locs.min(axis=0)
        hi = self.locs.max(axis=0)
        pad = expand * (hi - lo)
        return lo - pad, hi + pad
