"""Whittle-Matern Gaussian process prior.

Kernel evaluation, grid factorization, non-centered path sampling,
k-means inducing points and kriging interpolation. The process on a grid
is represented as ``prior_scale * sigma * L z`` with ``L`` the Cholesky
factor of the correlation matrix and ``z`` standard normal, so the MCMC
state stays on the standard-normal scale and signal-variance moves never
trigger a refactorization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .cluster import kmeans

__all__ = [
    "GPParameterError",
    "GPNumericalError",
    "GPHyper",
    "GPGrid",
    "matern_correlation",
    "matern_kernel",
    "factor_grid",
    "sample_path",
    "kriging_weights",
    "kriging_predict",
    "select_inducing",
]

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)
_JITTER0 = 1e-8
_JITTER_RETRIES = 3


class GPParameterError(ValueError):
    """Invalid Gaussian process hyperparameters."""


class GPNumericalError(RuntimeError):
    """Covariance factorization failed."""


@dataclass(frozen=True)
class GPHyper:
    """Signal scale, per-coordinate lengthscales, smoothness and the
    1/sqrt(K) scaling tied to the first-stage dimension."""

    sigma: float
    lengthscale: np.ndarray
    alpha: float = 1.5
    prior_scale: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        object.__setattr__(self, "lengthscale", ls)
        if not (self.sigma > 0):
            raise GPParameterError("sigma must be positive")
        if not np.all(ls > 0):
            raise GPParameterError("lengthscales must be positive")
        if self.alpha not in (1.5, 2.5):
            raise GPParameterError(
                "only half-integer smoothness 3/2 and 5/2 is supported")
        if not (self.prior_scale > 0):
            raise GPParameterError("prior_scale must be positive")

    @property
    def d(self) -> int:
        return self.lengthscale.size

    def with_(self, sigma=None, lengthscale=None) -> "GPHyper":
        return GPHyper(
            sigma=self.sigma if sigma is None else sigma,
            lengthscale=(self.lengthscale if lengthscale is None
                         else lengthscale),
            alpha=self.alpha,
            prior_scale=self.prior_scale,
        )


def matern_correlation(r: np.ndarray, alpha: float) -> np.ndarray:
    """Matern correlation at scaled distance r >= 0."""
    r = np.asarray(r, dtype=float)
    if alpha == 1.5:
        u = _SQRT3 * r
        return (1.0 + u) * np.exp(-u)
    if alpha == 2.5:
        u = _SQRT5 * r
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    raise GPParameterError(
        "only half-integer smoothness 3/2 and 5/2 is supported")


def matern_kernel(s: np.ndarray, t: np.ndarray, hyper: GPHyper) -> float:
    """Stationary kernel sigma^2 k_alpha(||(s - t) / ell||)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise GPParameterError("kernel inputs must be finite")
    r = np.linalg.norm((s - t) / hyper.lengthscale)
    return float(hyper.sigma ** 2 * matern_correlation(r, hyper.alpha))


def _scaled_points(points: np.ndarray, hyper: GPHyper) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    return points / hyper.lengthscale


def correlation_matrix(points: np.ndarray, hyper: GPHyper) -> np.ndarray:
    sp = _scaled_points(points, hyper)
    return matern_correlation(cdist(sp, sp), hyper.alpha)


@dataclass(frozen=True)
class GPGrid:
    """Factorized prior covariance on a fixed point set.

    ``corr_chol`` is the lower Cholesky factor of the Matern correlation
    matrix plus ``jitter`` on the diagonal; the kernel-matrix factor is
    ``sigma * corr_chol``. ``jitter`` is relative to sigma^2.
    """

    points: np.ndarray
    corr_chol: np.ndarray = field(repr=False)
    jitter: float

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def kernel_chol(self, sigma: float) -> np.ndarray:
        return sigma * self.corr_chol


def factor_grid(points: np.ndarray, hyper: GPHyper) -> GPGrid:
    """Cholesky-factorize the prior correlation on ``points``.

    Jitter starts at 1e-8 (relative to sigma^2) and is multiplied by 10
    up to 3 retries on factorization failure.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 1:
        raise GPParameterError("grid needs at least one point")
    C = correlation_matrix(points, hyper)
    jitter = _JITTER0
    for _ in range(_JITTER_RETRIES + 1):
        try:
            L = scipy.linalg.cholesky(
                C + jitter * np.eye(C.shape[0]), lower=True)
            return GPGrid(points=points, corr_chol=L, jitter=jitter)
        except scipy.linalg.LinAlgError:
            jitter *= 10.0
    cond = np.linalg.cond(C)
    raise GPNumericalError(
        f"correlation matrix not factorizable after jitter escalation "
        f"(condition estimate {cond:.3e})")


def sample_path(grid: GPGrid, z: np.ndarray, hyper: GPHyper) -> np.ndarray:
    """Non-centered path: prior_scale * sigma * L z at the grid points."""
    z = np.asarray(z, dtype=float)
    if z.shape[0] != grid.m:
        raise ValueError(f"z has length {z.shape[0]}, grid has {grid.m} points")
    return hyper.prior_scale * hyper.sigma * (grid.corr_chol @ z)


def kriging_weights(grid: GPGrid, query: np.ndarray,
                    hyper: GPHyper) -> np.ndarray:
    """Interpolation matrix A = C_qm (C_m + jitter I)^{-1} (q x m).

    The sigma^2 factor of the kernel cancels, so weights are computed on
    the correlation scale using the jittered factor already stored.
    """
    query = np.asarray(query, dtype=float)
    if query.ndim == 1:
        query = query[:, None]
    if not np.all(np.isfinite(query)):
        raise ValueError("kriging query contains non-finite rows")
    cross = matern_correlation(
        cdist(_scaled_points(query, hyper), _scaled_points(grid.points, hyper)),
        hyper.alpha)
    sol = scipy.linalg.cho_solve((grid.corr_chol, True), cross.T)
    return sol.T


def kriging_predict(grid: GPGrid, values: np.ndarray, query: np.ndarray,
                    hyper: GPHyper) -> np.ndarray:
    """Conditional-mean interpolation of path ``values`` off the grid."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.m:
        raise ValueError("values must live on the grid points")
    return kriging_weights(grid, query, hyper) @ values


def select_inducing(points: np.ndarray, m: int,
                    rng: np.random.Generator) -> np.ndarray:
    """k-means (Lloyd, k-means++ init) cluster centers as inducing points."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if m > points.shape[0]:
        raise ValueError(f"m={m} exceeds number of points {points.shape[0]}")
    return kmeans(points, m, rng)
