"""Benchmark data-generating processes and classical baselines.

Five univariate designs (NP, S, CNS, CW, CCK) and their five-dimensional
extensions with two instruments. Each generator returns the sample, an
oracle for the true structural function, held-out regressor draws for
risk evaluation, and the latent pairs whose correlations pin down the
endogeneity structure. Covariance matrices that are not positive
definite are replaced by their projection onto the positive definite
correlation matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr  # standard normal CDF, vectorized

from .basis import build_natural_spline, build_tensor_poly, build_thin_plate, project

__all__ = [
    "DESIGN_NAMES",
    "DesignSpec",
    "Dataset",
    "GeneratedSample",
    "generate",
    "project_correlation",
    "tsls_fit",
    "ols_sieve_fit",
]

DESIGN_NAMES = ("np", "s", "cns", "cw", "cck")
_ROUND_ROBIN = np.array([0, 1, 0, 1, 0])  # instrument index for x_1..x_5
_TEST_SIZE = 10_000


@dataclass(frozen=True)
class DesignSpec:
    name: str
    variant: str  # "univariate" | "multivariate"
    n: int

    def __post_init__(self):
        if self.name not in DESIGN_NAMES:
            raise ValueError(f"unknown design {self.name!r}")
        if self.variant not in ("univariate", "multivariate"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n < 1:
            raise ValueError("sample size must be positive")

    @property
    def d(self) -> int:
        return 1 if self.variant == "univariate" else 5

    @property
    def d_w(self) -> int:
        return 1 if self.variant == "univariate" else 2

    @classmethod
    def from_string(cls, label: str, n: int) -> "DesignSpec":
        # CLI-facing labels: "np-uni", "cck-multi", ...
        name, _, suffix = label.partition("-")
        variant = {"uni": "univariate", "multi": "multivariate"}.get(suffix)
        if variant is None:
            raise ValueError(f"design label {label!r} must end in -uni or -multi")
        return cls(name=name, variant=variant, n=n)


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    x: np.ndarray  # n x d
    w: np.ndarray  # n x d_w

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class GeneratedSample:
    data: Dataset
    h0: Callable[[np.ndarray], np.ndarray]
    test_x: np.ndarray
    error: np.ndarray  # structural error actually added to h0(X)
    endogeneity_checks: list = field(default_factory=list)


def project_correlation(S: np.ndarray) -> np.ndarray:
    """Nearest-style PD correlation matrix via iterated eigenvalue clipping.

    Clips eigenvalues at 1e-6, recomposes, rescales to unit diagonal and
    repeats (at most 100 rounds) until the minimum eigenvalue is at
    least 1e-6 and the diagonal is unit to 1e-12.
    """
    A = np.asarray(S, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(A), 1.0, atol=1e-12):
        raise ValueError("correlation matrix must have unit diagonal")
    A = 0.5 * (A + A.T)
    for _ in range(100):
        vals, vecs = np.linalg.eigh(A)
        if vals.min() >= 1e-6 and np.abs(np.diag(A) - 1.0).max() <= 1e-12:
            break
        vals = np.clip(vals, 1e-6, None)
        A = (vecs * vals) @ vecs.T
        scale = np.sqrt(np.diag(A))
        A = A / np.outer(scale, scale)
        A = 0.5 * (A + A.T)
        np.fill_diagonal(A, 1.0)
    return A


def _safe_corr(S: np.ndarray,
               zero_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """PD-projected correlation matrix, optionally pinning entries to zero.

    ``zero_mask`` marks entries that must stay exactly zero (instrument-
    error orthogonality): the PD projection alternates with re-zeroing
    those entries so the conditional moment restriction survives the
    repair of an indefinite design matrix.
    """
    vals = np.linalg.eigvalsh(S)
    if vals.min() >= 1e-6:
        return S
    A = project_correlation(S)
    if zero_mask is None:
        return A
    for _ in range(500):
        A = np.asarray(A, dtype=float)
        A[zero_mask] = 0.0
        vals = np.linalg.eigvalsh(A)
        if vals.min() >= 1e-6:
            return A
        A = project_correlation(A)
    A[zero_mask] = 0.0
    return A


def _draw_mvn(corr: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(corr)
    return rng.standard_normal((n, corr.shape[0])) @ L.T


# ---------------------------------------------------------------------------
# structural functions


def _h0_np_uni(x):
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.log(np.abs(x - 1.0) + 1.0) * np.sign(x - 1.0)


def _h0_np_multi(x):
    x = np.asarray(x, dtype=float)
    terms = np.log(np.abs(x - 1.0) + 1.0) * np.sign(x - 1.0)
    out = terms.sum(axis=1)
    cross = np.zeros(x.shape[0])
    for j in range(5):
        for k in range(j + 1, 5):
            cross += np.sin(np.pi * x[:, j] * x[:, k])
    return out + cross / 10.0


def _h0_s_uni(x):
    return 2.0 * np.sin(np.pi * np.asarray(x, dtype=float).reshape(-1))


def _h0_s_multi(x):
    x = np.asarray(x, dtype=float)
    return (np.sin(np.pi * x[:, 0])
            + 0.5 * np.sin(np.pi * (x[:, 2] - x[:, 1]))
            + 0.5 * np.cos(np.pi * (x[:, 4] - x[:, 3])))


def _h0_cns_uni(x):
    return 1.0 - 2.0 * ndtr(np.asarray(x, dtype=float).reshape(-1) - 0.5)


def _h0_cns_multi(x):
    x = np.asarray(x, dtype=float)
    return (1.0 - 2.0 * ndtr(x - 0.5)).sum(axis=1)


def _h0_cw_uni(x):
    x = np.asarray(x, dtype=float).reshape(-1)
    return 2.0 * np.maximum(x - 0.5, 0.0) ** 2 + 0.5 * x


def _h0_cw_multi(x):
    x = np.asarray(x, dtype=float)
    out = (2.0 * np.maximum(x - 0.5, 0.0) ** 2 + 0.5 * x).sum(axis=1)
    return out + x[:, 2] * x[:, 3] + np.log1p(x[:, 0] * x[:, 1] * x[:, 4])


def _h0_cck_uni(x):
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.sin(4.0 * x) * np.log(x)


def _h0_cck_multi(x):
    x = np.asarray(x, dtype=float)
    return (np.sin(4.0 * x[:, 0]) * np.log(x[:, 0])
            + 1.5 * np.cos(np.pi * x[:, 1])
            + x[:, 2] ** 2 - 0.5 * x[:, 3] * x[:, 4])


# ---------------------------------------------------------------------------
# latent draws per design


def _draw_np_uni(n, rng):
    corr = _safe_corr(np.array([
        [1.0, 0.5, 0.0],
        [0.5, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ]))
    latent = _draw_mvn(corr, n, rng)
    u, v, w = latent[:, 0], latent[:, 1], latent[:, 2]
    x = v + w
    checks = [("cov(u,v)", corr[0, 1], u, v)]
    return x[:, None], w[:, None], u, checks


def _draw_np_multi(n, rng):
    corr = np.eye(6)
    corr[0, 1:] = corr[1:, 0] = 0.5
    corr = _safe_corr(corr)
    latent = _draw_mvn(corr, n, rng)
    u, v = latent[:, 0], latent[:, 1:]
    w = rng.standard_normal((n, 2))
    x = v + 0.5 * w[:, _ROUND_ROBIN]
    checks = [(f"cov(u,v{j + 1})", corr[0, 1 + j], u, v[:, j])
              for j in range(5)]
    return x, w, u, checks


def _draw_cck_uni(n, rng):
    corr = _safe_corr(np.array([[1.0, 0.75], [0.75, 1.0]]))
    latent = _draw_mvn(corr, n, rng)
    u, v = latent[:, 0], latent[:, 1]
    z = rng.standard_normal(n)
    dswitch = rng.integers(0, 2, size=n).astype(float)
    x = ndtr(v + dswitch * z)
    w = ndtr(z)
    checks = [("cov(U,V)", corr[0, 1], u, v)]
    return x[:, None], w[:, None], u, checks


def _draw_cck_multi(n, rng):
    corr = np.eye(6)
    corr[0, 1:] = corr[1:, 0] = 0.75
    corr = _safe_corr(corr)
    latent = _draw_mvn(corr, n, rng)
    u, v = latent[:, 0], latent[:, 1:]
    z = rng.standard_normal((n, 2))
    dswitch = rng.integers(0, 2, size=(n, 5)).astype(float)
    x = ndtr(v + dswitch * z[:, _ROUND_ROBIN])
    w = ndtr(z)
    checks = [(f"cov(U,V{j + 1})", corr[0, 1 + j], u, v[:, j])
              for j in range(5)]
    return x, w, u, checks


_CNS_S_UNI_CORR = np.array([
    [1.0, 0.5, 0.3],
    [0.5, 1.0, 0.0],
    [0.3, 0.0, 1.0],
])


def _draw_cns_uni(n, rng):
    corr = _safe_corr(_CNS_S_UNI_CORR)
    latent = _draw_mvn(corr, n, rng)
    xstar, zstar, eps = latent[:, 0], latent[:, 1], latent[:, 2]
    x = ndtr(xstar)
    w = ndtr(zstar)
    checks = [("cov(X*,eps)", corr[0, 2], xstar, eps)]
    return x[:, None], w[:, None], eps, checks


def _cns_multi_corr():
    # order: X*_1..X*_5, Z*_1, Z*_2, eps
    corr = np.eye(8)
    for j in range(3):
        corr[j, 5] = corr[5, j] = 0.5
    for j in (3, 4):
        corr[j, 6] = corr[6, j] = 0.5
    for j in range(5):
        corr[j, 7] = corr[7, j] = 0.3
    return corr


def _draw_cns_multi(n, rng):
    corr = _safe_corr(_cns_multi_corr())
    latent = _draw_mvn(corr, n, rng)
    xstar, zstar, eps = latent[:, :5], latent[:, 5:7], latent[:, 7]
    x = ndtr(xstar)
    w = ndtr(zstar)
    checks = [(f"cov(X*{j + 1},eps)", corr[j, 7], xstar[:, j], eps)
              for j in range(5)]
    return x, w, eps, checks


def _draw_s_uni(n, rng):
    corr = _safe_corr(_CNS_S_UNI_CORR)
    latent = _draw_mvn(corr, n, rng)
    xstar, zstar, eps = latent[:, 0], latent[:, 1], latent[:, 2]
    x = 2.0 * (ndtr(xstar / 3.0) - 0.5)
    w = 2.0 * (ndtr(zstar / 3.0) - 0.5)
    checks = [("cov(X*,eps)", corr[0, 2], xstar, eps)]
    return x[:, None], w[:, None], eps, checks


def _s_multi_corr():
    # order: X*_1..X*_5, Z*_1, Z*_2, eps
    corr = np.eye(8)
    for j in range(5):
        corr[j, 5 + _ROUND_ROBIN[j]] = corr[5 + _ROUND_ROBIN[j], j] = 0.5
        corr[j, 7] = corr[7, j] = 0.5
    return corr


def _draw_s_multi(n, rng):
    # keep the instrument-error block exactly zero through the projection
    mask = np.zeros((8, 8), dtype=bool)
    mask[5:7, 7] = mask[7, 5:7] = True
    corr = _safe_corr(_s_multi_corr(), zero_mask=mask)
    latent = _draw_mvn(corr, n, rng)
    xstar, zstar, eps = latent[:, :5], latent[:, 5:7], latent[:, 7]
    x = 2.0 * (ndtr(xstar / 3.0) - 0.5)
    w = 2.0 * (ndtr(zstar / 3.0) - 0.5)
    checks = [(f"cov(X*{j + 1},eps)", corr[j, 7], xstar[:, j], eps)
              for j in range(5)]
    return x, w, eps, checks


def _draw_cw_uni(n, rng, sigma=0.5, rho=0.3, eta=0.3):
    zeta = rng.standard_normal(n)
    eps_x = rng.standard_normal(n)
    nu = rng.standard_normal(n)
    w = ndtr(zeta)
    x = ndtr(rho * zeta + np.sqrt(1.0 - rho ** 2) * eps_x)
    err = sigma * (eta * eps_x + np.sqrt(1.0 - eta ** 2) * nu)
    checks = [("corr(err,eps_x)", eta, err, eps_x)]
    return x[:, None], w[:, None], err, checks


def _draw_cw_multi(n, rng, sigma=1.0, rho=0.3, eta=0.3):
    zeta = rng.standard_normal((n, 2))
    eps_x = rng.standard_normal((n, 5))
    nu = rng.standard_normal(n)
    w = ndtr(zeta)
    x = ndtr(rho * zeta[:, _ROUND_ROBIN] + np.sqrt(1.0 - rho ** 2) * eps_x)
    err = sigma * (eta * eps_x.sum(axis=1) + np.sqrt(1.0 - eta ** 2) * nu)
    # corr(err, eps_xj) = eta / sqrt(eta^2 d + 1 - eta^2)
    target = eta / np.sqrt(eta ** 2 * 5 + 1.0 - eta ** 2)
    checks = [(f"corr(err,eps_x{j + 1})", target, err, eps_x[:, j])
              for j in range(5)]
    return x, w, err, checks


_DRAWERS = {
    ("np", "univariate"): (_draw_np_uni, _h0_np_uni),
    ("np", "multivariate"): (_draw_np_multi, _h0_np_multi),
    ("s", "univariate"): (_draw_s_uni, _h0_s_uni),
    ("s", "multivariate"): (_draw_s_multi, _h0_s_multi),
    ("cns", "univariate"): (_draw_cns_uni, _h0_cns_uni),
    ("cns", "multivariate"): (_draw_cns_multi, _h0_cns_multi),
    ("cw", "univariate"): (_draw_cw_uni, _h0_cw_uni),
    ("cw", "multivariate"): (_draw_cw_multi, _h0_cw_multi),
    ("cck", "univariate"): (_draw_cck_uni, _h0_cck_uni),
    ("cck", "multivariate"): (_draw_cck_multi, _h0_cck_multi),
}


def generate(spec: DesignSpec, rng: np.random.Generator,
             n_test: int = _TEST_SIZE) -> GeneratedSample:
    """Draw a sample plus independent test regressors for risk evaluation.

    Multivariate designs scale the structural error by sqrt(d)."""
    drawer, h0 = _DRAWERS[(spec.name, spec.variant)]
    x, w, err, checks = drawer(spec.n, rng)
    noise_scale = np.sqrt(spec.d) if spec.variant == "multivariate" else 1.0
    y = h0(x) + noise_scale * err
    test_x, _, _, _ = drawer(n_test, rng)
    return GeneratedSample(
        data=Dataset(y=y, x=x, w=w),
        h0=h0,
        test_x=test_x,
        error=noise_scale * err,
        endogeneity_checks=checks,
    )


# ---------------------------------------------------------------------------
# classical baselines


def tsls_fit(data: Dataset, J: int, rng: np.random.Generator,
             firstK: Optional[int] = None) -> Callable[[np.ndarray], np.ndarray]:
    """Two-stage least squares: natural splines of X instrumented by a
    thin-plate basis of W, both of dimension J by default."""
    if firstK is None:
        firstK = max(J, data.w.shape[1] + 2)
    if not J <= firstK <= data.n:
        raise ValueError("need J <= firstK <= n")
    structural = build_natural_spline(data.x[:, 0], J)
    first = build_thin_plate(data.w, firstK, rng)
    fitted_basis = project(first, structural.B)
    coef, _, rank, _ = np.linalg.lstsq(fitted_basis, data.y, rcond=None)
    if rank < J:
        warnings.warn("rank-deficient 2SLS system; using the smallest-norm "
                      "solution", stacklevel=2)

    def predict(xq: np.ndarray) -> np.ndarray:
        xq = np.asarray(xq, dtype=float)
        if xq.ndim == 2:
            xq = xq[:, 0]
        return structural.evaluate(xq) @ coef

    return predict


def ols_sieve_fit(data: Dataset, J: int,
                  rng: Optional[np.random.Generator] = None
                  ) -> Callable[[np.ndarray], np.ndarray]:
    """Sieve regression of Y on an X-basis, ignoring endogeneity.

    Serves as the biased exogenous baseline: natural splines for a
    univariate regressor, tensor polynomials otherwise.
    """
    if data.x.shape[1] == 1:
        design = build_natural_spline(data.x[:, 0], J)

        def features(xq):
            xq = np.asarray(xq, dtype=float)
            if xq.ndim == 2:
                xq = xq[:, 0]
            return design.evaluate(xq)
    else:
        design = build_tensor_poly(data.x, J)
        features = design.evaluate
    coef, _, rank, _ = np.linalg.lstsq(design.B, data.y, rcond=None)
    if rank < design.K:
        warnings.warn("rank-deficient sieve regression; using the "
                      "smallest-norm solution", stacklevel=2)

    def predict(xq: np.ndarray) -> np.ndarray:
        return features(xq) @ coef

    return predict
