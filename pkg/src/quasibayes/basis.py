"""First-stage basis matrices and stable least-squares projection.

Three basis families are provided: low-rank thin-plate radial bases with
k-means knots, natural cubic splines with quantile knots, and tensor
polynomials. Each builder returns a :class:`BasisDesign` holding the raw
matrix ``B``, an orthonormal factor ``Q`` spanning the same column space,
and an evaluator for new points.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .cluster import kmeans

__all__ = [
    "BasisError",
    "BasisSpec",
    "BasisDesign",
    "build_thin_plate",
    "build_natural_spline",
    "build_tensor_poly",
    "project",
]

#: relative ridge applied when the gram matrix is numerically singular
_RIDGE_REL = 1e-9
#: threshold on the scaled R-factor diagonal below which a column is
#: considered linearly dependent
_RANK_TOL = 1e-10


class BasisError(ValueError):
    """Invalid basis specification or input."""


@dataclass(frozen=True)
class BasisSpec:
    kind: str  # "thin_plate" | "natural_spline" | "tensor_poly"
    dimension: int
    knots: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("thin_plate", "natural_spline", "tensor_poly"):
            raise BasisError(f"unknown basis kind {self.kind!r}")
        if self.dimension < 1:
            raise BasisError("basis dimension must be >= 1")


@dataclass(frozen=True)
class BasisDesign:
    """Evaluated basis with its orthonormal factorization.

    ``Q`` has orthonormal columns spanning col(B). ``gram`` is (1/n) B'B.
    ``ridge`` is nonzero only when B is numerically rank deficient, in
    which case projections route through ridge-regularized normal
    equations instead of ``Q``.
    """

    spec: BasisSpec
    B: np.ndarray
    Q: np.ndarray
    gram: np.ndarray
    ridge: float
    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def K(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_matrix(cls, B: np.ndarray) -> "BasisDesign":
        """Wrap an explicit basis matrix (no out-of-sample evaluator)."""
        B = np.asarray(B, dtype=float)
        spec = BasisSpec("tensor_poly", B.shape[1])

        def evaluate(q):
            raise BasisError("matrix-backed design has no evaluator")

        return _finalize(spec, B, evaluate)


def _finalize(spec: BasisSpec, B: np.ndarray,
              evaluate: Callable[[np.ndarray], np.ndarray]) -> BasisDesign:
    if not np.all(np.isfinite(B)):
        raise BasisError("basis matrix contains non-finite entries")
    n, K = B.shape
    gram = (B.T @ B) / n
    Q, R = np.linalg.qr(B)
    diag = np.abs(np.diag(R))
    ridge = 0.0
    if diag.min() <= _RANK_TOL * max(diag.max(), 1.0):
        ridge = _RIDGE_REL * np.trace(gram) / K
    return BasisDesign(spec=spec, B=B, Q=Q, gram=gram, ridge=ridge,
                       evaluate=evaluate)


# ---------------------------------------------------------------------------
# thin-plate radial basis


def _radial(r: np.ndarray, d_w: int) -> np.ndarray:
    # eta(r) = r^2 log r for even d_w, r^3 for odd, with eta(0) = 0
    if d_w % 2 == 0:
        out = np.zeros_like(r)
        pos = r > 0
        out[pos] = r[pos] ** 2 * np.log(r[pos])
        return out
    return r ** 3


def build_thin_plate(points: np.ndarray, K: int,
                     rng: np.random.Generator) -> BasisDesign:
    """Thin-plate radial basis: polynomial null space plus radial bumps.

    Columns are {1, w_1, ..., w_dw} followed by eta(||w - c_j||) at
    K - dw - 1 knots chosen by k-means over ``points``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2:
        raise BasisError("points must be an (n, d_w) array")
    n, d_w = points.shape
    if K > n:
        raise BasisError(f"basis dimension K={K} exceeds sample size n={n}")
    if K < d_w + 2:
        raise BasisError(f"thin-plate basis needs K >= d_w + 2 = {d_w + 2}")

    n_knots = K - d_w - 1
    knots = kmeans(points, n_knots, rng)
    knots = np.unique(np.round(knots, 12), axis=0)
    if knots.shape[0] < n_knots:
        warnings.warn(
            f"duplicate thin-plate knots dropped; basis dimension reduced "
            f"from {K} to {d_w + 1 + knots.shape[0]}",
            stacklevel=2,
        )
    spec = BasisSpec("thin_plate", d_w + 1 + knots.shape[0], knots=knots)

    def evaluate(q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            q = q[:, None]
        d = cdist(q, knots)
        return np.column_stack([np.ones(q.shape[0]), q, _radial(d, d_w)])

    return _finalize(spec, evaluate(points), evaluate)


# ---------------------------------------------------------------------------
# natural cubic splines


def _natural_spline_features(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    # truncated-power construction with the natural (linear-tail)
    # constraints absorbed; see Hastie-Tibshirani-Friedman eq. 5.4-5.5
    J = len(knots)
    cols = [np.ones_like(x), x]
    if J >= 3:
        k_last = knots[-1]
        k_pen = knots[-2]

        def d(k):
            num = np.maximum(x - k, 0.0) ** 3 - np.maximum(x - k_last, 0.0) ** 3
            return num / (k_last - k)

        d_pen = d(k_pen)
        for k in knots[:-2]:
            cols.append(d(k) - d_pen)
    return np.column_stack(cols)


def build_natural_spline(x: np.ndarray, J: int) -> BasisDesign:
    """Natural cubic spline basis of dimension J, knots at equispaced
    quantiles of ``x``. J=2 degenerates to the linear basis {1, x}."""
    x = np.asarray(x, dtype=float).ravel()
    if J < 2:
        raise BasisError("natural spline dimension must be >= 2")
    distinct = np.unique(x)
    if distinct.size < J:
        raise BasisError(
            f"need at least J={J} distinct values, got {distinct.size}")
    if J == 2:
        knots = np.array([x.min(), x.max()])
    else:
        knots = np.quantile(x, np.linspace(0.0, 1.0, J))
        knots = np.unique(knots)
        if knots.size < J:
            raise BasisError("quantile knots are not distinct")
    spec = BasisSpec("natural_spline", J, knots=knots)

    def evaluate(q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float).ravel()
        if J == 2:
            return np.column_stack([np.ones_like(q), q])
        return _natural_spline_features(q, knots)

    return _finalize(spec, evaluate(x), evaluate)


# ---------------------------------------------------------------------------
# tensor polynomials


def _monomial_exponents(d: int, K: int) -> list[tuple[int, ...]]:
    # graded-lex order: constant, linears, quadratics, ...
    exps: list[tuple[int, ...]] = []
    degree = 0
    while len(exps) < K:
        stack = [(degree, ())]
        level: list[tuple[int, ...]] = []

        def fill(remaining, prefix):
            if len(prefix) == d - 1:
                level.append(prefix + (remaining,))
                return
            for e in range(remaining, -1, -1):
                fill(remaining - e, prefix + (e,))

        fill(degree, ())
        exps.extend(level)
        degree += 1
    return exps[:K]


def build_tensor_poly(points: np.ndarray, K: int) -> BasisDesign:
    """Multivariate polynomial basis: the first K monomials in graded order."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if K > n:
        raise BasisError(f"basis dimension K={K} exceeds sample size n={n}")
    exps = _monomial_exponents(d, K)
    spec = BasisSpec("tensor_poly", K)

    def evaluate(q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        cols = [np.prod(q ** np.asarray(e), axis=1) for e in exps]
        return np.column_stack(cols)

    return _finalize(spec, evaluate(points), evaluate)


# ---------------------------------------------------------------------------
# projection


def project(design: BasisDesign, targets: np.ndarray) -> np.ndarray:
    """Fitted values of the least-squares projection onto col(B).

    Uses the orthonormal factor (Q Q' t); falls back to ridge-regularized
    normal equations when the design was flagged rank deficient.
    """
    targets = np.asarray(targets, dtype=float)
    if not np.all(np.isfinite(targets)):
        raise BasisError("projection targets contain non-finite entries")
    if targets.shape[0] != design.n:
        raise BasisError(
            f"targets have {targets.shape[0]} rows, design has {design.n}")
    if design.ridge > 0:
        B = design.B
        n, K = B.shape
        A = B.T @ B + n * design.ridge * np.eye(K)
        coef = scipy.linalg.solve(A, B.T @ targets, assume_a="pos")
        return B @ coef
    return design.Q @ (design.Q.T @ targets)
