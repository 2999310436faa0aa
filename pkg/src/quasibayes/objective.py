"""First-stage conditional-mean estimator and the quasi-log-likelihood.

The objective is E_n[ mhat(W,h)' Sigma(W) mhat(W,h) ] with mhat the
sieve projection of the generalized residual onto the instrument basis;
the log quasi-likelihood is -(n/2) times that value. Identity weighting
is evaluated through the orthonormal factor as ||Q' rho||^2 / n, which
is what makes the MCMC inner loop cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisDesign, project

__all__ = [
    "EvaluationError",
    "FirstStage",
    "QuasiObjective",
    "mhat",
    "estimate_optimal_weights",
    "quasi_loglik",
]

#: default eigenvalue clamps for estimated weights, on the standardized
#: residual scale
DEFAULT_WEIGHT_LO = 0.05
DEFAULT_WEIGHT_HI = 20.0


class EvaluationError(RuntimeError):
    """Residuals or weights could not be evaluated."""


@dataclass
class FirstStage:
    """Instrument basis plus the weighting scheme for the objective.

    ``weighting`` is one of "identity", "estimated", "continuous_update".
    For "estimated", ``weights`` holds the per-observation inverse
    conditional variances (d_rho = 1 throughout).
    """

    design: BasisDesign
    weighting: str = "identity"
    weights: Optional[np.ndarray] = None
    clamp_lo: float = DEFAULT_WEIGHT_LO
    clamp_hi: float = DEFAULT_WEIGHT_HI

    def __post_init__(self):
        if self.weighting not in ("identity", "estimated", "continuous_update"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if not 0.0 < self.clamp_lo <= self.clamp_hi < np.inf:
            raise ValueError("need 0 < clamp_lo <= clamp_hi < inf")
        if self.weighting == "estimated" and self.weights is None:
            raise ValueError("estimated weighting requires weights")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape[0] != self.design.n:
                raise ValueError("weights length must match the sample size")
            self.weights = w


@dataclass(frozen=True)
class QuasiObjective:
    value: float
    loglik: float


def mhat(fs: FirstStage, resid: np.ndarray) -> np.ndarray:
    """Column-wise sieve projection of residuals onto the W-basis."""
    return project(fs.design, resid)


def _fitted_weights(design: BasisDesign, resid: np.ndarray,
                    lo: float, hi: float) -> tuple[np.ndarray, int]:
    sq = np.asarray(resid, dtype=float) ** 2
    fitted = project(design, sq)
    bad = int(np.sum(fitted <= 0))
    with np.errstate(divide="ignore"):
        inv = np.where(fitted > 0, 1.0 / np.maximum(fitted, 1e-300), hi)
    clamped = np.clip(inv, lo, hi)
    bad += int(np.sum((inv < lo) | (inv > hi)))
    return clamped, bad


def estimate_optimal_weights(fs: FirstStage, prelim_resid: np.ndarray,
                             lo: float = DEFAULT_WEIGHT_LO,
                             hi: float = DEFAULT_WEIGHT_HI
                             ) -> tuple[np.ndarray, int]:
    """Two-step efficient weights from residuals at a preliminary estimate.

    Regresses the squared residual on the W-basis, inverts the fitted
    conditional variance per observation and clamps into [lo, hi].
    Returns (weights, number of clamped observations).
    """
    if not 0.0 < lo <= hi < np.inf:
        raise ValueError("need 0 < lo <= hi < inf")
    return _fitted_weights(fs.design, prelim_resid, lo, hi)


def quasi_loglik(fs: FirstStage, model, hvals: np.ndarray,
                 hvals_lag: Optional[np.ndarray] = None) -> QuasiObjective:
    """Quasi-objective value and log-likelihood at the candidate function.

    ``hvals`` are the candidate structural-function values at the data
    regressors (``hvals_lag`` additionally at lagged regressors for the
    production-function restriction).
    """
    rho = model.evaluate(hvals, hvals_lag)
    if not np.all(np.isfinite(rho)):
        raise EvaluationError("non-finite residuals in likelihood evaluation")
    n = fs.design.n
    if rho.shape[0] != n:
        raise EvaluationError("residual length does not match the design")

    if fs.weighting == "identity":
        if fs.design.ridge > 0:
            fitted = project(fs.design, rho)
            value = float(np.mean(fitted ** 2))
        else:
            qr = fs.design.Q.T @ rho
            value = float(qr @ qr) / n
    else:
        fitted = project(fs.design, rho)
        if fs.weighting == "estimated":
            w = fs.weights
        else:  # continuous_update: reweight from the current h's residuals
            w, _ = _fitted_weights(fs.design, rho, fs.clamp_lo, fs.clamp_hi)
        value = float(np.mean(w * fitted ** 2))
    return QuasiObjective(value=value, loglik=-0.5 * n * value)
