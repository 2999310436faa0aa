"""Generalized residual functions rho(Y, h(X)).

Three restrictions are implemented: linear IV (y - h), quantile IV
(indicator minus tau) and the ACF production-function restriction with a
per-proposal Markov plug-in regression. Each also exists as a small
model object exposing ``evaluate`` so the likelihood code can stay
agnostic about which restriction is in play.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "npiv_residual",
    "npqiv_residual",
    "acf_residual",
    "NPIVModel",
    "NPQIVModel",
    "ACFModel",
]


def npiv_residual(y: np.ndarray, hvals: np.ndarray) -> np.ndarray:
    """rho = y - h(x), elementwise."""
    y = np.asarray(y, dtype=float)
    hvals = np.asarray(hvals, dtype=float)
    if y.shape != hvals.shape:
        raise ValueError("y and hvals must have equal shapes")
    return y - hvals


def npqiv_residual(y: np.ndarray, hvals: np.ndarray, tau: float) -> np.ndarray:
    """rho = 1{y - h(x) <= 0} - tau; ties count toward the indicator."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    y = np.asarray(y, dtype=float)
    hvals = np.asarray(hvals, dtype=float)
    if y.shape != hvals.shape:
        raise ValueError("y and hvals must have equal shapes")
    return (y <= hvals).astype(float) - tau


def _poly_design(x: np.ndarray, degree: int) -> np.ndarray:
    return np.column_stack([x ** p for p in range(degree + 1)])


def acf_residual(y_t: np.ndarray, phi_t: np.ndarray, phi_tm1: np.ndarray,
                 f_vals_t: np.ndarray, f_vals_tm1: np.ndarray,
                 poly_degree: int = 2) -> np.ndarray:
    """Production-function residual with the Markov plug-in refit.

    omega_t = phi_t - F(x_t) and omega_{t-1} = phi_{t-1} - F(x_{t-1});
    the conditional mean g is refit by OLS of omega_t on a polynomial of
    omega_{t-1} for every proposal F. Returns y_t - F(x_t) - g(omega_{t-1}).
    """
    if poly_degree < 1:
        raise ValueError("poly_degree must be >= 1")
    y_t = np.asarray(y_t, dtype=float)
    f_vals_t = np.asarray(f_vals_t, dtype=float)
    omega_t = np.asarray(phi_t, dtype=float) - f_vals_t
    omega_tm1 = (np.asarray(phi_tm1, dtype=float)
                 - np.asarray(f_vals_tm1, dtype=float))

    if np.ptp(omega_tm1) < 1e-12:
        warnings.warn("lagged productivity proxy is degenerate; "
                      "falling back to intercept-only Markov fit",
                      stacklevel=2)
        # intercept absorbs the mean of y - F so the residual is centered
        g_vals = np.full_like(y_t, (y_t - f_vals_t).mean())
    else:
        X = _poly_design(omega_tm1, poly_degree)
        coef, *_ = np.linalg.lstsq(X, omega_t, rcond=None)
        g_vals = X @ coef
    return y_t - f_vals_t - g_vals


@dataclass(frozen=True)
class NPIVModel:
    """Linear IV restriction E[y - h(X) | W] = 0."""

    y: np.ndarray
    d_rho: int = 1

    def evaluate(self, hvals: np.ndarray,
                 hvals_lag: Optional[np.ndarray] = None) -> np.ndarray:
        return npiv_residual(self.y, hvals)


@dataclass(frozen=True)
class NPQIVModel:
    """Quantile IV restriction P(y <= h(X) | W) = tau."""

    y: np.ndarray
    tau: float
    d_rho: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")

    def evaluate(self, hvals: np.ndarray,
                 hvals_lag: Optional[np.ndarray] = None) -> np.ndarray:
        return npqiv_residual(self.y, hvals, self.tau)


@dataclass(frozen=True)
class ACFModel:
    """ACF value-added restriction with precomputed regression plug-ins."""

    y: np.ndarray
    phi_t: np.ndarray
    phi_tm1: np.ndarray
    poly_degree: int = 2
    d_rho: int = 1

    def evaluate(self, hvals: np.ndarray,
                 hvals_lag: Optional[np.ndarray] = None) -> np.ndarray:
        if hvals_lag is None:
            raise ValueError("ACF residual needs the lagged function values")
        return acf_residual(self.y, self.phi_t, self.phi_tm1,
                            hvals, hvals_lag, self.poly_degree)
