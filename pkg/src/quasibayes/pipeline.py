"""End-to-end quasi-Bayes estimation for a single sample.

Ties the pieces together: standardize the data, build the instrument
basis, tune (sigma, ell) in an exploration phase, draw from the
posterior at the tuned hyperparameters, and expose prediction via
kriging plus credible sets for linear functionals, both mapped back to
the original scale of the outcome.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .designs import Dataset
from .gp import GPGrid, GPHyper, kriging_predict, select_inducing
from .objective import FirstStage, estimate_optimal_weights, quasi_loglik
from .residuals import NPIVModel, NPQIVModel
from .sampler import (PathModel, PosteriorDraws, SamplerSettings,
                      credible_set, posterior_mean, run_exploration,
                      run_posterior)

__all__ = ["Standardizer", "QBFit", "fit_quasi_bayes"]


@dataclass(frozen=True)
class Standardizer:
    """Coordinatewise location/scale maps for X and Y."""

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    @classmethod
    def fit(cls, data: Dataset) -> "Standardizer":
        x_sd = data.x.std(axis=0)
        x_sd = np.where(x_sd > 0, x_sd, 1.0)
        y_sd = data.y.std()
        return cls(x_mean=data.x.mean(axis=0), x_sd=x_sd,
                   y_mean=float(data.y.mean()),
                   y_sd=float(y_sd if y_sd > 0 else 1.0))

    def forward_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return (x - self.x_mean) / self.x_sd

    def inverse_x(self, xs: np.ndarray) -> np.ndarray:
        return xs * self.x_sd + self.x_mean

    def forward_y(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_sd

    def inverse_y(self, ys: np.ndarray) -> np.ndarray:
        return ys * self.y_sd + self.y_mean


@dataclass
class QBFit:
    """Fitted quasi-Bayes posterior with prediction and inference helpers."""

    draws: PosteriorDraws
    grid: GPGrid
    hyper: GPHyper
    std: Standardizer
    mean_path: np.ndarray  # posterior mean at grid points, standardized scale
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid_x(self) -> np.ndarray:
        """Grid points mapped back to the original regressor scale."""
        return self.std.inverse_x(self.grid.points)

    def predict(self, xq: np.ndarray) -> np.ndarray:
        """Posterior-mean structural function on the original scale."""
        xqs = self.std.forward_x(xq)
        vals = kriging_predict(self.grid, self.mean_path, xqs, self.hyper)
        return self.std.inverse_y(vals)

    def functional_credible_set(self, weights: np.ndarray,
                                gamma: float) -> tuple[float, float]:
        """Credible interval for sum_i w_i h(grid_x_i), original scale."""
        center_s, half_s = credible_set(self.draws, weights, gamma)
        w_sum = float(np.sum(weights))
        center = self.std.y_mean * w_sum + self.std.y_sd * center_s
        return center, self.std.y_sd * half_s


def _make_model(kind: str, ys: np.ndarray, tau: float):
    if kind == "npiv":
        return NPIVModel(y=ys)
    if kind == "npqiv":
        return NPQIVModel(y=ys, tau=tau)
    raise ValueError(f"unknown residual kind {kind!r}")


def fit_quasi_bayes(data: Dataset, kind: str, K: int,
                    settings: SamplerSettings, rng: np.random.Generator,
                    tau: float = 0.5, weighting: str = "identity",
                    design=None) -> QBFit:
    """Quasi-Bayes posterior mean fit under the NPIV or NPQIV restriction.

    ``weighting`` is "identity", "estimated" (two-step efficient weights
    from an identity-weighted pilot chain) or "continuous_update".
    ``design`` optionally overrides the first-stage basis.
    """
    from .basis import build_thin_plate

    std = Standardizer.fit(data)
    xs = std.forward_x(data.x)
    ys = std.forward_y(data.y)
    model = _make_model(kind, ys, tau)
    if design is None:
        design = build_thin_plate(data.w, K, rng)
    theta0 = GPHyper(sigma=1.0, lengthscale=np.ones(xs.shape[1]),
                     alpha=1.5, prior_scale=1.0 / np.sqrt(design.K))

    def make_loglik(fs: FirstStage):
        def loglik_fn(hvals: np.ndarray) -> float:
            return quasi_loglik(fs, model, hvals).loglik
        return loglik_fn

    diagnostics: dict = {}
    fs = FirstStage(design=design, weighting="identity")

    if weighting == "estimated":
        # identity-weighted pilot chain at the default hyperparameters
        pilot_pm = _path_model(xs, theta0, settings.inducing_cap, rng)
        pilot = SamplerSettings(
            burnin=settings.pilot_iters // 2,
            draws=settings.pilot_iters - settings.pilot_iters // 2,
            thin=1, beta0=settings.beta0, adapt_window=settings.adapt_window,
            adapt_eta=settings.adapt_eta, target_accept=settings.target_accept)
        pilot_draws = run_posterior(pilot_pm, theta0, make_loglik(fs),
                                    pilot, rng)
        pilot_mean = posterior_mean(pilot_draws)
        # the kriging map is linear, so it carries the mean path to the data
        prelim_resid = model.evaluate(pilot_pm.eval_corr_values(pilot_mean))
        weights, n_clamped = estimate_optimal_weights(fs, prelim_resid)
        diagnostics["weight_clamps"] = n_clamped
        fs = FirstStage(design=design, weighting="estimated", weights=weights)
    elif weighting == "continuous_update":
        fs = FirstStage(design=design, weighting="continuous_update")
    elif weighting != "identity":
        raise ValueError(f"unknown weighting {weighting!r}")

    loglik_fn = make_loglik(fs)

    # exploration phase, possibly on a reduced inducing grid
    explore_cap = settings.explore_cap or settings.inducing_cap
    explore_pm = _path_model(xs, theta0, explore_cap, rng)
    theta_hat, explore_state = run_exploration(
        explore_pm, theta0, loglik_fn, settings, rng)
    diagnostics["explore_beta"] = float(explore_state.beta)
    diagnostics["theta_hat"] = np.concatenate(
        ([theta_hat.sigma], theta_hat.lengthscale))

    # full posterior at the tuned hyperparameters
    post_pm = _path_model(xs, theta_hat, settings.inducing_cap, rng)
    draws = run_posterior(post_pm, theta_hat, loglik_fn, settings, rng,
                          beta=explore_state.beta)
    diagnostics["accept_z"] = draws.accept_z
    mean_path = posterior_mean(draws)
    return QBFit(draws=draws, grid=post_pm.grid, hyper=theta_hat, std=std,
                 mean_path=mean_path, diagnostics=diagnostics)


def _path_model(xs: np.ndarray, hyper: GPHyper, cap: Optional[int],
                rng: np.random.Generator) -> PathModel:
    if cap is not None and xs.shape[0] > cap:
        grid_pts = select_inducing(xs, cap, rng)
        return PathModel(grid_pts, hyper, eval_points=xs)
    return PathModel(xs, hyper)
