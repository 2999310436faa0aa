"""Posterior sampling for the quasi-Bayes posterior.

Latent coordinates z are updated with preconditioned Crank-Nicolson
proposals; the signal scale and lengthscales get log-space Metropolis
random walks with LogNormal(0,1) priors during an exploration phase.
Step sizes adapt toward a 0.25 acceptance rate. After exploration the
hyperparameters are frozen at the second-half posterior mean and a
pCN-only chain produces the draws used for summaries and credible sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .gp import (GPGrid, GPHyper, GPNumericalError, factor_grid,
                 kriging_weights)
from .objective import EvaluationError

__all__ = [
    "SummaryError",
    "SamplerSettings",
    "PathModel",
    "ChainState",
    "PosteriorDraws",
    "pcn_step",
    "hyper_step",
    "rescale_step",
    "whitened_ell_step",
    "adapt_scale",
    "run_exploration",
    "run_posterior",
    "posterior_mean",
    "credible_set",
]

LogLik = Callable[[np.ndarray], float]


class SummaryError(RuntimeError):
    """Posterior summary requested from an empty draw set."""


@dataclass
class SamplerSettings:
    explore_iters: int = 10_000
    burnin: int = 5_000
    draws: int = 10_000
    thin: int = 1
    beta0: float = 0.5
    mh_scale0: float = 0.3
    target_accept: float = 0.25
    adapt_window: int = 50
    adapt_eta: float = 0.05
    beta_min: float = 1e-4
    mh_scale_max: float = 1.0
    #: "natural" averages the second-half hyperparameter draws on their
    #: own scale; "geometric" averages the logs, which is robust to the
    #: heavy LogNormal tail when the likelihood is weakly informative
    theta_summary: str = "natural"
    inducing_cap: int = 2_000
    explore_cap: Optional[int] = None
    pilot_iters: int = 2_000


class PathModel:
    """Factorized prior on a grid plus the kriging map to the points
    where the likelihood needs function values.

    When the evaluation points coincide with the grid the kriging map is
    the identity and is skipped. Lengthscale moves refactor both.
    """

    def __init__(self, grid_points: np.ndarray, hyper: GPHyper,
                 eval_points: Optional[np.ndarray] = None):
        self.eval_points = eval_points
        self.grid, self.A = self._factor(grid_points, hyper)

    def _factor(self, points, hyper):
        grid = factor_grid(points, hyper)
        A = None
        if self.eval_points is not None:
            A = kriging_weights(grid, self.eval_points, hyper)
        return grid, A

    @property
    def m(self) -> int:
        return self.grid.m

    def refactor(self, hyper: GPHyper) -> tuple[GPGrid, Optional[np.ndarray]]:
        """Factor at new lengthscales without mutating the model."""
        return self._factor(self.grid.points, hyper)

    def commit(self, grid: GPGrid, A: Optional[np.ndarray]) -> None:
        self.grid = grid
        self.A = A

    def grid_corr_path(self, z: np.ndarray) -> np.ndarray:
        return self.grid.corr_chol @ z

    def eval_corr_values(self, corr_path: np.ndarray) -> np.ndarray:
        if self.A is None:
            return corr_path
        return self.A @ corr_path


@dataclass
class ChainState:
    """Current MCMC state with cached path values and log-likelihood.

    ``corr_path`` is L z on the grid and ``eval_corr`` its image at the
    evaluation points, both on the correlation scale; the structural
    path is prior_scale * sigma times these.
    """

    z: np.ndarray
    hyper: GPHyper
    beta: float
    mh_scales: np.ndarray
    corr_path: np.ndarray
    eval_corr: np.ndarray
    loglik: float
    n_nonfinite: int = 0

    def path_scale(self) -> float:
        return self.hyper.prior_scale * self.hyper.sigma

    def hvals(self) -> np.ndarray:
        return self.path_scale() * self.eval_corr

    def grid_path(self) -> np.ndarray:
        return self.path_scale() * self.corr_path


def init_state(pm: PathModel, hyper: GPHyper, loglik_fn: LogLik,
               settings: SamplerSettings,
               z: Optional[np.ndarray] = None,
               beta: Optional[float] = None) -> ChainState:
    if z is None:
        z = np.zeros(pm.m)
    corr_path = pm.grid_corr_path(z)
    eval_corr = pm.eval_corr_values(corr_path)
    hvals = hyper.prior_scale * hyper.sigma * eval_corr
    state = ChainState(
        z=z,
        hyper=hyper,
        beta=settings.beta0 if beta is None else beta,
        mh_scales=np.full(1 + hyper.d, settings.mh_scale0),
        corr_path=corr_path,
        eval_corr=eval_corr,
        loglik=float(loglik_fn(hvals)),
    )
    return state


@dataclass
class PosteriorDraws:
    """Sampled structural-function values at grid points plus diagnostics."""

    paths: np.ndarray  # draws x m
    hyper_trace: np.ndarray  # draws x (1 + d)
    accept_z: float
    accept_hyper: np.ndarray
    grid: Optional[GPGrid] = None
    hyper: Optional[GPHyper] = None

    def __post_init__(self):
        if self.paths.shape[0] != self.hyper_trace.shape[0]:
            raise ValueError("paths and hyper_trace row counts differ")

    @property
    def n_draws(self) -> int:
        return self.paths.shape[0]


# ---------------------------------------------------------------------------
# transition kernels


def pcn_step(state: ChainState, loglik_fn: LogLik, pm: PathModel,
             rng: np.random.Generator) -> bool:
    """One preconditioned Crank-Nicolson update of z. Returns acceptance."""
    beta = state.beta
    if not 0.0 <= beta <= 1.0:
        raise ValueError("pCN step size must lie in [0, 1]")
    if beta == 0.0:
        return True  # degenerate proposal: z' = z
    xi = rng.standard_normal(state.z.shape[0])
    z_new = math.sqrt(1.0 - beta * beta) * state.z + beta * xi
    corr_path = pm.grid_corr_path(z_new)
    eval_corr = pm.eval_corr_values(corr_path)
    try:
        ll_new = float(loglik_fn(state.path_scale() * eval_corr))
    except EvaluationError:
        state.n_nonfinite += 1
        return False
    if not math.isfinite(ll_new):
        state.n_nonfinite += 1
        return False
    if math.log(rng.random() + 1e-300) < ll_new - state.loglik:
        state.z = z_new
        state.corr_path = corr_path
        state.eval_corr = eval_corr
        state.loglik = ll_new
        return True
    return False


def rescale_step(state: ChainState, rng: np.random.Generator,
                 scale: float = 0.1) -> bool:
    """Joint move (sigma, z) -> (sigma * e^-eps, z * e^eps).

    The structural path is linear in z, so the move leaves the path and
    the log-likelihood unchanged and is accepted on the prior ratio plus
    the volume term alone -- no likelihood evaluation. It transfers mass
    between the signal scale and the latent coefficients, which unsticks
    chains caught in the large-sigma / short-z funnel where every pCN
    proposal is rejected. A frozen signal scale (mh_scales[0] == 0) turns
    the move off so pinned-hyperparameter runs stay pinned.
    """
    if state.mh_scales[0] == 0.0:
        return False
    eps = scale * rng.standard_normal()
    lam = math.log(state.hyper.sigma)
    znorm2 = float(state.z @ state.z)
    m = state.z.shape[0]
    log_ratio = (0.5 * (lam * lam - (lam - eps) ** 2)
                 + 0.5 * znorm2 * (1.0 - math.exp(2.0 * eps))
                 + m * eps)
    if math.log(rng.random() + 1e-300) < log_ratio:
        grow = math.exp(eps)
        state.z = state.z * grow
        state.corr_path = state.corr_path * grow
        state.eval_corr = state.eval_corr * grow
        state.hyper = state.hyper.with_(sigma=state.hyper.sigma / grow)
        return True
    return False


def _log_prior_diff(lam_old: float, lam_new: float) -> float:
    # LogNormal(0,1) prior on the natural parameter, symmetric RW in logs
    return 0.5 * (lam_old * lam_old - lam_new * lam_new)


def hyper_step(state: ChainState, loglik_fn: LogLik, pm: PathModel,
               rng: np.random.Generator,
               ell_indices: Optional[list[int]] = None) -> np.ndarray:
    """Metropolis updates for (sigma, selected lengthscales).

    Returns a 0/1/nan vector of length 1 + d: acceptance per parameter,
    nan for lengthscales not proposed this call.
    """
    d = state.hyper.d
    if ell_indices is None:
        ell_indices = list(range(d))
    accepted = np.full(1 + d, np.nan)

    # signal scale: the path rescales, no refactorization
    scale = state.mh_scales[0]
    if scale == 0.0:
        accepted[0] = 1.0
    else:
        lam = math.log(state.hyper.sigma)
        lam_new = lam + scale * rng.standard_normal()
        sigma_new = math.exp(lam_new)
        hv_new = state.hyper.prior_scale * sigma_new * state.eval_corr
        try:
            ll_new = float(loglik_fn(hv_new))
        except EvaluationError:
            ll_new = -math.inf
        log_ratio = ll_new - state.loglik + _log_prior_diff(lam, lam_new)
        if math.isfinite(ll_new) and math.log(rng.random() + 1e-300) < log_ratio:
            state.hyper = state.hyper.with_(sigma=sigma_new)
            state.loglik = ll_new
            accepted[0] = 1.0
        else:
            accepted[0] = 0.0

    # lengthscales: each accepted move refactors the grid
    for j in ell_indices:
        scale = state.mh_scales[1 + j]
        if scale == 0.0:
            accepted[1 + j] = 1.0
            continue
        lam = math.log(state.hyper.lengthscale[j])
        lam_new = lam + scale * rng.standard_normal()
        ell_new = state.hyper.lengthscale.copy()
        ell_new[j] = math.exp(lam_new)
        hyper_new = state.hyper.with_(lengthscale=ell_new)
        try:
            grid_new, A_new = pm.refactor(hyper_new)
        except GPNumericalError:
            accepted[1 + j] = 0.0
            continue
        corr_path = grid_new.corr_chol @ state.z
        eval_corr = corr_path if A_new is None else A_new @ corr_path
        try:
            ll_new = float(loglik_fn(state.path_scale() * eval_corr))
        except EvaluationError:
            ll_new = -math.inf
        log_ratio = ll_new - state.loglik + _log_prior_diff(lam, lam_new)
        if math.isfinite(ll_new) and math.log(rng.random() + 1e-300) < log_ratio:
            pm.commit(grid_new, A_new)
            state.hyper = hyper_new
            state.corr_path = corr_path
            state.eval_corr = eval_corr
            state.loglik = ll_new
            accepted[1 + j] = 1.0
        else:
            accepted[1 + j] = 0.0
    return accepted


def whitened_ell_step(state: ChainState, loglik_fn: LogLik, pm: PathModel,
                      rng: np.random.Generator, j: int,
                      scale: float = 0.4) -> bool:
    """Path-preserving lengthscale move.

    Proposes ell_j in log space and transports z through the new factor
    so the grid path is unchanged (z' = L'^{-1} L z); the likelihood only
    shifts through the kriging map. The conditional move in hyper_step
    holds z fixed, so when the moment conditions say little about the
    lengthscale it is sticky (z encodes the current lengthscale and any
    change reshapes the path); this move lets the lengthscale mix over
    its near-prior marginal. A frozen scale (mh_scales[1+j] == 0) turns
    the move off so pinned-hyperparameter runs stay pinned.
    """
    if state.mh_scales[1 + j] == 0.0:
        return False
    lam = math.log(state.hyper.lengthscale[j])
    lam_new = lam + scale * rng.standard_normal()
    ell_new = state.hyper.lengthscale.copy()
    ell_new[j] = math.exp(lam_new)
    hyper_new = state.hyper.with_(lengthscale=ell_new)
    try:
        grid_new, A_new = pm.refactor(hyper_new)
    except GPNumericalError:
        return False
    corr_path = state.corr_path
    z_new = solve_triangular(grid_new.corr_chol, corr_path, lower=True)
    eval_corr = corr_path if A_new is None else A_new @ corr_path
    try:
        ll_new = float(loglik_fn(state.path_scale() * eval_corr))
    except EvaluationError:
        return False
    if not math.isfinite(ll_new):
        return False
    logdet_old = float(np.sum(np.log(np.diag(pm.grid.corr_chol))))
    logdet_new = float(np.sum(np.log(np.diag(grid_new.corr_chol))))
    log_ratio = (ll_new - state.loglik + _log_prior_diff(lam, lam_new)
                 + 0.5 * (float(state.z @ state.z) - float(z_new @ z_new))
                 + logdet_old - logdet_new)
    if math.log(rng.random() + 1e-300) < log_ratio:
        pm.commit(grid_new, A_new)
        state.hyper = hyper_new
        state.z = z_new
        state.eval_corr = eval_corr
        state.loglik = ll_new
        return True
    return False


def adapt_scale(scale: float, rate: float, eta: float = 0.05,
                target: float = 0.25) -> float:
    """Multiplicative step-size update toward the target acceptance rate."""
    return scale * math.exp(eta * (rate - target))


# ---------------------------------------------------------------------------
# phases


class _RateTracker:
    """Windowed acceptance counting for adaptation."""

    def __init__(self, k: int):
        self.accepts = np.zeros(k)
        self.attempts = np.zeros(k)
        self.total_accepts = np.zeros(k)
        self.total_attempts = np.zeros(k)

    def record(self, flags: np.ndarray) -> None:
        seen = ~np.isnan(flags)
        self.attempts[seen] += 1
        self.accepts[seen] += flags[seen]
        self.total_attempts[seen] += 1
        self.total_accepts[seen] += flags[seen]

    def window_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.attempts > 0,
                            self.accepts / np.maximum(self.attempts, 1), np.nan)

    def reset_window(self) -> None:
        self.accepts[:] = 0
        self.attempts[:] = 0

    def overall(self) -> np.ndarray:
        return np.where(self.total_attempts > 0,
                        self.total_accepts / np.maximum(self.total_attempts, 1),
                        np.nan)


def _adapt(state: ChainState, tracker_z: _RateTracker,
           tracker_h: _RateTracker, settings: SamplerSettings) -> None:
    rz = tracker_z.window_rates()[0]
    if not np.isnan(rz):
        state.beta = min(1.0, max(settings.beta_min, adapt_scale(
            state.beta, rz, settings.adapt_eta, settings.target_accept)))
    rates = tracker_h.window_rates()
    for k, r in enumerate(rates):
        if not np.isnan(r):
            # the cap keeps a weakly informative likelihood (acceptance
            # above target at any scale) from inflating steps without bound
            state.mh_scales[k] = min(settings.mh_scale_max, adapt_scale(
                state.mh_scales[k], r, settings.adapt_eta,
                settings.target_accept))
    tracker_z.reset_window()
    tracker_h.reset_window()


def run_exploration(pm: PathModel, hyper0: GPHyper, loglik_fn: LogLik,
                    settings: SamplerSettings, rng: np.random.Generator,
                    state: Optional[ChainState] = None
                    ) -> tuple[GPHyper, ChainState]:
    """Joint (z, sigma, ell) chain; returns the second-half mean of the
    hyperparameter trace as the tuned hyperparameters."""
    iters = settings.explore_iters
    if iters < 2:
        raise ValueError("exploration needs at least 2 iterations")
    d = hyper0.d
    if state is None:
        # start from a prior draw of z: at z = 0 the volume terms of the
        # rescale and whitened moves are unopposed and drive sigma and
        # the lengthscales to extremes before pCN can grow z
        state = init_state(pm, hyper0, loglik_fn, settings,
                           z=rng.standard_normal(pm.m))
    trace = np.empty((iters, 1 + d))
    tz = _RateTracker(1)
    th = _RateTracker(1 + d)
    for it in range(iters):
        acc = pcn_step(state, loglik_fn, pm, rng)
        tz.record(np.array([float(acc)]))
        # round-robin lengthscale updates keep multivariate exploration to
        # one refactorization per iteration
        ell_idx = [it % d] if d > 1 else None
        th.record(hyper_step(state, loglik_fn, pm, rng, ell_idx))
        rescale_step(state, rng)
        whitened_ell_step(state, loglik_fn, pm, rng, it % d)
        trace[it, 0] = state.hyper.sigma
        trace[it, 1:] = state.hyper.lengthscale
        if (it + 1) % settings.adapt_window == 0:
            _adapt(state, tz, th, settings)
    second_half = trace[iters // 2:]
    if settings.theta_summary == "geometric":
        mean = np.exp(np.log(second_half).mean(axis=0))
    elif settings.theta_summary == "natural":
        mean = second_half.mean(axis=0)
    else:
        raise ValueError(
            f"unknown theta summary {settings.theta_summary!r}")
    theta_hat = hyper0.with_(sigma=float(mean[0]), lengthscale=mean[1:].copy())
    return theta_hat, state


def run_posterior(pm: PathModel, theta_hat: GPHyper, loglik_fn: LogLik,
                  settings: SamplerSettings, rng: np.random.Generator,
                  beta: Optional[float] = None) -> PosteriorDraws:
    """pCN-only chain at fixed hyperparameters.

    The step size keeps adapting through the discarded burn-in (the grid
    may differ from the exploration grid) and is frozen for kept draws.
    """
    state = init_state(pm, theta_hat, loglik_fn, settings, beta=beta)
    n_keep = settings.draws
    paths = np.empty((n_keep, pm.m))
    tz = _RateTracker(1)
    kept_accepts = 0
    kept_steps = 0
    for it in range(settings.burnin):
        acc = pcn_step(state, loglik_fn, pm, rng)
        tz.record(np.array([float(acc)]))
        if (it + 1) % settings.adapt_window == 0:
            rz = tz.window_rates()[0]
            if not np.isnan(rz):
                state.beta = min(1.0, max(settings.beta_min, adapt_scale(
                    state.beta, rz, settings.adapt_eta,
                    settings.target_accept)))
            tz.reset_window()
    for k in range(n_keep):
        for _ in range(settings.thin):
            acc = pcn_step(state, loglik_fn, pm, rng)
            kept_accepts += int(acc)
            kept_steps += 1
        paths[k] = state.grid_path()
    accept_z = kept_accepts / kept_steps if kept_steps else float("nan")
    hyper_trace = np.tile(
        np.concatenate(([theta_hat.sigma], theta_hat.lengthscale)),
        (n_keep, 1))
    return PosteriorDraws(paths=paths, hyper_trace=hyper_trace,
                          accept_z=accept_z,
                          accept_hyper=np.full(1 + theta_hat.d, np.nan),
                          grid=pm.grid, hyper=theta_hat)


# ---------------------------------------------------------------------------
# summaries


def posterior_mean(draws: PosteriorDraws) -> np.ndarray:
    if draws.n_draws == 0:
        raise SummaryError("posterior mean of zero draws")
    return draws.paths.mean(axis=0)


def credible_set(draws: PosteriorDraws, functional_weights: np.ndarray,
                 gamma: float) -> tuple[float, float]:
    """Credible interval for a linear functional of the structural function.

    The functional is the weighted average of path values over the grid;
    the interval is centered at its value under the posterior mean with
    halfwidth the empirical (1 - gamma) quantile of the absolute
    posterior deviation.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if draws.n_draws == 0:
        raise SummaryError("credible set of zero draws")
    w = np.asarray(functional_weights, dtype=float)
    values = draws.paths @ w
    center = float(posterior_mean(draws) @ w)
    halfwidth = float(np.quantile(np.abs(values - center), 1.0 - gamma))
    return center, halfwidth
