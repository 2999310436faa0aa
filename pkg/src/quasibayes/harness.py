"""Monte Carlo replication harness.

Runs independent replications of a (design, estimator) pair, computes
out-of-sample root mean squared risk per replication, aggregates into a
report and emits CSV/JSON artifacts. Per-replication seeds are split
from the master seed by replication index so serial and parallel runs
agree bit-exactly.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .designs import DesignSpec, Dataset, generate, ols_sieve_fit, tsls_fit
from .pipeline import fit_quasi_bayes
from .sampler import SamplerSettings

__all__ = [
    "RunError",
    "RunConfig",
    "RiskReport",
    "CoverageReport",
    "run_replications",
    "coverage_experiment",
    "emit_results",
    "load_report",
]

ESTIMATORS = ("qb_npiv", "qb_npqiv", "tsls", "ols_sieve", "oracle")

#: run fails if more than this fraction of replications error out
MAX_FAILURE_RATE = 0.05

CSV_COLUMNS = ("design", "variant", "estimator", "n", "K", "replications",
               "seed", "mean_risk", "se_risk", "failures", "runtime_s")


class RunError(RuntimeError):
    """Too many replications failed, or the run could not start."""


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one Monte Carlo run."""

    design: str  # e.g. "s-uni", "cns-multi"
    estimator: str = "qb_npiv"
    n: int = 1000
    K: int = 5  # first-stage dimension for QB; J for tsls / ols_sieve
    replications: int = 100
    seed: int = 0
    tau: float = 0.5
    weighting: str = "identity"
    explore_iters: int = 10_000
    burnin: int = 5_000
    draws: int = 10_000
    thin: int = 1
    inducing_cap: int = 2_000
    explore_cap: Optional[int] = None
    mh_scale_max: float = 1.0
    theta_summary: str = "natural"
    adapt_eta: float = 0.05
    pilot_iters: int = 2_000
    workers: int = 1
    n_test: int = 10_000

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        DesignSpec.from_string(self.design, self.n)  # validates design + n

    def sampler_settings(self) -> SamplerSettings:
        return SamplerSettings(
            explore_iters=self.explore_iters, burnin=self.burnin,
            draws=self.draws, thin=self.thin, inducing_cap=self.inducing_cap,
            explore_cap=self.explore_cap, mh_scale_max=self.mh_scale_max,
            theta_summary=self.theta_summary, adapt_eta=self.adapt_eta,
            pilot_iters=self.pilot_iters)


@dataclass
class RiskReport:
    """Aggregated risks for one run; failed replications are excluded."""

    design: str
    variant: str
    estimator: str
    n: int
    K: int
    replications: int
    seed: int
    risks: list = field(default_factory=list)
    failures: int = 0
    failure_messages: list = field(default_factory=list)
    runtime_s: float = 0.0
    diagnostics: list = field(default_factory=list)

    @property
    def mean_risk(self) -> float:
        return float(np.mean(self.risks)) if self.risks else float("nan")

    @property
    def se_risk(self) -> float:
        if not self.risks:
            return float("nan")
        if len(self.risks) == 1:
            return 0.0
        r = np.asarray(self.risks)
        return float(r.std(ddof=1) / np.sqrt(r.shape[0]))


def _replication_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return np.random.default_rng(ss)


def _fit_and_predict(config: RunConfig, data: Dataset, test_x: np.ndarray,
                     rng: np.random.Generator, h0) -> tuple[np.ndarray, dict]:
    diag: dict = {}
    if config.estimator in ("qb_npiv", "qb_npqiv"):
        kind = "npiv" if config.estimator == "qb_npiv" else "npqiv"
        fit = fit_quasi_bayes(data, kind, config.K,
                              config.sampler_settings(), rng, tau=config.tau,
                              weighting=config.weighting)
        diag = {"accept_z": fit.diagnostics.get("accept_z")}
        return fit.predict(test_x), diag
    if config.estimator == "tsls":
        return tsls_fit(data, config.K, rng)(test_x), diag
    if config.estimator == "ols_sieve":
        return ols_sieve_fit(data, config.K, rng)(test_x), diag
    # oracle: the true structural function, for harness testing
    return h0(test_x), diag


def _replicate(config: RunConfig, index: int) -> tuple[Optional[float],
                                                       dict, Optional[str]]:
    """One replication: returns (risk, diagnostics, error message)."""
    rng = _replication_rng(config.seed, index)
    spec = DesignSpec.from_string(config.design, config.n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sample = generate(spec, rng, n_test=config.n_test)
            pred, diag = _fit_and_predict(config, sample.data, sample.test_x,
                                          rng, sample.h0)
        risk = float(np.sqrt(np.mean((pred - sample.h0(sample.test_x)) ** 2)))
        if not np.isfinite(risk):
            return None, {}, "non-finite risk"
        return risk, diag, None
    except (ValueError, ArithmeticError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        return None, {}, f"{type(exc).__name__}: {exc}"


def run_replications(config: RunConfig) -> RiskReport:
    """Execute all replications (serially or in a process pool) and
    aggregate. More than 5% failed replications aborts the run."""
    spec = DesignSpec.from_string(config.design, config.n)
    report = RiskReport(design=spec.name, variant=spec.variant,
                        estimator=config.estimator, n=config.n, K=config.K,
                        replications=config.replications, seed=config.seed)
    start = time.perf_counter()
    indices = range(config.replications)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_replicate, [config] * config.replications,
                                    indices))
    else:
        results = [_replicate(config, i) for i in indices]
    for risk, diag, err in results:
        if err is None:
            report.risks.append(risk)
            report.diagnostics.append(diag)
        else:
            report.failures += 1
            report.failure_messages.append(err)
    report.runtime_s = time.perf_counter() - start
    if report.failures > MAX_FAILURE_RATE * config.replications:
        raise RunError(
            f"{report.failures}/{config.replications} replications failed; "
            f"first error: {report.failure_messages[0]}")
    return report


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    gamma: float
    replications: int
    hits: int
    failures: int = 0
    centers: list = field(default_factory=list)
    halfwidths: list = field(default_factory=list)
    truths: list = field(default_factory=list)

    @property
    def coverage(self) -> float:
        done = self.replications - self.failures
        return self.hits / done if done else float("nan")


def coverage_experiment(config: RunConfig,
                        functional_weights: Optional[np.ndarray] = None,
                        gamma: float = 0.1,
                        exogenous: bool = False) -> CoverageReport:
    """Empirical coverage of credible sets for a linear functional of h0.

    The functional is a weighted average of the structural function over
    the fitted grid; ``functional_weights=None`` means the uniform
    average, i.e. L(h) = E_n[h(X)]. ``exogenous=True`` replaces the
    instruments with the regressors themselves (W = X), giving a
    strongly identified design. Requires a quasi-Bayes estimator; the
    weighting scheme comes from the config.
    """
    if config.estimator not in ("qb_npiv", "qb_npqiv"):
        raise ValueError("coverage requires a quasi-Bayes estimator")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    kind = "npiv" if config.estimator == "qb_npiv" else "npqiv"
    spec = DesignSpec.from_string(config.design, config.n)
    report = CoverageReport(gamma=gamma, replications=config.replications,
                            hits=0)
    for i in range(config.replications):
        rng = _replication_rng(config.seed, i)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sample = generate(spec, rng, n_test=config.n_test)
                data = sample.data
                if exogenous:
                    data = Dataset(y=data.y, x=data.x, w=data.x)
                fit = fit_quasi_bayes(data, kind, config.K,
                                      config.sampler_settings(), rng,
                                      tau=config.tau,
                                      weighting=config.weighting)
            m = fit.grid.m
            w = (np.full(m, 1.0 / m) if functional_weights is None
                 else np.asarray(functional_weights, dtype=float))
            if w.shape[0] != m:
                raise ValueError("functional weights do not match the grid")
            truth = float(w @ sample.h0(fit.grid_x))
            center, half = fit.functional_credible_set(w, gamma)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError,
                RuntimeError):
            report.failures += 1
            continue
        report.centers.append(center)
        report.halfwidths.append(half)
        report.truths.append(truth)
        if abs(truth - center) <= half:
            report.hits += 1
    if report.failures > MAX_FAILURE_RATE * config.replications:
        raise RunError(f"{report.failures} coverage replications failed")
    return report


# ---------------------------------------------------------------------------
# emission


def emit_results(report: RiskReport, format: str, path) -> None:
    """Write a risk report as a one-row CSV or a full JSON document."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            if report.risks or report.failures:
                writer.writerow([
                    report.design, report.variant, report.estimator,
                    report.n, report.K, report.replications, report.seed,
                    repr(report.mean_risk), repr(report.se_risk),
                    report.failures, repr(report.runtime_s)])
    elif format == "json":
        doc = {
            "design": report.design, "variant": report.variant,
            "estimator": report.estimator, "n": report.n, "K": report.K,
            "replications": report.replications, "seed": report.seed,
            "mean_risk": report.mean_risk, "se_risk": report.se_risk,
            "failures": report.failures, "runtime_s": report.runtime_s,
            "risks": list(report.risks),
            "failure_messages": list(report.failure_messages),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def load_report(path) -> RiskReport:
    """Re-read a JSON report; inverse of emit_results(format='json')."""
    with open(path) as fh:
        doc = json.load(fh)
    report = RiskReport(
        design=doc["design"], variant=doc["variant"],
        estimator=doc["estimator"], n=doc["n"], K=doc["K"],
        replications=doc["replications"], seed=doc["seed"],
        risks=list(doc["risks"]), failures=doc["failures"],
        failure_messages=list(doc["failure_messages"]),
        runtime_s=doc["runtime_s"])
    return report
