"""Quasi-Bayes estimation for nonparametric conditional moment
restriction models: sieve first stage, Matérn Gaussian-process priors,
pCN posterior sampling, credible sets and a Monte Carlo harness."""

from .basis import (BasisDesign, BasisError, BasisSpec, build_natural_spline,
                    build_tensor_poly, build_thin_plate, project)
from .designs import (DesignSpec, Dataset, GeneratedSample, generate,
                      ols_sieve_fit, project_correlation, tsls_fit)
from .gp import (GPGrid, GPHyper, GPNumericalError, GPParameterError,
                 correlation_matrix, factor_grid, kriging_predict,
                 kriging_weights, matern_correlation, matern_kernel,
                 sample_path, select_inducing)
from .harness import (CoverageReport, RiskReport, RunConfig, RunError,
                      coverage_experiment, emit_results, load_report,
                      run_replications)
from .objective import (EvaluationError, FirstStage, QuasiObjective,
                        estimate_optimal_weights, mhat, quasi_loglik)
from .pipeline import QBFit, Standardizer, fit_quasi_bayes
from .residuals import (ACFModel, NPIVModel, NPQIVModel, acf_residual,
                        npiv_residual, npqiv_residual)
from .sampler import (ChainState, PathModel, PosteriorDraws, SamplerSettings,
                      SummaryError, adapt_scale, credible_set, hyper_step,
                      pcn_step, posterior_mean, run_exploration,
                      run_posterior)

__version__ = "0.1.0"
