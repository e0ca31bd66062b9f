"""Likelihood-free parameter inference for stochastic volatility models.

Gaussian-process optimisation over noisy particle-filter estimates of
the log-posterior, exact or tolerance-kernel flavoured, with sampling
and stochastic-approximation baselines and a copula-based portfolio
risk stage on top of the filtered volatilities.
"""

from .errors import (
    ConfigurationError,
    ContractViolation,
    DomainError,
    GposmcError,
    IngestError,
    NumericalError,
    StateError,
)
from .models import (
    ASV,
    GSV,
    LGSS,
    PriorSpec,
    SearchBox,
    ThetaVector,
    default_prior,
    default_search_box,
    log_prior,
    simulate,
    stable_sample,
)
from .rng import RngStream
from .smc import (
    AbcConfig,
    LogPosteriorEstimate,
    PosteriorEvaluator,
    bpf_log_posterior,
    default_abc_config,
    perturb_observations,
    smc_abc_log_posterior,
    systematic_resample,
)
from .gp import (
    GpHyperparameters,
    GpModel,
    SurrogateDataset,
    estimate_hyperparameters,
    gp_log_marginal_likelihood,
    gp_predict,
)
from .optim import DirectBudget, direct_optimize, finite_difference_hessian, latin_hypercube
from .driver import (
    AcquisitionConfig,
    GpoRunState,
    LaplacePosterior,
    expected_improvement,
    extract_laplace,
    gpo_run,
    propose_next,
    state_from_dict,
)
from .baselines import PmhConfig, PmhResult, SpsaConfig, SpsaResult, pmh_run, spsa_run
from .copula import (
    CopulaModel,
    MarginModel,
    VaRSeries,
    backtest,
    filtered_residuals,
    fit_copula,
    fit_margin,
    fit_t_copula_dof,
    kendall_tau_to_correlation,
    probability_transform,
    simulate_t_copula,
    tau_to_rho,
    var_backtest_series,
    var_estimate,
)
from .config import ReturnSeries, RunConfig, ingest_csv, load_config, validate_config

__version__ = "0.1.0"
