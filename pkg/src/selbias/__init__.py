"""Selection-bias dogmatism diagnostics and corrected estimators.

Tools for quantifying how independent high-dimensional priors on outcome
and exposure models concentrate the induced prior on selection bias at
zero, asymptotic bias formulas for ridge estimators, corrected fits
(clever covariate, debiased residual, shared variable selection,
propensity-aware GP kernels), and a reproducible simulation harness.
"""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    DegenerateKnotsError,
    DegeneratePilotError,
    DegeneratePropensityError,
    IdentifiabilityError,
    InsufficientSampleError,
    NumericalDegeneracyError,
    SelbiasError,
    StudyAbortError,
    UnsupportedRegimeError,
)
from .spectra import (
    BiasInputs,
    SpectrumSummary,
    delta_limit,
    empirical_spectrum,
    mp_density,
    mp_support,
    naive_ridge_bias,
    psi_moment,
    psi_moment_recursive,
    spectrum_pair,
    stieltjes,
    zprior_ridge_bias,
)
from .selection_bias import (
    CovarianceModel,
    DecayCurve,
    FunctionalPair,
    LinearModelPair,
    PriorSpec,
    centered_kernel,
    clt_scale,
    delta_functional,
    delta_linear,
    delta_sparse,
    gaussian_kernel,
    gp_delta_variance,
    kernel_decay_curve,
    prior_delta_draws,
)
from .estimators import (
    Dataset,
    EstimatorResult,
    GaussianPosterior,
    PosteriorDraws,
    SpikeSlabConfig,
    credible_interval,
    eb_tau2,
    fit_debiased,
    fit_direct_zprior,
    fit_naive_ridge,
    fit_sas,
    ridge_posterior,
    spike_slab_gibbs,
)
from .gp import (
    GPFit,
    KernelSpec,
    SplineBasis,
    ate_posterior,
    eb_optimize,
    fit_gp_method,
    fit_semipar_direct,
    gp_marginal_loglik,
    kernel_eval,
    spline_basis,
)
from .simlab import (
    ReplicationRecord,
    StudySpec,
    SummaryReport,
    SummaryRow,
    dgp_factor,
    dgp_gp,
    dgp_manifold,
    dgp_rem,
    dgp_ridge,
    dgp_sas,
    run_study,
    summarize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
