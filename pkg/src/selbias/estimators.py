"""Conjugate ridge posteriors and spike-and-slab Gibbs fits.

Implements the naive ridge fit, the two corrected ridge variants built on
a first-stage exposure fit (direct clever-covariate and debiased
residual), spike-and-slab samplers with naive / shared / direct prior
couplings, and credible-interval extraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar
from scipy.stats import norm as normal_dist

from . import _gibbs
from .errors import (
    ArgumentError,
    IdentifiabilityError,
    InsufficientSampleError,
    NumericalDegeneracyError,
)

__all__ = [
    "Dataset",
    "GaussianPosterior",
    "SpikeSlabConfig",
    "PosteriorDraws",
    "EstimatorResult",
    "ridge_posterior",
    "fit_naive_ridge",
    "eb_tau2",
    "fit_direct_zprior",
    "fit_debiased",
    "spike_slab_gibbs",
    "fit_sas",
    "credible_interval",
]


@dataclass(frozen=True)
class Dataset:
    """Covariates, exposure, outcome, and an optional known propensity."""

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    propensity_oracle: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        A = np.asarray(self.A, dtype=float).ravel()
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.ndim != 2:
            raise ArgumentError("X must be a matrix")
        if not (X.shape[0] == A.size == Y.size):
            raise ArgumentError("row counts of X, A, Y must agree")
        for arr, name in ((X, "X"), (A, "A"), (Y, "Y")):
            if not np.all(np.isfinite(arr)):
                raise ArgumentError(f"{name} contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian posterior over a coefficient block."""

    mean: np.ndarray
    covariance: np.ndarray
    noise_var: float
    labels: tuple[str, ...]

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ArgumentError("covariance shape does not match mean length")
        if len(self.labels) != mean.size:
            raise ArgumentError("labels must align with mean length")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def coordinate(self, label: str) -> tuple[float, float]:
        """(posterior mean, posterior sd) of a labeled coordinate."""
        idx = self.labels.index(label)
        return float(self.mean[idx]), float(np.sqrt(self.covariance[idx, idx]))


@dataclass(frozen=True)
class SpikeSlabConfig:
    """Spike-and-slab Gibbs settings.

    ``inclusion_prior`` and ``slab_var`` may be scalars or per-coefficient
    vectors; an infinite slab variance encodes a flat prior and is only
    legal where the inclusion probability is one.  The noise variance is
    fixed at ``noise_var`` unless ``update_noise`` is set, in which case an
    inverse-gamma (shape, scale) update runs each sweep.
    """

    inclusion_prior: float | np.ndarray = 1.0
    slab_var: float | np.ndarray = 1.0
    noise_var: float = 1.0
    update_noise: bool = False
    noise_shape: float = 1.0
    noise_scale: float = 1.0
    iterations: int = 2000
    burn_in: int = 500

    def __post_init__(self):
        if not (0 <= self.burn_in < self.iterations):
            raise ArgumentError("need 0 <= burn_in < iterations")
        if self.noise_var <= 0 or self.noise_shape <= 0 or self.noise_scale <= 0:
            raise ArgumentError("noise parameters must be positive")


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained post-burn-in Gibbs draws."""

    coefficients: np.ndarray
    indicators: np.ndarray
    noise_var: np.ndarray

    def __post_init__(self):
        if np.any((~self.indicators) & (self.coefficients != 0.0)):
            raise ArgumentError("excluded coefficients must be exactly zero")


@dataclass(frozen=True)
class EstimatorResult:
    """Point estimate, posterior sd, and credible interval for one method."""

    estimate: float
    posterior_sd: float
    interval: tuple[float, float]
    level: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.interval
        if not (lo <= hi):
            raise ArgumentError("interval endpoints out of order")
        if not (0 < self.level < 1):
            raise ArgumentError("level must lie in (0, 1)")


def ridge_posterior(
    design, y, penalty, noise_var: float
) -> GaussianPosterior:
    """Conjugate Gaussian posterior with per-column prior precisions.

    mean = (Psi'Psi + noise_var * diag(penalty))^-1 Psi'y and
    covariance = noise_var * (Psi'Psi + noise_var * diag(penalty))^-1.
    Zero-penalty columns carry an exactly flat prior and are never
    silently regularized; if the system cannot be factorized even after
    jittering the penalized block, the flat block is unidentifiable.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if design.ndim != 2 or design.shape[0] != y.size:
        raise ArgumentError("design and response shapes are inconsistent")
    if design.shape[0] < 1:
        raise ArgumentError("need at least one observation")
    if noise_var <= 0:
        raise ArgumentError("noise_var must be positive")
    q = design.shape[1]
    penalty = np.broadcast_to(np.asarray(penalty, dtype=float), (q,)).copy()
    if np.any(penalty < 0):
        raise ArgumentError("penalties must be nonnegative")

    gram = design.T @ design
    rhs = design.T @ y
    penalized = penalty > 0
    jitter = 0.0
    while True:
        M = gram + noise_var * np.diag(penalty)
        if jitter > 0:
            M = M + np.diag(np.where(penalized, jitter, 0.0))
        try:
            factor = cho_factor(M, lower=True)
            break
        except np.linalg.LinAlgError:
            if not penalized.any():
                raise IdentifiabilityError(
                    "flat-prior system is singular; design not full rank"
                ) from None
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-6:
                raise IdentifiabilityError(
                    "system remained singular after maximal jitter on the "
                    "penalized block"
                ) from None
    mean = cho_solve(factor, rhs)
    cov = noise_var * cho_solve(factor, np.eye(q))
    cov = 0.5 * (cov + cov.T)
    labels = tuple(f"c{j}" for j in range(q))
    return GaussianPosterior(mean=mean, covariance=cov, noise_var=noise_var,
                             labels=labels)


def _gamma_result(
    post: GaussianPosterior,
    idx: int,
    level: float,
    method: str,
    diagnostics: dict,
) -> EstimatorResult:
    est = float(post.mean[idx])
    sd = float(np.sqrt(post.covariance[idx, idx]))
    z = normal_dist.ppf(0.5 * (1 + level))
    return EstimatorResult(
        estimate=est,
        posterior_sd=sd,
        interval=(est - z * sd, est + z * sd),
        level=level,
        method=method,
        diagnostics=diagnostics,
    )


def fit_naive_ridge(
    data: Dataset,
    lam: float,
    noise_var: float = 1.0,
    level: float = 0.95,
) -> EstimatorResult:
    """Flat prior on the exposure coefficient, N(0, (N lam)^-1) on beta."""
    if lam <= 0:
        raise ArgumentError("lam must be positive")
    n = data.n
    design = np.column_stack([data.A, data.X])
    penalty = np.concatenate([[0.0], np.full(data.p, n * lam)])
    post = ridge_posterior(design, data.Y, penalty, noise_var)
    return _gamma_result(post, 0, level, "naive", {"lam": lam})


def eb_tau2(A, X, noise_var: float = 1.0,
            grid=(1e-4, 1e2, 41)) -> float:
    """Empirical-Bayes signal variance for the exposure model.

    Maximizes the Gaussian marginal log-likelihood of A given X under
    phi ~ Normal(0, tau2 P^-1 I) over a log grid of tau2 values refined by
    bounded golden-section search.
    """
    A = np.asarray(A, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ArgumentError("need at least two observations")
    d, V = np.linalg.eigh(X @ X.T)
    d = np.clip(d, 0.0, None)
    at2 = (V.T @ A) ** 2

    def nll(log_t2: float) -> float:
        t2 = math.exp(log_t2)
        var = t2 / p * d + noise_var
        return float(0.5 * np.sum(np.log(var) + at2 / var))

    lo, hi, num = grid
    log_grid = np.linspace(math.log(lo), math.log(hi), int(num))
    vals = np.array([nll(g) for g in log_grid])
    if not np.all(np.isfinite(vals)):
        raise NumericalDegeneracyError("non-finite marginal likelihood")
    i = int(np.argmin(vals))
    b_lo = log_grid[max(i - 1, 0)]
    b_hi = log_grid[min(i + 1, len(log_grid) - 1)]
    res = minimize_scalar(nll, bounds=(b_lo, b_hi), method="bounded",
                          options={"xatol": 1e-8})
    if not res.success or not np.isfinite(res.fun):
        raise NumericalDegeneracyError("tau2 optimization failed")
    best = res.x if res.fun <= vals[i] else log_grid[i]
    return float(math.exp(best))


def _stage1_phi_hat(
    data: Dataset,
    lam: float,
    noise_var: float,
    stage1,
) -> tuple[np.ndarray, float | None]:
    """First-stage ridge coefficient for the exposure model.

    ``stage1`` selects the penalty: "eb" estimates tau2 by empirical Bayes
    (absolute penalty P / tau2), "matched" reuses the outcome penalty
    N * lam, and a float fixes tau2 directly.
    """
    n, p = data.n, data.p
    gram = data.X.T @ data.X
    rhs = data.X.T @ data.A
    tau2_hat: float | None = None
    if stage1 == "matched":
        pen = n * lam
    else:
        if stage1 == "eb":
            tau2_hat = eb_tau2(data.A, data.X, noise_var=noise_var)
        else:
            tau2_hat = float(stage1)
            if tau2_hat <= 0:
                raise ArgumentError("stage1 tau2 must be positive")
        pen = p / tau2_hat * noise_var
    phi_hat = np.linalg.solve(gram + pen * np.eye(p), rhs)
    return phi_hat, tau2_hat


def fit_direct_zprior(
    data: Dataset,
    lam: float,
    noise_var: float = 1.0,
    level: float = 0.95,
    phi=None,
    stage1="eb",
) -> EstimatorResult:
    """Clever-covariate ridge fit with flat priors on gamma and omega.

    Stage one produces the fitted exposure surface A_hat = X phi_hat
    (or X phi when the true coefficient is supplied); stage two fits the
    outcome on [A, A_hat, X] with flat priors on the first two columns.
    """
    if lam <= 0:
        raise ArgumentError("lam must be positive")
    n = data.n
    diagnostics: dict = {"lam": lam}
    if phi is not None:
        phi_hat = np.asarray(phi, dtype=float).ravel()
        if phi_hat.size != data.p:
            raise ArgumentError("phi length does not match X columns")
        diagnostics["stage1"] = "oracle"
    else:
        phi_hat, tau2_hat = _stage1_phi_hat(data, lam, noise_var, stage1)
        diagnostics["stage1"] = stage1 if isinstance(stage1, str) else "fixed"
        if tau2_hat is not None:
            diagnostics["tau2_phi"] = tau2_hat
    a_hat = data.X @ phi_hat

    # A nearly collinear A_hat makes (gamma, omega) jointly unidentified.
    resid = a_hat - data.A * (a_hat @ data.A) / max(data.A @ data.A, 1e-300)
    if np.linalg.norm(resid) <= 1e-10 * max(np.linalg.norm(a_hat), 1.0):
        raise IdentifiabilityError("clever covariate collinear with exposure")

    design = np.column_stack([data.A, a_hat, data.X])
    penalty = np.concatenate([[0.0, 0.0], np.full(data.p, n * lam)])
    post = ridge_posterior(design, data.Y, penalty, noise_var)
    diagnostics["omega_hat"] = float(post.mean[1])
    return _gamma_result(post, 0, level, "direct", diagnostics)


def fit_debiased(
    data: Dataset,
    lam: float,
    noise_var: float = 1.0,
    level: float = 0.95,
    phi=None,
    stage1="eb",
) -> EstimatorResult:
    """Residual-exposure ridge fit (the omega = -gamma restriction)."""
    if lam <= 0:
        raise ArgumentError("lam must be positive")
    n = data.n
    diagnostics: dict = {"lam": lam}
    if phi is not None:
        phi_hat = np.asarray(phi, dtype=float).ravel()
        diagnostics["stage1"] = "oracle"
    else:
        phi_hat, tau2_hat = _stage1_phi_hat(data, lam, noise_var, stage1)
        diagnostics["stage1"] = stage1 if isinstance(stage1, str) else "fixed"
        if tau2_hat is not None:
            diagnostics["tau2_phi"] = tau2_hat
    resid = data.A - data.X @ phi_hat
    design = np.column_stack([resid, data.X])
    penalty = np.concatenate([[0.0], np.full(data.p, n * lam)])
    post = ridge_posterior(design, data.Y, penalty, noise_var)
    return _gamma_result(post, 0, level, "debiased", diagnostics)


def spike_slab_gibbs(
    design, y, config: SpikeSlabConfig, seed: int
) -> PosteriorDraws:
    """Conjugate per-coordinate spike-and-slab Gibbs sampler.

    Randomness is pre-generated from a seeded generator, so draws are
    bit-identical across reruns with the same seed.
    """
    design = np.ascontiguousarray(design, dtype=float)
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    if design.ndim != 2 or design.shape[0] != y.size:
        raise ArgumentError("design and response shapes are inconsistent")
    n, q = design.shape
    p_incl = np.broadcast_to(
        np.asarray(config.inclusion_prior, dtype=float), (q,)
    ).copy()
    slab = np.broadcast_to(np.asarray(config.slab_var, dtype=float), (q,)).copy()
    if np.any((p_incl < 0) | (p_incl > 1)):
        raise ArgumentError("inclusion probabilities must lie in [0, 1]")
    if np.any(slab <= 0):
        raise ArgumentError("slab variances must be positive")
    if np.any(np.isinf(slab) & (p_incl < 1.0)):
        raise ArgumentError("flat slab requires inclusion probability one")
    col_norm2 = np.einsum("ij,ij->j", design, design)
    if np.any(col_norm2 == 0):
        raise ArgumentError("design contains an all-zero column")

    iters, burn = config.iterations, config.burn_in
    rng = np.random.default_rng(seed)
    unif = rng.random((iters, q))
    norm = rng.standard_normal((iters, q))
    if config.update_noise:
        gam = rng.gamma(config.noise_shape + 0.5 * n, 1.0, size=iters)
    else:
        gam = np.ones(iters)
    kept = iters - burn
    coef = np.empty((kept, q))
    incl = np.empty((kept, q), dtype=np.bool_)
    s2 = np.empty(kept)
    _gibbs.gibbs_sweeps(
        design, y, p_incl, slab, col_norm2,
        float(config.noise_var), bool(config.update_noise),
        float(config.noise_scale), iters, burn,
        unif, norm, gam, coef, incl, s2,
    )
    if not np.all(np.isfinite(coef)):
        raise NumericalDegeneracyError("non-finite Gibbs draws")
    return PosteriorDraws(coefficients=coef, indicators=incl, noise_var=s2)


def fit_sas(
    data: Dataset,
    variant: str,
    config: SpikeSlabConfig,
    seed: int,
    selection_config: SpikeSlabConfig | None = None,
    level: float = 0.95,
) -> EstimatorResult:
    """Spike-and-slab outcome fit; gamma is the exposure coefficient.

    The exposure column always enters with inclusion probability one and a
    flat slab.  ``shared`` promotes stage-one selected covariates to
    certain inclusion in the outcome prior; ``direct`` appends the clever
    covariate built from the stage-one posterior mean, also with certain
    inclusion and a flat slab.
    """
    if variant not in ("naive", "shared", "direct"):
        raise ArgumentError(f"unknown spike-and-slab variant {variant!r}")
    sel_cfg = selection_config if selection_config is not None else config
    ss = np.random.SeedSequence(seed)
    seed_sel, seed_out = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    p = data.p
    diagnostics: dict = {"variant": variant}

    p_beta = np.broadcast_to(
        np.asarray(config.inclusion_prior, dtype=float), (p,)
    ).copy()
    slab_beta = np.broadcast_to(
        np.asarray(config.slab_var, dtype=float), (p,)
    ).copy()

    stage1 = None
    if variant in ("shared", "direct"):
        stage1 = spike_slab_gibbs(data.X, data.A, sel_cfg, seed_sel)
        incl_prob = stage1.indicators.mean(axis=0)
        diagnostics["stage1_inclusion"] = incl_prob

    if variant == "shared":
        p_beta = np.where(incl_prob >= 0.5, 1.0, p_beta)
        diagnostics["outcome_inclusion_prior"] = p_beta
        design = np.column_stack([data.A, data.X])
        p_full = np.concatenate([[1.0], p_beta])
        slab_full = np.concatenate([[np.inf], slab_beta])
        gamma_idx = 0
    elif variant == "direct":
        phi_hat = stage1.coefficients.mean(axis=0)
        a_hat = data.X @ phi_hat
        if np.var(a_hat) <= 1e-12:
            raise NumericalDegeneracyError("stage-one fit is constant")
        design = np.column_stack([data.A, a_hat, data.X])
        p_full = np.concatenate([[1.0, 1.0], p_beta])
        slab_full = np.concatenate([[np.inf, np.inf], slab_beta])
        gamma_idx = 0
        diagnostics["phi_hat_norm"] = float(np.linalg.norm(phi_hat))
    else:
        design = np.column_stack([data.A, data.X])
        p_full = np.concatenate([[1.0], p_beta])
        slab_full = np.concatenate([[np.inf], slab_beta])
        gamma_idx = 0

    out_cfg = SpikeSlabConfig(
        inclusion_prior=p_full,
        slab_var=slab_full,
        noise_var=config.noise_var,
        update_noise=config.update_noise,
        noise_shape=config.noise_shape,
        noise_scale=config.noise_scale,
        iterations=config.iterations,
        burn_in=config.burn_in,
    )
    draws = spike_slab_gibbs(design, data.Y, out_cfg, seed_out)
    gamma_draws = draws.coefficients[:, gamma_idx]
    lo, hi = credible_interval(gamma_draws, level)
    return EstimatorResult(
        estimate=float(gamma_draws.mean()),
        posterior_sd=float(gamma_draws.std(ddof=1)),
        interval=(lo, hi),
        level=level,
        method=variant,
        diagnostics=diagnostics,
    )


def credible_interval(summary, level: float, coordinate: str | None = None):
    """Equal-tailed credible interval from a Gaussian summary or draws.

    Gaussian summaries give mean +- z * sd; draw vectors give empirical
    equal-tailed quantiles (at least 10 draws required).
    """
    if not (0 < level < 1):
        raise ArgumentError("level must lie in (0, 1)")
    if isinstance(summary, GaussianPosterior):
        if coordinate is None:
            raise ArgumentError("coordinate label required for a posterior")
        mean, sd = summary.coordinate(coordinate)
    elif isinstance(summary, tuple) and len(summary) == 2:
        mean, sd = float(summary[0]), float(summary[1])
    else:
        draws = np.asarray(summary, dtype=float).ravel()
        if draws.size < 10:
            raise InsufficientSampleError("need at least 10 draws")
        alpha = 0.5 * (1 - level)
        lo, hi = np.quantile(draws, [alpha, 1 - alpha])
        return float(lo), float(hi)
    z = normal_dist.ppf(0.5 * (1 + level))
    return mean - z * sd, mean + z * sd
