"""Gaussian-process outcome regression with propensity-aware kernels.

Four kernels for binary-exposure outcome modeling (naive, inverse
propensity clever covariates, spline-of-propensity with and without a
Gaussian residual kernel), empirical-Bayes hyperparameter selection,
posterior summaries for the sample average treatment effect, and a
direct semiparametric estimator for continuous exposures built on a
pilot exposure fit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm as normal_dist

from .errors import (
    ArgumentError,
    DegenerateKnotsError,
    DegeneratePilotError,
    NumericalDegeneracyError,
)
from .estimators import Dataset, EstimatorResult

__all__ = [
    "KernelSpec",
    "SplineBasis",
    "GPFit",
    "kernel_eval",
    "spline_basis",
    "gp_marginal_loglik",
    "eb_optimize",
    "ate_posterior",
    "fit_gp_method",
    "fit_semipar_direct",
]

_VARIANTS = ("naive", "ipw", "sop", "sop_gp")
# Propensities are clipped to this range before forming inverse weights so
# the operation stays total; clip events are counted in diagnostics.
_CLIP = (0.01, 0.99)
_MAX_JITTER = 1e-6


@dataclass(frozen=True)
class SplineBasis:
    """Natural cubic spline basis with fixed knots.

    Basis functions are {1, t, N_3, ..., N_K} in the truncated-power
    natural-spline parameterization; evaluations are linear beyond the
    boundary knots and reproduce linear functions exactly.
    """

    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        if knots.size < 2 or np.any(np.diff(knots) <= 0):
            raise DegenerateKnotsError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    @property
    def size(self) -> int:
        return self.knots.size

    def evaluate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float).ravel()
        xi = self.knots
        k = xi.size
        out = np.empty((t.size, k))
        out[:, 0] = 1.0
        out[:, 1] = t

        def d(i):
            num = np.maximum(t - xi[i], 0.0) ** 3 - np.maximum(t - xi[-1], 0.0) ** 3
            return num / (xi[-1] - xi[i])

        d_last = d(k - 2)
        for j in range(k - 2):
            out[:, j + 2] = d(j) - d_last
        return out


def spline_basis(values, n_knots: int) -> SplineBasis:
    """Knots at equally spaced empirical quantiles, boundaries included."""
    values = np.asarray(values, dtype=float).ravel()
    if n_knots < 2:
        raise ArgumentError("need at least two knots")
    if np.unique(values).size < n_knots:
        raise DegenerateKnotsError(
            f"need at least {n_knots} distinct values for {n_knots} knots"
        )
    knots = np.quantile(values, np.linspace(0.0, 1.0, n_knots))
    if np.any(np.diff(knots) <= 0):
        raise DegenerateKnotsError("quantile knots are not distinct")
    return SplineBasis(knots=knots)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel variant and hyperparameters for the outcome GP."""

    variant: str
    amplitude: float = 1.0
    inv_bandwidth: float = 1.0
    linear_scale: float = 100.0
    n_knots: int = 10
    spline: SplineBasis | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ArgumentError(f"unknown kernel variant {self.variant!r}")
        if self.amplitude <= 0 or self.inv_bandwidth <= 0 or self.n_knots < 2:
            raise ArgumentError("kernel hyperparameters must be positive")

    @property
    def has_gaussian(self) -> bool:
        return self.variant != "sop"

    @property
    def needs_propensity(self) -> bool:
        return self.variant in ("ipw", "sop", "sop_gp")


def _clip_propensity(f) -> tuple[np.ndarray, int]:
    f = np.asarray(f, dtype=float).ravel()
    clipped = np.clip(f, *_CLIP)
    return clipped, int(np.sum(clipped != f))


def _linear_block(spec: KernelSpec, a1, f1, a2, f2) -> np.ndarray:
    a1 = np.asarray(a1, dtype=float).ravel()
    a2 = np.asarray(a2, dtype=float).ravel()
    block = 1.0 + np.outer(a1, a2)
    if spec.variant == "ipw":
        if f1 is None or f2 is None:
            raise ArgumentError("ipw kernel requires propensity values")
        if np.any((f1 <= 0) | (f1 >= 1)) or np.any((f2 <= 0) | (f2 >= 1)):
            raise NumericalDegeneracyError(
                "ipw kernel requires propensities strictly inside (0, 1)"
            )
        w1, z1 = a1 / f1, (1.0 - a1) / (1.0 - f1)
        w2, z2 = a2 / f2, (1.0 - a2) / (1.0 - f2)
        block = block + np.outer(w1, w2) + np.outer(z1, z2)
    elif spec.variant in ("sop", "sop_gp"):
        if spec.spline is None:
            raise ArgumentError("spline basis not attached to kernel spec")
        if f1 is None or f2 is None:
            raise ArgumentError("spline kernel requires propensity values")
        b1 = spec.spline.evaluate(f1)
        b2 = spec.spline.evaluate(f2)
        block = block + b1 @ b2.T
    return spec.linear_scale * block


def _sqdist(a1, X1, a2, X2) -> np.ndarray:
    u1 = np.column_stack([np.asarray(a1, dtype=float).ravel(), np.atleast_2d(X1)])
    u2 = np.column_stack([np.asarray(a2, dtype=float).ravel(), np.atleast_2d(X2)])
    n1 = np.einsum("ij,ij->i", u1, u1)
    n2 = np.einsum("ij,ij->i", u2, u2)
    return np.maximum(n1[:, None] + n2[None, :] - 2.0 * u1 @ u2.T, 0.0)


def kernel_gram(spec: KernelSpec, a1, X1, f1, a2, X2, f2) -> np.ndarray:
    """Cross Gram matrix between (a, x, phi) input sets."""
    K = _linear_block(spec, a1, f1, a2, f2)
    if spec.has_gaussian:
        K = K + spec.amplitude * np.exp(-spec.inv_bandwidth * _sqdist(a1, X1, a2, X2))
    return K


def kernel_eval(spec: KernelSpec, u, u_prime) -> float:
    """Kernel value between two (a, x, phi) points."""

    def unpack(u):
        a, x = u[0], np.atleast_2d(np.asarray(u[1], dtype=float))
        f = None
        if len(u) > 2 and u[2] is not None:
            f = np.asarray([u[2]], dtype=float)
        return np.asarray([a], dtype=float), x, f

    a1, x1, f1 = unpack(u)
    a2, x2, f2 = unpack(u_prime)
    return float(kernel_gram(spec, a1, x1, f1, a2, x2, f2)[0, 0])


def _chol_with_jitter(C: np.ndarray) -> tuple[np.ndarray, float]:
    jitter = 0.0
    while True:
        try:
            L = np.linalg.cholesky(C if jitter == 0 else C + jitter * np.eye(len(C)))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0 else jitter * 10.0
            if jitter > _MAX_JITTER:
                raise NumericalDegeneracyError(
                    "Gram matrix not factorizable within jitter budget"
                ) from None


def _loglik_from_chol(L: np.ndarray, y: np.ndarray) -> float:
    alpha = np.linalg.solve(L, y)
    return float(
        -0.5 * alpha @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * y.size * np.log(2.0 * np.pi)
    )


@dataclass(frozen=True)
class GPFit:
    """Fitted outcome GP: training inputs, factorization, dual weights."""

    spec: KernelSpec
    noise_sd: float
    a: np.ndarray
    X: np.ndarray
    phi_values: np.ndarray | None
    chol: np.ndarray
    alpha: np.ndarray
    loglik: float
    propensity_fn: Callable[[np.ndarray], np.ndarray] | None = None
    diagnostics: dict = field(default_factory=dict)


def _propensity_values(spec_like, data: Dataset):
    if not spec_like.needs_propensity:
        return None, 0
    if data.propensity_oracle is None:
        raise ArgumentError("this kernel variant requires a propensity oracle")
    f = np.asarray(data.propensity_oracle(data.X), dtype=float).ravel()
    return _clip_propensity(f)


def gp_marginal_loglik(spec: KernelSpec, data: Dataset, noise_sd: float) -> float:
    """Gaussian marginal log-likelihood of Y under the outcome GP."""
    if noise_sd <= 0:
        raise ArgumentError("noise_sd must be positive")
    spec = _with_spline(spec, data)
    f, _ = _propensity_values(spec, data)
    K = kernel_gram(spec, data.A, data.X, f, data.A, data.X, f)
    L, _ = _chol_with_jitter(K + noise_sd**2 * np.eye(data.n))
    return _loglik_from_chol(L, data.Y)


def _with_spline(spec: KernelSpec, data: Dataset) -> KernelSpec:
    if spec.variant in ("sop", "sop_gp") and spec.spline is None:
        if data.propensity_oracle is None:
            raise ArgumentError("spline variants require a propensity oracle")
        f = np.asarray(data.propensity_oracle(data.X), dtype=float).ravel()
        return replace(spec, spline=spline_basis(f, spec.n_knots))
    return spec


def eb_optimize(variant: str, data: Dataset, n_knots: int = 10) -> GPFit:
    """Empirical-Bayes fit: coarse log grid then simplex refinement.

    Optimizes (log amplitude, log inverse bandwidth, log noise sd) for
    variants with a Gaussian term, and the noise sd alone for the pure
    spline-of-propensity kernel.
    """
    if data.n < 10:
        raise ArgumentError("need at least 10 observations")
    base = KernelSpec(variant=variant, n_knots=n_knots)
    base = _with_spline(base, data)
    f, n_clipped = _propensity_values(base, data)
    lin = _linear_block(base, data.A, f, data.A, f)
    D = _sqdist(data.A, data.X, data.A, data.X) if base.has_gaussian else None
    y = data.Y
    eye = np.eye(data.n)

    def nll(logp: np.ndarray) -> float:
        if base.has_gaussian:
            amp, bw, eps = np.exp(logp)
            K = lin + amp * np.exp(-bw * D)
        else:
            eps = float(np.exp(logp[0]))
            K = lin
        try:
            L, _ = _chol_with_jitter(K + eps**2 * eye)
        except NumericalDegeneracyError:
            return np.inf
        return -_loglik_from_chol(L, y)

    axis = np.log(np.logspace(-2, 2, 5))
    if base.has_gaussian:
        grid = [np.array([a, b, e]) for a in axis for b in axis for e in axis]
    else:
        grid = [np.array([e]) for e in axis]
    vals = [nll(g) for g in grid]
    if not np.any(np.isfinite(vals)):
        raise NumericalDegeneracyError("marginal likelihood non-finite on grid")
    best = grid[int(np.argmin(vals))]
    res = minimize(
        nll,
        best,
        method="Nelder-Mead",
        options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 400},
    )
    opt = res.x if res.fun <= np.min(vals) else best
    if base.has_gaussian:
        amp, bw, eps = np.exp(opt)
        spec = replace(base, amplitude=float(amp), inv_bandwidth=float(bw))
        K = lin + amp * np.exp(-bw * D)
    else:
        eps = float(np.exp(opt[0]))
        spec = base
        K = lin
    L, jitter = _chol_with_jitter(K + eps**2 * eye)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    return GPFit(
        spec=spec,
        noise_sd=float(eps),
        a=data.A,
        X=data.X,
        phi_values=f,
        chol=L,
        alpha=alpha,
        loglik=_loglik_from_chol(L, y),
        propensity_fn=data.propensity_oracle,
        diagnostics={"jitter": jitter, "n_clipped": n_clipped,
                     "grid_best_nll": float(np.min(vals)),
                     "refined_nll": float(min(res.fun, np.min(vals)))},
    )


def ate_posterior(fit: GPFit, X_eval) -> tuple[float, float]:
    """Posterior mean and sd of the averaged treatment contrast.

    The estimand is (1/M) sum_i [beta(1, x_i) - beta(0, x_i)] over the
    evaluation rows; both moments are exact Gaussian functionals of the
    GP predictive.
    """
    X_eval = np.atleast_2d(np.asarray(X_eval, dtype=float))
    m = X_eval.shape[0]
    if m < 1:
        raise ArgumentError("need at least one evaluation point")
    spec = fit.spec
    if spec.needs_propensity:
        if np.array_equal(X_eval, fit.X):
            f_eval = fit.phi_values
        elif fit.propensity_fn is not None:
            f_eval, _ = _clip_propensity(fit.propensity_fn(X_eval))
        else:
            raise ArgumentError("no propensity available at evaluation points")
    else:
        f_eval = None
    ones = np.ones(m)
    zeros = np.zeros(m)

    k_plus = kernel_gram(spec, ones, X_eval, f_eval, fit.a, fit.X, fit.phi_values)
    k_minus = kernel_gram(spec, zeros, X_eval, f_eval, fit.a, fit.X, fit.phi_values)
    q = (k_plus - k_minus).mean(axis=0)
    mean = float(q @ fit.alpha)

    kpp = kernel_gram(spec, ones, X_eval, f_eval, ones, X_eval, f_eval)
    kpm = kernel_gram(spec, ones, X_eval, f_eval, zeros, X_eval, f_eval)
    kmm = kernel_gram(spec, zeros, X_eval, f_eval, zeros, X_eval, f_eval)
    prior_var = float((kpp - kpm - kpm.T + kmm).mean())

    w = np.linalg.solve(fit.chol, q)
    var = prior_var - float(w @ w)
    var = max(var, 0.0)
    return mean, float(np.sqrt(var))


def fit_gp_method(data: Dataset, method: str, level: float = 0.95) -> EstimatorResult:
    """EB fit of the chosen kernel, then the sample-ATE posterior."""
    fit = eb_optimize(method, data)
    mean, sd = ate_posterior(fit, data.X)
    z = normal_dist.ppf(0.5 * (1 + level))
    return EstimatorResult(
        estimate=mean,
        posterior_sd=sd,
        interval=(mean - z * sd, mean + z * sd),
        level=level,
        method=method,
        diagnostics={
            "noise_sd": fit.noise_sd,
            "amplitude": fit.spec.amplitude,
            "inv_bandwidth": fit.spec.inv_bandwidth,
            "loglik": fit.loglik,
            "n_clipped": fit.diagnostics.get("n_clipped", 0),
        },
    )


def _gp_regress(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, dict]:
    """Plain Gaussian-kernel GP regression; returns smoothed fitted values."""
    n = X.shape[0]
    n1 = np.einsum("ij,ij->i", X, X)
    D = np.maximum(n1[:, None] + n1[None, :] - 2.0 * X @ X.T, 0.0)
    eye = np.eye(n)

    def nll(logp):
        amp, bw, eps = np.exp(logp)
        try:
            L, _ = _chol_with_jitter(amp * np.exp(-bw * D) + eps**2 * eye)
        except NumericalDegeneracyError:
            return np.inf
        return -_loglik_from_chol(L, y)

    axis = np.log(np.logspace(-2, 2, 5))
    grid = [np.array([a, b, e]) for a in axis for b in axis for e in axis]
    vals = [nll(g) for g in grid]
    best = grid[int(np.argmin(vals))]
    res = minimize(nll, best, method="Nelder-Mead",
                   options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 400})
    opt = res.x if res.fun <= np.min(vals) else best
    amp, bw, eps = np.exp(opt)
    K = amp * np.exp(-bw * D)
    L, _ = _chol_with_jitter(K + eps**2 * eye)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, y))
    fitted = K @ alpha
    return fitted, {"amplitude": float(amp), "inv_bandwidth": float(bw),
                    "noise_sd": float(eps)}


def _param_gp_posterior(
    F: np.ndarray,
    y: np.ndarray,
    K: np.ndarray,
    noise_sd: float,
    prior_var: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior of parametric coefficients b ~ N(0, prior_var I) in
    y = F b + g + e with g ~ GP(0, K) and e ~ N(0, noise_sd^2 I)."""
    n, q = F.shape
    L, _ = _chol_with_jitter(K + noise_sd**2 * np.eye(n))
    Fi = np.linalg.solve(L, F)
    yi = np.linalg.solve(L, y)
    prec = Fi.T @ Fi + np.eye(q) / prior_var
    cov = np.linalg.inv(prec)
    mean = cov @ (Fi.T @ yi)
    return mean, 0.5 * (cov + cov.T)


def fit_semipar_direct(
    data: Dataset, seed: int | None = None, level: float = 0.95
) -> EstimatorResult:
    """Continuous-exposure direct estimator with a pilot exposure fit.

    Stage one regresses the exposure on the covariates with a Gaussian
    kernel GP (EB hyperparameters) to obtain a fitted exposure surface;
    stage two fits the outcome as a GP plus parametric block
    [exposure, fitted surface] with Normal(0, 100) priors on both
    parametric coefficients, and reports the exposure coefficient.
    """
    if data.n < 20:
        raise ArgumentError("need at least 20 observations")
    r_hat, stage1_info = _gp_regress(data.X, data.A)
    if float(np.var(r_hat)) <= 1e-12:
        raise DegeneratePilotError("pilot exposure fit is constant")

    F = np.column_stack([data.A, r_hat])
    n = data.n
    n1 = np.einsum("ij,ij->i", data.X, data.X)
    D = np.maximum(n1[:, None] + n1[None, :] - 2.0 * data.X @ data.X.T, 0.0)
    eye = np.eye(n)
    FFt = F @ F.T

    def nll(logp):
        amp, bw, eps = np.exp(logp)
        C = amp * np.exp(-bw * D) + 100.0 * FFt + eps**2 * eye
        try:
            L, _ = _chol_with_jitter(C)
        except NumericalDegeneracyError:
            return np.inf
        return -_loglik_from_chol(L, data.Y)

    axis = np.log(np.logspace(-2, 2, 5))
    grid = [np.array([a, b, e]) for a in axis for b in axis for e in axis]
    vals = [nll(g) for g in grid]
    best = grid[int(np.argmin(vals))]
    res = minimize(nll, best, method="Nelder-Mead",
                   options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 400})
    opt = res.x if res.fun <= np.min(vals) else best
    amp, bw, eps = np.exp(opt)
    K = amp * np.exp(-bw * D)
    mean, cov = _param_gp_posterior(F, data.Y, K, float(eps), 100.0)
    est = float(mean[0])
    sd = float(np.sqrt(cov[0, 0]))
    z = normal_dist.ppf(0.5 * (1 + level))
    return EstimatorResult(
        estimate=est,
        posterior_sd=sd,
        interval=(est - z * sd, est + z * sd),
        level=level,
        method="direct_semipar",
        diagnostics={"omega_hat": float(mean[1]), "stage1": stage1_info,
                     "noise_sd": float(eps)},
    )
