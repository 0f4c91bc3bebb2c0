"""Exact and Monte Carlo evaluation of the selection-bias parameter.

Covers linear, sparse, and functional outcome/exposure model pairs, plus
prior-concentration diagnostics: how fast the induced prior on the
selection bias collapses to zero as the covariate dimension grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ArgumentError,
    DegeneratePropensityError,
    NumericalDegeneracyError,
)
from .spectra import SpectrumSummary

__all__ = [
    "LinearModelPair",
    "CovarianceModel",
    "FunctionalPair",
    "PriorSpec",
    "gaussian_kernel",
    "delta_linear",
    "delta_sparse",
    "delta_functional",
    "clt_scale",
    "prior_delta_draws",
    "centered_kernel",
    "gp_delta_variance",
    "kernel_decay_curve",
    "DecayCurve",
]


@dataclass(frozen=True)
class LinearModelPair:
    """Linear outcome and exposure coefficient vectors with noise scales."""

    beta: np.ndarray
    phi: np.ndarray
    gamma: float = 0.0
    sigma2_y: float = 1.0
    sigma2_a: float = 1.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        phi = np.asarray(self.phi, dtype=float).ravel()
        if beta.size != phi.size:
            raise ArgumentError("beta and phi must have equal length")
        if self.sigma2_y <= 0 or self.sigma2_a <= 0:
            raise ArgumentError("noise variances must be strictly positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class CovarianceModel:
    """Covariate covariance: explicit matrix, isotropic, or latent-factor."""

    kind: str
    matrix_: np.ndarray | None = None
    sigma2_x: float = 1.0
    dim_: int | None = None
    loadings: np.ndarray | None = None
    noise_sd: float = 0.0

    @classmethod
    def explicit(cls, sigma) -> "CovarianceModel":
        S = np.asarray(sigma, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ArgumentError("explicit covariance must be square")
        if np.abs(S - S.T).max() > 1e-8 * max(np.abs(S).max(), 1.0):
            raise ArgumentError("explicit covariance must be symmetric")
        return cls(kind="explicit", matrix_=S)

    @classmethod
    def isotropic(cls, sigma2_x: float, dim: int) -> "CovarianceModel":
        if sigma2_x <= 0 or dim < 1:
            raise ArgumentError("need sigma2_x > 0 and dim >= 1")
        return cls(kind="isotropic", sigma2_x=float(sigma2_x), dim_=int(dim))

    @classmethod
    def latent_factor(cls, loadings, sigma_x: float) -> "CovarianceModel":
        L = np.asarray(loadings, dtype=float)
        if L.ndim != 2:
            raise ArgumentError("loadings must be a P x L matrix")
        if sigma_x < 0:
            raise ArgumentError("sigma_x must be nonnegative")
        return cls(kind="latent_factor", loadings=L, noise_sd=float(sigma_x))

    @property
    def dim(self) -> int:
        if self.kind == "explicit":
            return self.matrix_.shape[0]
        if self.kind == "isotropic":
            return self.dim_
        return self.loadings.shape[0]

    def matrix(self) -> np.ndarray:
        if self.kind == "explicit":
            return self.matrix_
        if self.kind == "isotropic":
            return self.sigma2_x * np.eye(self.dim_)
        L = self.loadings
        return L @ L.T + self.noise_sd**2 * np.eye(L.shape[0])

    def quad(self, u, v) -> float:
        """u^T Sigma v without materializing Sigma for structured variants."""
        u = np.asarray(u, dtype=float).ravel()
        v = np.asarray(v, dtype=float).ravel()
        if u.size != self.dim or v.size != self.dim:
            raise ArgumentError("vector length does not match covariance dim")
        if self.kind == "isotropic":
            return float(self.sigma2_x * (u @ v))
        if self.kind == "latent_factor":
            L = self.loadings
            return float((u @ L) @ (L.T @ v) + self.noise_sd**2 * (u @ v))
        return float(u @ self.matrix_ @ v)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n rows of Normal(0, Sigma)."""
        p = self.dim
        if self.kind == "isotropic":
            return np.sqrt(self.sigma2_x) * rng.standard_normal((n, p))
        if self.kind == "latent_factor":
            L = self.loadings
            eta = rng.standard_normal((n, L.shape[1]))
            x = eta @ L.T
            if self.noise_sd > 0:
                x = x + self.noise_sd * rng.standard_normal((n, p))
            return x
        w, V = np.linalg.eigh(self.matrix_)
        w = np.clip(w, 0.0, None)
        return rng.standard_normal((n, p)) * np.sqrt(w) @ V.T


@dataclass(frozen=True)
class FunctionalPair:
    """Evaluable outcome and propensity functions with a covariate sampler.

    ``outcome_fn`` and ``propensity_fn`` map an (n, P) matrix of covariate
    rows to length-n vectors; ``covariate_sampler(n, rng)`` draws rows.
    """

    outcome_fn: Callable[[np.ndarray], np.ndarray]
    propensity_fn: Callable[[np.ndarray], np.ndarray]
    covariate_sampler: Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class PriorSpec:
    """Coefficient prior: ridge, spike-and-slab, or Gaussian process."""

    variant: str
    tau2_beta: float = 1.0
    tau2_phi: float = 1.0
    p_beta: float = 1.0
    p_phi: float = 1.0
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    shift: float = 0.0

    @classmethod
    def ridge(cls, tau2_beta: float, tau2_phi: float, shift: float = 0.0):
        if tau2_beta <= 0 or tau2_phi <= 0:
            raise ArgumentError("prior scales must be positive")
        return cls("ridge", tau2_beta=tau2_beta, tau2_phi=tau2_phi, shift=shift)

    @classmethod
    def spike_slab(cls, p_beta, p_phi, tau2_beta, tau2_phi, shift=0.0):
        if not (0 <= p_beta <= 1 and 0 <= p_phi <= 1):
            raise ArgumentError("inclusion probabilities must lie in [0, 1]")
        if tau2_beta <= 0 or tau2_phi <= 0:
            raise ArgumentError("prior scales must be positive")
        return cls(
            "spike_slab",
            tau2_beta=tau2_beta,
            tau2_phi=tau2_phi,
            p_beta=p_beta,
            p_phi=p_phi,
            shift=shift,
        )

    @classmethod
    def gp(cls, kernel, tau2_beta: float):
        if tau2_beta <= 0:
            raise ArgumentError("prior scales must be positive")
        return cls("gp", tau2_beta=tau2_beta, kernel=kernel)


def gaussian_kernel(H) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """rho(x, x') = exp{-(x - x')^T H^{-1} (x - x') / 2} as a Gram builder."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise ArgumentError("bandwidth matrix H is singular") from exc

    def rho(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        x1 = np.atleast_2d(x1)
        x2 = np.atleast_2d(x2)
        y1 = x1 @ Hinv
        q11 = np.einsum("ij,ij->i", y1, x1)
        q22 = np.einsum("ij,ij->i", x2 @ Hinv, x2)
        cross = y1 @ x2.T
        d2 = q11[:, None] + q22[None, :] - 2.0 * cross
        return np.exp(-0.5 * np.maximum(d2, 0.0))

    return rho


def delta_linear(a: float, models: LinearModelPair, cov: CovarianceModel) -> float:
    """Selection bias a * phi^T Sigma beta / (sigma2_a + phi^T Sigma phi)."""
    if models.beta.size != cov.dim:
        raise ArgumentError("model dimension does not match covariance dim")
    num = cov.quad(models.phi, models.beta)
    den = models.sigma2_a + cov.quad(models.phi, models.phi)
    return a * num / den


def delta_sparse(
    a: float,
    beta,
    phi,
    sigma2_x: float,
    sigma2_a: float,
) -> float:
    """Selection bias under isotropic covariance, written over the supports.

    Numerator sums sigma2_x * phi_j * beta_j over coordinates active in
    both models; denominator adds sigma2_x * phi_j^2 over the exposure
    support.  Equals ``delta_linear`` with Sigma = sigma2_x * I.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    if beta.size != phi.size:
        raise ArgumentError("beta and phi must have equal length")
    both = (beta != 0) & (phi != 0)
    act_phi = phi != 0
    num = sigma2_x * np.sum(phi[both] * beta[both])
    den = sigma2_a + sigma2_x * np.sum(phi[act_phi] ** 2)
    return a * num / den


def delta_functional(
    pair: FunctionalPair, n_draws: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo estimate of Cov{beta(X), phi(X)} / E{phi(X)} with its SE.

    The standard error comes from the delta method applied to the
    (covariance, mean) pair via per-draw influence values.
    """
    if n_draws < 100:
        raise ArgumentError("n_draws must be at least 100")
    rng = np.random.default_rng(seed)
    x = pair.covariate_sampler(n_draws, rng)
    b = np.asarray(pair.outcome_fn(x), dtype=float).ravel()
    f = np.asarray(pair.propensity_fn(x), dtype=float).ravel()
    mu = float(f.mean())
    if mu < 1e-6:
        raise DegeneratePropensityError(f"mean propensity {mu:g} below 1e-6")
    bc = b - b.mean()
    fc = f - f.mean()
    cov = float(np.mean(bc * fc))
    est = cov / mu
    infl = (bc * fc - cov) / mu - cov * (f - mu) / mu**2
    mc_se = float(np.std(infl, ddof=1) / np.sqrt(n_draws))
    return est, mc_se


def clt_scale(a: float, prior: PriorSpec, spec: SpectrumSummary) -> float:
    """Prior variance c/P of the selection bias under independent ridge priors.

    c = a^2 (tau2_beta / tau2_phi) (mean_sq_eig / mean_eig^2), using
    finite-P spectral moment plug-ins.
    """
    if prior.variant != "ridge":
        raise ArgumentError("clt_scale requires a ridge prior")
    if spec.mean_eig == 0:
        raise NumericalDegeneracyError("degenerate spectrum: mean eigenvalue 0")
    c = (
        a**2
        * (prior.tau2_beta / prior.tau2_phi)
        * (spec.mean_sq_eig / spec.mean_eig**2)
    )
    return c / spec.dim


def prior_delta_draws(
    prior: PriorSpec,
    cov: CovarianceModel,
    a: float,
    n_draws: int,
    seed: int,
    propensity_fn: Callable[[np.ndarray], np.ndarray] | None = None,
    n_points: int = 256,
    sigma2_a: float = 1.0,
) -> np.ndarray:
    """Draws of the selection bias under the prior on (beta, phi).

    Ridge and spike-and-slab variants draw coefficient pairs and evaluate
    the linear-model bias; the gp variant draws the outcome function at
    ``n_points`` sampled covariate rows against a fixed ``propensity_fn``
    and evaluates the functional bias under the empirical measure.
    """
    if n_draws < 1:
        raise ArgumentError("n_draws must be at least 1")
    rng = np.random.default_rng(seed)
    p = cov.dim

    if prior.variant == "ridge":
        out = np.empty(n_draws)
        for i in range(n_draws):
            phi = np.sqrt(prior.tau2_phi) * rng.standard_normal(p)
            b = np.sqrt(prior.tau2_beta) * rng.standard_normal(p)
            beta = b + prior.shift * phi
            pair = LinearModelPair(beta=beta, phi=phi, sigma2_a=sigma2_a)
            out[i] = delta_linear(a, pair, cov)
        return out

    if prior.variant == "spike_slab":
        out = np.empty(n_draws)
        for i in range(n_draws):
            phi = np.sqrt(prior.tau2_phi) * rng.standard_normal(p)
            phi *= rng.random(p) < prior.p_phi
            b = np.sqrt(prior.tau2_beta) * rng.standard_normal(p)
            b *= rng.random(p) < prior.p_beta
            beta = b + prior.shift * phi
            pair = LinearModelPair(beta=beta, phi=phi, sigma2_a=sigma2_a)
            out[i] = delta_linear(a, pair, cov)
        return out

    if prior.variant == "gp":
        if propensity_fn is None:
            raise ArgumentError("gp prior draws require a propensity_fn")
        x = cov.sample(n_points, rng)
        f = np.asarray(propensity_fn(x), dtype=float).ravel()
        mu = float(f.mean())
        if mu < 1e-6:
            raise DegeneratePropensityError("mean propensity below 1e-6")
        K = prior.tau2_beta * prior.kernel(x, x)
        K = K + 1e-10 * np.eye(n_points)
        L = np.linalg.cholesky(K)
        fc = f - mu
        out = np.empty(n_draws)
        for i in range(n_draws):
            beta = L @ rng.standard_normal(n_points)
            out[i] = a * float(np.mean((beta - beta.mean()) * fc)) / mu
        return out

    raise ArgumentError(f"unsupported prior variant {prior.variant!r}")


def centered_kernel(rho, x_sample) -> np.ndarray:
    """Gram matrix of rho over sample rows, double-centered.

    Centering is against the empirical covariate distribution:
    K - 1K/M - K1/M + 1K1/M^2, so every row and column sums to zero.
    """
    x = np.atleast_2d(np.asarray(x_sample, dtype=float))
    if x.shape[0] < 2:
        raise ArgumentError("need at least two sample rows")
    K = np.asarray(rho(x, x), dtype=float)
    if not np.all(np.isfinite(K)):
        raise NumericalDegeneracyError("kernel produced non-finite values")
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    return K - row - col + K.mean()


def gp_delta_variance(
    rho,
    tau2_beta: float,
    pair: FunctionalPair,
    n_draws: int,
    seed: int,
) -> float:
    """Prior variance of the functional selection bias under a GP outcome prior.

    c = tau2_beta / E{phi(X)}^2 * double integral of
    phibar(x) phibar(x') rhobar(x, x'), estimated by the off-diagonal
    U-statistic over sampled covariate pairs.
    """
    if n_draws < 100:
        raise ArgumentError("n_draws must be at least 100")
    rng = np.random.default_rng(seed)
    x = pair.covariate_sampler(n_draws, rng)
    f = np.asarray(pair.propensity_fn(x), dtype=float).ravel()
    mu = float(f.mean())
    if mu < 1e-6:
        raise DegeneratePropensityError(f"mean propensity {mu:g} below 1e-6")
    Kbar = centered_kernel(rho, x)
    fc = f - mu
    total = float(fc @ Kbar @ fc)
    diag = float(np.sum(fc**2 * np.diag(Kbar)))
    m = n_draws
    u_stat = (total - diag) / (m * (m - 1))
    return tau2_beta * u_stat / mu**2


@dataclass(frozen=True)
class DecayCurve:
    """Prior-variance decay of the selection bias over covariate dimension."""

    points: tuple[tuple[int, float], ...]
    slope: float
    slope_se: float
    mean_propensity: tuple[float, ...]


def kernel_decay_curve(
    cov_family: Callable[[int], CovarianceModel],
    bandwidth_rule: str,
    phi_family: Callable[[int], Callable[[np.ndarray], np.ndarray]],
    p_list: Sequence[int],
    seed: int,
    tau2_beta: float = 1.0,
    n_draws: int = 500,
    bandwidth_scale: float = 1.0,
) -> DecayCurve:
    """Estimate log-linear decay of the GP prior variance c over dimension P.

    ``bandwidth_rule`` selects the Gaussian-kernel bandwidth matrix:
    ``"sigma_scaled"`` uses H = k * Sigma, ``"isotropic"`` uses H = xi * I,
    with k or xi given by ``bandwidth_scale``.
    """
    p_list = [int(p) for p in p_list]
    if len(p_list) < 3:
        raise ArgumentError("p_list must contain at least three dimensions")
    if bandwidth_rule not in ("sigma_scaled", "isotropic"):
        raise ArgumentError(f"unknown bandwidth rule {bandwidth_rule!r}")
    if bandwidth_scale <= 0:
        raise ArgumentError("bandwidth_scale must be positive")

    ss = np.random.SeedSequence(seed)
    child_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(len(p_list))]
    points = []
    mean_phis = []
    for p, child in zip(p_list, child_seeds):
        cov = cov_family(p)
        if bandwidth_rule == "sigma_scaled":
            H = bandwidth_scale * cov.matrix()
        else:
            H = bandwidth_scale * np.eye(p)
        rho = gaussian_kernel(H)
        prop = phi_family(p)
        pair = FunctionalPair(
            outcome_fn=lambda x: np.zeros(x.shape[0]),
            propensity_fn=prop,
            covariate_sampler=lambda n, rng, cov=cov: cov.sample(n, rng),
        )
        c = gp_delta_variance(rho, tau2_beta, pair, n_draws, child)
        rng = np.random.default_rng(child + 1)
        mean_phis.append(float(np.mean(prop(cov.sample(n_draws, rng)))))
        points.append((p, c))

    ps = np.array([q for q, _ in points], dtype=float)
    cs = np.array([c for _, c in points], dtype=float)
    if np.any(cs <= 0):
        raise NumericalDegeneracyError(
            "nonpositive variance estimate; increase n_draws"
        )
    logc = np.log(cs)
    design = np.column_stack([np.ones_like(ps), ps])
    coef, res, *_ = np.linalg.lstsq(design, logc, rcond=None)
    fitted = design @ coef
    dof = max(len(ps) - 2, 1)
    s2 = float(np.sum((logc - fitted) ** 2)) / dof
    cov_slope = s2 * np.linalg.inv(design.T @ design)[1, 1]
    return DecayCurve(
        points=tuple((int(p), float(c)) for p, c in points),
        slope=float(coef[1]),
        slope_se=float(np.sqrt(cov_slope)),
        mean_propensity=tuple(mean_phis),
    )
