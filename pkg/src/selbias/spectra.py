"""Random-matrix calculators for ridge-regression bias analysis.

Empirical spectra of sample covariance matrices, their Stieltjes
transforms and power moments, the Marchenko-Pastur density, and the
closed-form asymptotic bias of the naive-ridge and two-stage Z-prior
estimators of a treatment coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgumentError,
    NumericalDegeneracyError,
    UnsupportedRegimeError,
)

__all__ = [
    "SpectrumSummary",
    "BiasInputs",
    "empirical_spectrum",
    "spectrum_pair",
    "stieltjes",
    "psi_moment",
    "psi_moment_recursive",
    "mp_support",
    "mp_density",
    "naive_ridge_bias",
    "zprior_ridge_bias",
    "delta_limit",
]

# Negative eigenvalues above this threshold are treated as round-off and
# clamped to zero; anything below is a genuine PSD violation.
_EIG_CLAMP = -1e-10


@dataclass(frozen=True)
class SpectrumSummary:
    """Eigenvalue multiset of a sample covariance with cached moments."""

    eigenvalues: np.ndarray
    dim: int
    mean_eig: float
    mean_sq_eig: float

    @classmethod
    def from_eigenvalues(cls, eigenvalues) -> "SpectrumSummary":
        eigs = np.asarray(eigenvalues, dtype=float).ravel()
        if eigs.size == 0:
            raise ArgumentError("spectrum must contain at least one eigenvalue")
        if np.any(eigs < _EIG_CLAMP):
            raise ArgumentError(
                f"eigenvalue below clamp tolerance: min={eigs.min():g}"
            )
        eigs = np.where(eigs < 0.0, 0.0, eigs)
        eigs = np.sort(eigs)[::-1].copy()
        eigs.setflags(write=False)
        return cls(
            eigenvalues=eigs,
            dim=int(eigs.size),
            mean_eig=float(eigs.mean()),
            mean_sq_eig=float(np.mean(eigs**2)),
        )

    def __post_init__(self):
        eigs = self.eigenvalues
        if self.dim != eigs.size:
            raise ArgumentError("dim does not match number of eigenvalues")
        for cached, fresh in (
            (self.mean_eig, float(eigs.mean())),
            (self.mean_sq_eig, float(np.mean(eigs**2))),
        ):
            scale = max(abs(fresh), 1.0)
            if abs(cached - fresh) > 1e-12 * scale:
                raise ArgumentError("cached spectral moments are inconsistent")


@dataclass(frozen=True)
class BiasInputs:
    """Scalar inputs to the asymptotic bias formulas.

    ``eta`` is the effective stage-one signal penalty r / tau2.  When both
    ``aspect_ratio`` and ``tau2`` are supplied, ``eta`` may be omitted and
    is filled in; if all three are given they must be consistent.
    """

    ridge_penalty: float
    omega0: float
    eta: float | None = None
    aspect_ratio: float | None = None
    tau2: float | None = None

    def __post_init__(self):
        if self.ridge_penalty <= 0:
            raise ArgumentError("ridge_penalty must be positive")
        eta = self.eta
        if self.aspect_ratio is not None and self.tau2 is not None:
            if self.aspect_ratio <= 0 or self.tau2 <= 0:
                raise ArgumentError("aspect_ratio and tau2 must be positive")
            implied = self.aspect_ratio / self.tau2
            if eta is None:
                eta = implied
            elif abs(eta - implied) > 1e-12 * max(abs(implied), 1.0):
                raise ArgumentError(
                    f"eta={eta:g} inconsistent with r/tau2={implied:g}"
                )
        if eta is None:
            raise ArgumentError("eta or (aspect_ratio, tau2) must be given")
        if eta <= 0:
            raise ArgumentError("eta must be positive")
        object.__setattr__(self, "eta", float(eta))


def empirical_spectrum(S) -> SpectrumSummary:
    """All eigenvalues of a symmetric PSD matrix, sorted nonincreasing."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {S.shape}")
    scale = max(float(np.abs(S).max()), 1.0)
    if np.abs(S - S.T).max() > 1e-8 * scale:
        raise ArgumentError("matrix is not symmetric to 1e-8 relative")
    eigs = np.linalg.eigvalsh(0.5 * (S + S.T))
    return SpectrumSummary.from_eigenvalues(eigs)


def spectrum_pair(X) -> tuple[SpectrumSummary, SpectrumSummary]:
    """Spectra of X X^T / N and X^T X / N from a single data matrix.

    The second spectrum retains its P - rank(X) exact zeros, which carry
    the point mass at zero of the companion distribution when P > N.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ArgumentError("X must be a matrix")
    n, p = X.shape
    if n <= p:
        eigs_f = np.linalg.eigvalsh(X @ X.T / n)
        eigs_g = np.concatenate([eigs_f, np.zeros(p - n)])
    else:
        eigs_g = np.linalg.eigvalsh(X.T @ X / n)
        eigs_f = np.concatenate([eigs_g, np.zeros(n - p)])
    return (
        SpectrumSummary.from_eigenvalues(eigs_f),
        SpectrumSummary.from_eigenvalues(eigs_g),
    )


def stieltjes(spec: SpectrumSummary, lam: float) -> float:
    """v(-lam) = (1/dim) sum 1/(x_i + lam) for lam > 0."""
    if lam <= 0:
        raise ArgumentError("lam must be positive")
    return float(np.mean(1.0 / (spec.eigenvalues + lam)))


def psi_moment(spec: SpectrumSummary, j: int, k: int, lam: float) -> float:
    """psi_jk = (1/dim) sum x_i^k / (x_i + lam)^j.

    ``spec`` should be the companion spectrum (X^T X / N) including its
    exact zeros when P > N.
    """
    if j < 1:
        raise ArgumentError("j must be >= 1")
    if k < 0:
        raise ArgumentError("k must be >= 0")
    if lam <= 0:
        raise ArgumentError("lam must be positive")
    x = spec.eigenvalues
    # 0^0 = 1 for the k = 0 case with zero eigenvalues.
    num = x**k if k > 0 else np.ones_like(x)
    return float(np.mean(num / (x + lam) ** j))


def psi_moment_recursive(spec: SpectrumSummary, j: int, k: int, lam: float) -> float:
    """psi_jk via psi_jk = psi_{j-1,k-1} - lam * psi_{j,k-1}, seeded at k=0.

    The k = 0 seeds are empirical sums; j = 0 terms arising in the
    recursion are plain moments of the spectrum.  Used to cross-check
    :func:`psi_moment`.
    """
    if j < 0 or k < 0:
        raise ArgumentError("j and k must be nonnegative")
    if lam <= 0:
        raise ArgumentError("lam must be positive")
    x = spec.eigenvalues
    if j == 0:
        return float(np.mean(x**k)) if k > 0 else 1.0
    if k == 0:
        return float(np.mean(1.0 / (x + lam) ** j))
    return psi_moment_recursive(spec, j - 1, k - 1, lam) - lam * psi_moment_recursive(
        spec, j, k - 1, lam
    )


def mp_support(r: float) -> tuple[float, float]:
    """Support endpoints of the bulk of the spectrum of X X^T / N at P/N = r."""
    if r < 1:
        raise UnsupportedRegimeError("mp_density requires r >= 1")
    s = np.sqrt(r)
    return ((1.0 - s) ** 2, (1.0 + s) ** 2)


def mp_density(r: float, x) -> np.ndarray | float:
    """Limiting density of the eigenvalues of X X^T / N, Sigma = I, P/N = r >= 1.

    q(x) = sqrt((b - x)(x - a)) / (2 pi x) on (a, b) with
    (a, b) = (1 -+ sqrt(r))^2, and zero outside.  Integrates to one and has
    mean r, matching the N nonzero sample eigenvalues.
    """
    a, b = mp_support(r)
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    inside = (x_arr > a) & (x_arr < b)
    xi = x_arr[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2.0 * np.pi * xi)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


def naive_ridge_bias(spec_f: SpectrumSummary, inputs: BiasInputs) -> float:
    """Asymptotic bias of the flat-gamma / ridged-beta estimator.

    bias = omega0 * (1 - lam v(-lam)) / (1 - (lam - eta) v(-lam)) with v the
    Stieltjes transform of the spectrum of X X^T / N.
    """
    lam = inputs.ridge_penalty
    eta = inputs.eta
    v = stieltjes(spec_f, lam)
    den = 1.0 - (lam - eta) * v
    if abs(den) <= 1e-12:
        raise NumericalDegeneracyError("naive_ridge_bias denominator near zero")
    return inputs.omega0 * (1.0 - lam * v) / den


def zprior_ridge_bias(spec_g: SpectrumSummary, inputs: BiasInputs) -> float:
    """Asymptotic bias of the two-stage Z-prior ridge estimator.

    The clever covariate is built from a stage-one ridge fit of the
    exposure whose penalty matches the outcome penalty ``lam``; ``spec_g``
    is the companion spectrum (X^T X / N) including its zeros.  Requires
    the overparameterized regime r > 1 and lam >= 1e-3 (the curve is
    ill-behaved near zero).
    """
    if inputs.aspect_ratio is None:
        raise ArgumentError("zprior_ridge_bias requires aspect_ratio")
    r = inputs.aspect_ratio
    if r <= 1:
        raise UnsupportedRegimeError("zprior_ridge_bias requires r > 1")
    lam = inputs.ridge_penalty
    if lam < 1e-3:
        raise ArgumentError("zprior_ridge_bias requires lam >= 1e-3")
    eta = inputs.eta
    p10 = psi_moment(spec_g, 1, 0, lam)
    p11 = psi_moment(spec_g, 1, 1, lam)
    p21 = psi_moment(spec_g, 2, 1, lam)
    p22 = psi_moment(spec_g, 2, 2, lam)
    p32 = psi_moment(spec_g, 3, 2, lam)
    p33 = psi_moment(spec_g, 3, 3, lam)
    cross = p21 + p22 / eta
    lower = p32 + p33 / eta
    num = inputs.omega0 * lam * (p11 / eta - (p22 / eta) * cross / lower)
    den = (1.0 - r) / r + lam * (p10 + p11 / eta - cross**2 / lower)
    if abs(den) <= 1e-12:
        raise NumericalDegeneracyError("zprior_ridge_bias denominator near zero")
    return num / den


def delta_limit(omega0: float, tau2: float, mean_eig: float) -> float:
    """Limiting selection bias omega0 * tau2 lam~ / (1 + tau2 lam~)."""
    if tau2 <= 0 or mean_eig <= 0:
        raise ArgumentError("tau2 and mean_eig must be positive")
    t = tau2 * mean_eig
    return omega0 * t / (1.0 + t)
