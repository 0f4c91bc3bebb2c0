"""Simulation laboratory: data generators, replication engine, metrics.

Five synthetic designs (dense ridge, sparse spike-and-slab, binary
exposure with nonparametric outcome surfaces, latent factor covariates,
covariates on a nonlinear manifold) plus a random-effects generator used
by the bias-curve diagnostics.  The replication engine derives one
deterministic stream per (study, setting, replication) so results are
independent of scheduling, and the aggregator computes coverage, width,
average posterior sd, RMSE and bias with Monte Carlo standard errors.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as normal_dist

from .errors import (
    ArgumentError,
    InsufficientSampleError,
    SelbiasError,
    StudyAbortError,
)
from .estimators import (
    Dataset,
    SpikeSlabConfig,
    fit_debiased,
    fit_direct_zprior,
    fit_naive_ridge,
    fit_sas,
)
from .gp import _chol_with_jitter, _param_gp_posterior, fit_gp_method

__all__ = [
    "StudySpec",
    "ReplicationRecord",
    "SummaryRow",
    "SummaryReport",
    "STUDY_METHODS",
    "STUDY_SETTINGS",
    "dgp_ridge",
    "dgp_sas",
    "dgp_gp",
    "dgp_factor",
    "dgp_manifold",
    "dgp_rem",
    "run_study",
    "summarize",
]

STUDY_METHODS = {
    "ridge": ("direct", "debiased", "naive"),
    "sas": ("direct", "naive", "shared"),
    "gp": ("naive", "ipw", "sop", "sop_gp"),
    "factor": ("direct", "debiased", "naive"),
    "manifold": ("direct", "naive"),
}

_GP_SETTINGS = tuple(
    f"{a}-{b}" for a in ("linear", "nonlinear") for b in ("homo", "hetero")
)
STUDY_SETTINGS = {
    "ridge": ("random", "fixed", "debiased", "naive"),
    "sas": ("naive", "shared", "direct", "both"),
    "gp": _GP_SETTINGS,
}

_STUDY_DEFAULTS = {
    "ridge": (200, 1000),
    "sas": (200, 200),
    "gp": (250, 5),
    "factor": (200, 200),
    "manifold": (300, 200),
}


@dataclass(frozen=True)
class StudySpec:
    """Complete description of one simulation study."""

    study: str
    setting: str
    n_reps: int
    base_seed: int
    methods: tuple[str, ...] = ()
    n: int | None = None
    p: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.study not in STUDY_METHODS:
            raise ArgumentError(f"unknown study {self.study!r}")
        if self.study in STUDY_SETTINGS and self.setting not in STUDY_SETTINGS[self.study]:
            raise ArgumentError(
                f"unknown setting {self.setting!r} for study {self.study!r}"
            )
        if self.n_reps < 1:
            raise ArgumentError("n_reps must be positive")
        methods = tuple(self.methods) or STUDY_METHODS[self.study]
        bad = set(methods) - set(STUDY_METHODS[self.study])
        if bad:
            raise ArgumentError(f"methods {sorted(bad)} invalid for {self.study!r}")
        object.__setattr__(self, "methods", methods)
        n0, p0 = _STUDY_DEFAULTS[self.study]
        object.__setattr__(self, "n", int(self.n or n0))
        object.__setattr__(self, "p", int(self.p or p0))
        if self.n < 2 or self.p < 1:
            raise ArgumentError("n and p must be at least 2 and 1")
        if self.study in ("factor", "manifold") and "sigma_x" not in self.params:
            raise ArgumentError(f"study {self.study!r} requires params['sigma_x']")


@dataclass(frozen=True)
class ReplicationRecord:
    """One method applied to one simulated dataset."""

    study: str
    setting: str
    method: str
    rep: int
    seed: int
    estimate: float
    post_sd: float
    ci_lo: float
    ci_hi: float
    truth: float
    elapsed_s: float
    status: str

    def __post_init__(self):
        if not np.isfinite(self.truth):
            raise ArgumentError("truth must be finite")
        if self.status == "ok" and self.ci_lo > self.ci_hi:
            raise ArgumentError("interval endpoints out of order")

    @property
    def covered(self) -> bool:
        return self.ci_lo <= self.truth <= self.ci_hi


@dataclass(frozen=True)
class SummaryRow:
    study: str
    setting: str
    method: str
    n_reps: int
    coverage: float
    coverage_mcse: float
    mean_width: float
    mean_post_sd: float
    rmse: float
    rmse_mcse: float
    bias: float
    bias_mcse: float


@dataclass(frozen=True)
class SummaryReport:
    rows: tuple[SummaryRow, ...]

    def row(self, setting: str, method: str) -> SummaryRow:
        for r in self.rows:
            if r.setting == setting and r.method == method:
                return r
        raise ArgumentError(f"no summary row for ({setting!r}, {method!r})")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Data-generating processes


def dgp_ridge(setting: str, N: int, P: int, seed) -> tuple[Dataset, dict]:
    """Dense design: unit-norm flat selection vector, Gaussian outcome shift.

    Settings fix (gamma, omega) as (N(0,1), N(0,1)) for ``random``,
    (2, -1/2) for ``fixed``, (2, -2) for ``debiased``, (2, 0) for ``naive``.
    """
    if setting not in STUDY_SETTINGS["ridge"]:
        raise ArgumentError(f"unknown ridge setting {setting!r}")
    if N < 2 or P < 2:
        raise ArgumentError("N and P must be at least 2")
    rng = _rng(seed)
    if setting == "random":
        gamma = float(rng.standard_normal())
        omega = float(rng.standard_normal())
    else:
        gamma = 2.0
        omega = {"fixed": -0.5, "debiased": -2.0, "naive": 0.0}[setting]
    phi = np.full(P, 1.0 / np.sqrt(P))
    b = rng.normal(scale=np.sqrt(1.0 / P), size=P)
    beta = b + omega * phi
    X = rng.standard_normal((N, P))
    A = X @ phi + rng.standard_normal(N)
    Y = X @ beta + gamma * A + rng.standard_normal(N)
    return Dataset(X=X, A=A, Y=Y), {"gamma": gamma, "omega": omega}


def dgp_sas(scheme: str, seed, N: int = 200, P: int = 200) -> tuple[Dataset, dict]:
    """Sparse design: spike-and-slab selection vector, four outcome schemes.

    ``naive`` draws beta independently from the same spike-and-slab law;
    ``shared`` forces beta active wherever phi is; ``direct`` subtracts phi
    from the naive draw; ``both`` applies the shared rule then subtracts phi.
    """
    if scheme not in STUDY_SETTINGS["sas"]:
        raise ArgumentError(f"unknown scheme {scheme!r}")
    rng = _rng(seed)
    p_incl = 5.0 / 200.0
    phi = np.where(rng.random(P) < p_incl, rng.standard_normal(P), 0.0)
    if scheme in ("naive", "direct"):
        p_beta = np.full(P, p_incl)
    else:
        p_beta = np.where(phi != 0.0, 1.0, p_incl)
    beta = np.where(rng.random(P) < p_beta, rng.standard_normal(P), 0.0)
    if scheme in ("direct", "both"):
        beta = beta - phi
    gamma = 1.0
    X = rng.standard_normal((N, P))
    A = X @ phi + rng.standard_normal(N)
    Y = X @ beta + gamma * A + rng.standard_normal(N)
    truth = {
        "gamma": gamma,
        "support_phi": np.flatnonzero(phi),
        "support_beta": np.flatnonzero(beta),
    }
    return Dataset(X=X, A=A, Y=Y), truth


def _gp_surfaces(setting: str):
    mu_kind, tau_kind = setting.split("-")

    def mu(X):
        # g(1), g(2), g(3) = 2, -1, -4, i.e. g(x) = 5 - 3x on {1, 2, 3}
        gx = 5.0 - 3.0 * X[:, 3]
        if mu_kind == "linear":
            return 1.0 + gx + X[:, 0] * X[:, 2]
        return -6.0 + gx + 6.0 * np.abs(X[:, 2] - 1.0)

    def tau(X):
        if tau_kind == "homo":
            return np.full(X.shape[0], 3.0)
        return 1.0 + 2.0 * X[:, 1] * X[:, 4]

    return mu, tau


def dgp_gp(setting: str, N: int, P: int, seed) -> tuple[Dataset, dict]:
    """Binary exposure with confounding through the prognostic surface.

    Setting tags combine the outcome surface (``linear``/``nonlinear``)
    with the effect surface (``homo``/``hetero``).  The propensity is
    0.8 Phi(3 mu(x)/s - 0.5 x1) + 0.1 with s the sample sd of mu over the
    generated design; the frozen s makes the attached oracle evaluable at
    new points.  The recorded truth is the sample average effect.
    """
    if setting not in _GP_SETTINGS:
        raise ArgumentError(f"unknown gp setting {setting!r}")
    if P < 5:
        raise ArgumentError("gp design requires P >= 5")
    rng = _rng(seed)
    X = rng.standard_normal((N, P))
    X[:, 1] = rng.random(N) < 0.5
    X[:, 3] = rng.integers(1, 4, size=N)
    mu, tau = _gp_surfaces(setting)
    mu_x = mu(X)
    s = float(np.std(mu_x))

    def propensity(Xnew):
        Xnew = np.atleast_2d(np.asarray(Xnew, dtype=float))
        z = 3.0 * mu(Xnew) / s - 0.5 * Xnew[:, 0]
        return 0.8 * normal_dist.cdf(z) + 0.1

    phi = propensity(X)
    A = (rng.random(N) < phi).astype(float)
    tau_x = tau(X)
    Y = mu_x + A * tau_x + rng.standard_normal(N)
    truth = {"gamma": float(np.mean(tau_x))}
    return Dataset(X=X, A=A, Y=Y, propensity_oracle=propensity), truth


def dgp_factor(
    sigma_x: float, N: int, P: int, L: int, seed, loadings=None
) -> tuple[Dataset, dict]:
    """Latent factor covariates with coefficients matching E(sum eta | X).

    ``loadings`` fixes the P x L loading matrix instead of drawing it,
    which pins down the coefficient formula for hand checks.
    """
    if sigma_x < 0:
        raise ArgumentError("sigma_x must be nonnegative")
    if L > P:
        raise ArgumentError("L must not exceed P")
    rng = _rng(seed)
    if loadings is not None:
        lam = np.asarray(loadings, dtype=float)
        if lam.shape != (P, L):
            raise ArgumentError("loadings shape must be (P, L)")
    else:
        lam = rng.standard_normal((P, L))
    M = lam @ lam.T
    ones = lam @ np.ones(L)
    rank = P
    if sigma_x == 0.0:
        coef = np.linalg.pinv(M) @ ones
        rank = int(np.linalg.matrix_rank(M))
    else:
        coef = np.linalg.solve(M + sigma_x**2 * np.eye(P), ones)
    beta = phi = coef
    gamma = 1.0
    eta = rng.standard_normal((N, L))
    X = eta @ lam.T + sigma_x * rng.standard_normal((N, P))
    A = X @ phi + rng.standard_normal(N)
    Y = X @ beta + gamma * A + rng.standard_normal(N)
    truth = {"gamma": gamma, "beta": beta, "rank": rank}
    return Dataset(X=X, A=A, Y=Y), truth


def _gp_draws(gram: np.ndarray, rng, n_draws: int) -> np.ndarray:
    L, _ = _chol_with_jitter(gram)
    return (L @ rng.standard_normal((gram.shape[0], n_draws))).T


def dgp_manifold(P: int, sigma_x: float, N: int, seed) -> tuple[Dataset, dict]:
    """Covariates near a one-dimensional nonlinear manifold.

    Each covariate is an independent Gaussian-process path over a latent
    scalar, plus isotropic noise of scale sigma_x; columns are then
    standardized to unit sample sd.  Exposure and outcome surfaces are
    GP draws over the realized design points.
    """
    if N < 20:
        raise ArgumentError("manifold design requires N >= 20")
    if sigma_x < 0:
        raise ArgumentError("sigma_x must be nonnegative")
    rng = _rng(seed)
    eta = rng.standard_normal(N)
    d_eta = (eta[:, None] - eta[None, :]) ** 2
    paths = _gp_draws(np.exp(-d_eta), rng, P).T
    X = paths + sigma_x * rng.standard_normal((N, P))
    X = X / X.std(axis=0, ddof=1)
    sq = np.einsum("ij,ij->i", X, X)
    d_x = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    r_a, r_star = _gp_draws(np.exp(-d_x), rng, 2)
    gamma = 1.0
    A = r_a + rng.standard_normal(N)
    Y = r_star + r_a + gamma * A + rng.standard_normal(N)
    return Dataset(X=X, A=A, Y=Y), {"gamma": gamma}


def dgp_rem(
    N: int, P: int, tau2: float, omega0: float, gamma0: float, seed
) -> tuple[Dataset, dict]:
    """Random-effects generator behind the asymptotic bias checks."""
    if tau2 <= 0:
        raise ArgumentError("tau2 must be positive")
    rng = _rng(seed)
    phi = rng.normal(scale=np.sqrt(tau2 / P), size=P)
    beta = omega0 * phi + rng.normal(scale=np.sqrt(tau2 / P), size=P)
    X = rng.standard_normal((N, P))
    A = X @ phi + rng.standard_normal(N)
    Y = X @ beta + gamma0 * A + rng.standard_normal(N)
    truth = {"gamma": gamma0, "omega0": omega0, "phi": phi, "beta": beta}
    return Dataset(X=X, A=A, Y=Y), truth


# ---------------------------------------------------------------------------
# Replication engine


def _digest(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "big")


def _make_data(spec: StudySpec, seed) -> tuple[Dataset, float]:
    if spec.study == "ridge":
        data, truth = dgp_ridge(spec.setting, spec.n, spec.p, seed)
    elif spec.study == "sas":
        data, truth = dgp_sas(spec.setting, seed, spec.n, spec.p)
    elif spec.study == "gp":
        data, truth = dgp_gp(spec.setting, spec.n, spec.p, seed)
    elif spec.study == "factor":
        data, truth = dgp_factor(
            spec.params["sigma_x"], spec.n, spec.p, int(spec.params.get("L", 5)), seed
        )
    else:
        data, truth = dgp_manifold(spec.p, spec.params["sigma_x"], spec.n, seed)
    return data, float(truth["gamma"])


def _fit_manifold_method(data: Dataset, method: str, level: float):
    # Known-kernel fits: outcome surface prior 2 exp(-d^2), unit noise.
    sq = np.einsum("ij,ij->i", data.X, data.X)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * data.X @ data.X.T, 0.0)
    K = np.exp(-D)
    if method == "naive":
        F = data.A[:, None]
    else:
        L, _ = _chol_with_jitter(K + np.eye(data.n))
        smooth = K @ np.linalg.solve(L.T, np.linalg.solve(L, data.A))
        F = np.column_stack([data.A, smooth])
    mean, cov = _param_gp_posterior(F, data.Y, 2.0 * K, 1.0, 100.0)
    est = float(mean[0])
    sd = float(np.sqrt(cov[0, 0]))
    z = normal_dist.ppf(0.5 * (1 + level))
    return est, sd, (est - z * sd, est + z * sd)


def _apply_method(
    spec: StudySpec, data: Dataset, method: str, seed_int: int
) -> tuple[float, float, tuple[float, float]]:
    level = float(spec.params.get("level", 0.95))
    if spec.study in ("ridge", "factor"):
        lam = float(spec.params.get("lam", spec.p / spec.n))
        if method == "naive":
            res = fit_naive_ridge(data, lam, level=level)
        elif method == "direct":
            res = fit_direct_zprior(data, lam, level=level)
        else:
            res = fit_debiased(data, lam, level=level)
    elif spec.study == "sas":
        config = SpikeSlabConfig(
            inclusion_prior=5.0 / 200.0,
            slab_var=1.0,
            noise_var=1.0,
            iterations=int(spec.params.get("iterations", 2000)),
            burn_in=int(spec.params.get("burn_in", 500)),
            update_noise=bool(spec.params.get("update_noise", True)),
        )
        res = fit_sas(data, method, config, seed_int, level=level)
    elif spec.study == "gp":
        res = fit_gp_method(data, method, level=level)
    else:
        return _fit_manifold_method(data, method, level)
    return res.estimate, res.posterior_sd, res.interval


def _run_replication(spec: StudySpec, rep: int) -> list[ReplicationRecord]:
    root = np.random.SeedSequence(
        [spec.base_seed, _digest(spec.study), _digest(spec.setting), rep]
    )
    children = root.spawn(len(spec.methods) + 1)
    data, truth = _make_data(spec, children[0])
    out = []
    for method, child in zip(spec.methods, children[1:]):
        seed_int = int(child.generate_state(1, np.uint64)[0])
        t0 = time.perf_counter()
        try:
            est, sd, ci = _apply_method(spec, data, method, seed_int)
            status = "ok"
        except (SelbiasError, np.linalg.LinAlgError) as exc:
            est = sd = np.nan
            ci = (np.nan, np.nan)
            status = f"error:{type(exc).__name__}"
        out.append(
            ReplicationRecord(
                study=spec.study,
                setting=spec.setting,
                method=method,
                rep=rep,
                seed=seed_int,
                estimate=est,
                post_sd=sd,
                ci_lo=ci[0],
                ci_hi=ci[1],
                truth=truth,
                elapsed_s=time.perf_counter() - t0,
                status=status,
            )
        )
    return out


def run_study(spec: StudySpec, workers: int = 1) -> list[ReplicationRecord]:
    """All replications of a study; output is independent of ``workers``."""
    if workers < 1:
        raise ArgumentError("workers must be positive")
    reps = range(spec.n_reps)
    if workers == 1:
        batches = [_run_replication(spec, r) for r in reps]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda r: _run_replication(spec, r), reps))
    records = [rec for batch in batches for rec in batch]
    records.sort(key=lambda r: (r.setting, r.method, r.rep))
    n_fail = sum(r.status != "ok" for r in records)
    if n_fail > 0.1 * len(records):
        raise StudyAbortError(
            f"{n_fail}/{len(records)} replications failed; aborting study"
        )
    return records


def summarize(records) -> SummaryReport:
    """Per (setting, method) coverage/width/sd/RMSE/bias with MC errors."""
    records = list(records)
    if not records:
        raise InsufficientSampleError("no records to summarize")
    keys = []
    for r in records:
        key = (r.study, r.setting, r.method)
        if key not in keys:
            keys.append(key)
    rows = []
    for key in keys:
        group = [r for r in records if (r.study, r.setting, r.method) == key]
        ok = [r for r in group if r.status == "ok"]
        if not ok:
            raise InsufficientSampleError(f"no successful records for {key}")
        n = len(ok)
        covered = np.array([r.covered for r in ok], dtype=float)
        cov = float(covered.mean())
        widths = np.array([r.ci_hi - r.ci_lo for r in ok])
        sds = np.array([r.post_sd for r in ok])
        err = np.array([r.estimate - r.truth for r in ok])
        rmse = float(np.sqrt(np.mean(err**2)))
        if n > 1:
            bias_mcse = float(np.std(err, ddof=1) / np.sqrt(n))
            rmse_mcse = (
                float(np.std(err**2, ddof=1) / (2.0 * rmse * np.sqrt(n)))
                if rmse > 0
                else 0.0
            )
        else:
            bias_mcse = rmse_mcse = 0.0
        rows.append(
            SummaryRow(
                study=key[0],
                setting=key[1],
                method=key[2],
                n_reps=n,
                coverage=cov,
                coverage_mcse=float(np.sqrt(cov * (1.0 - cov) / n)),
                mean_width=float(widths.mean()),
                mean_post_sd=float(sds.mean()),
                rmse=rmse,
                rmse_mcse=rmse_mcse,
                bias=float(err.mean()),
                bias_mcse=bias_mcse,
            )
        )
    return SummaryReport(rows=tuple(rows))
