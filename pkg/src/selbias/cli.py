"""Command-line interface: studies, diagnostics, spectral tools.

Every command writes CSV outputs plus a ``manifest.json`` capturing the
fully resolved configuration, base seed and version tags, so any run can
be replayed byte-identically.  Floats are serialized with 17 significant
digits; files are written to a temporary name and atomically renamed.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__ as ARTIFACT_VERSION
from .errors import ArgumentError, SelbiasError, StudyAbortError
from .estimators import fit_direct_zprior, fit_naive_ridge
from .selection_bias import CovarianceModel, PriorSpec, clt_scale, prior_delta_draws
from .simlab import (
    STUDY_SETTINGS,
    StudySpec,
    dgp_factor,
    dgp_rem,
    run_study,
    summarize,
)
from .spectra import (
    BiasInputs,
    SpectrumSummary,
    mp_density,
    mp_support,
    naive_ridge_bias,
    spectrum_pair,
    stieltjes,
    zprior_ridge_bias,
)

SCHEMA_VERSION = 1

RECORD_COLUMNS = (
    "study", "setting", "method", "rep", "seed", "estimate", "post_sd",
    "ci_lo", "ci_hi", "truth", "elapsed_s", "status",
)
SUMMARY_COLUMNS = (
    "study", "setting", "method", "n_reps", "coverage", "coverage_mcse",
    "mean_width", "mean_post_sd", "rmse", "rmse_mcse", "bias", "bias_mcse",
)


def _fmt(value) -> str:
    if isinstance(value, float) or isinstance(value, np.floating):
        return f"{float(value):.17g}"
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    manifest = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "command": command,
        "config": config,
        "base_seed": config.get("seed"),
        "artifact_version": ARTIFACT_VERSION,
        "schema_version": SCHEMA_VERSION,
        "numpy_version": np.__version__,
        "python_version": sys.version.split()[0],
    }
    tmp = out_dir / "manifest.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out_dir / "manifest.json")


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StudyAbortError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
        except ArgumentError as exc:
            raise click.UsageError(str(exc)) from exc
        except (SelbiasError, np.linalg.LinAlgError) as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(4)

    return wrapper


@click.group()
@click.version_option(version=ARTIFACT_VERSION)
def main():
    """Selection-bias diagnostics and simulation studies."""


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# simulate


def _run_simulate(config: dict, out: Path) -> None:
    records = []
    for setting in config["settings"]:
        params = {}
        if config["study"] in ("factor", "manifold"):
            params["sigma_x"] = float(setting.split("=", 1)[1])
            if config.get("latent_dim") is not None:
                params["L"] = config["latent_dim"]
        if config.get("lam") is not None:
            params["lam"] = config["lam"]
        if config.get("iterations") is not None:
            params["iterations"] = config["iterations"]
        spec = StudySpec(
            study=config["study"],
            setting=setting,
            n_reps=config["reps"],
            base_seed=config["seed"],
            methods=tuple(config["methods"]),
            n=config.get("n"),
            p=config.get("p"),
            params=params,
        )
        records.extend(run_study(spec, workers=config["workers"]))
    report = summarize(records)
    _write_csv(
        out / "records.csv",
        RECORD_COLUMNS,
        [[getattr(r, c) for c in RECORD_COLUMNS] for r in records],
    )
    _write_csv(
        out / "summary.csv",
        SUMMARY_COLUMNS,
        [[getattr(r, c) for c in SUMMARY_COLUMNS] for r in report.rows],
    )


@main.command()
@click.option("--study", required=True,
              type=click.Choice(["ridge", "sas", "gp", "factor", "manifold"]))
@click.option("--setting", "settings", multiple=True,
              help="Setting tag; repeatable. For factor/manifold use --sigma-x.")
@click.option("--sigma-x", "sigma_xs", multiple=True, type=float,
              help="Noise scale grid for factor/manifold studies; repeatable.")
@click.option("--reps", default=10, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--n", type=int, default=None)
@click.option("--p", type=int, default=None)
@click.option("--method", "methods", multiple=True,
              help="Method tag; repeatable; defaults to all for the study.")
@click.option("--lam", type=float, default=None,
              help="Ridge penalty override for ridge/factor studies.")
@click.option("--latent-dim", type=int, default=None)
@click.option("--iterations", type=int, default=None,
              help="Gibbs iterations for the sparse study.")
@click.option("--workers", default=1, show_default=True, type=int)
@click.option("--out", default=".", show_default=True)
@_exit_codes
def simulate(study, settings, sigma_xs, reps, seed, n, p, methods, lam,
             latent_dim, iterations, workers, out):
    """Run a simulation study and write records.csv / summary.csv."""
    if study in ("factor", "manifold"):
        if settings:
            raise click.UsageError(f"use --sigma-x for the {study} study")
        if not sigma_xs:
            raise click.UsageError(f"--sigma-x is required for the {study} study")
        settings = tuple(f"sigma_x={s:g}" for s in sigma_xs)
    else:
        if sigma_xs:
            raise click.UsageError(f"--sigma-x is not valid for the {study} study")
        settings = settings or STUDY_SETTINGS[study]
    from .simlab import STUDY_METHODS

    config = {
        "study": study,
        "settings": list(settings),
        "reps": reps,
        "seed": seed,
        "n": n,
        "p": p,
        "methods": list(methods or STUDY_METHODS[study]),
        "lam": lam,
        "latent_dim": latent_dim,
        "iterations": iterations,
        "workers": workers,
        "out": str(out),
    }
    out = _out_dir(out)
    _run_simulate(config, out)
    _write_manifest(out, "simulate", config)


# ---------------------------------------------------------------------------
# bias-curve


def _run_bias_curve(config: dict, out: Path) -> None:
    r = config["r"]
    eta = config["eta"]
    omega0 = config["omega0"]
    n = config["n"]
    p = int(round(r * n))
    estimator = config["estimator"]
    if estimator == "zprior" and r <= 1:
        raise ArgumentError("zprior bias curve requires aspect ratio r > 1")
    rng = np.random.default_rng(config["seed"])
    spec_f, spec_g = spectrum_pair(rng.standard_normal((n, p)))
    tau2 = r / eta
    columns = ["lam", "formula_bias"]
    if config["with_mc"]:
        columns += ["mc_bias", "mc_se"]
    rows = []
    for lam in config["lambdas"]:
        inputs = BiasInputs(
            ridge_penalty=lam, omega0=omega0, aspect_ratio=r, tau2=tau2
        )
        if estimator == "naive":
            formula = naive_ridge_bias(spec_f, inputs)
        else:
            formula = zprior_ridge_bias(spec_g, inputs)
        row = [lam, formula]
        if config["with_mc"]:
            errs = []
            for rep in range(config["mc_reps"]):
                data, truth = dgp_rem(
                    n, p, tau2, omega0, 0.0,
                    np.random.SeedSequence([config["seed"], rep]),
                )
                if estimator == "naive":
                    fit = fit_naive_ridge(data, lam)
                else:
                    fit = fit_direct_zprior(data, lam, stage1="matched")
                errs.append(fit.estimate - truth["gamma"])
            errs = np.asarray(errs)
            row += [float(errs.mean()),
                    float(errs.std(ddof=1) / np.sqrt(len(errs)))]
        rows.append(row)
    _write_csv(out / "bias_curve.csv", columns, rows)


@main.command("bias-curve")
@click.option("--estimator", required=True, type=click.Choice(["naive", "zprior"]))
@click.option("--lam", "lambdas", multiple=True, type=float, required=True)
@click.option("--r", default=2.0, show_default=True, type=float)
@click.option("--eta", default=2.0, show_default=True, type=float,
              help="Stage-one signal penalty r / tau2.")
@click.option("--omega0", default=1.0, show_default=True, type=float)
@click.option("--n", default=150, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--with-mc", is_flag=True, default=False)
@click.option("--mc-reps", default=200, show_default=True, type=int)
@click.option("--out", default=".", show_default=True)
@_exit_codes
def bias_curve(estimator, lambdas, r, eta, omega0, n, seed, with_mc, mc_reps, out):
    """Asymptotic ridge-bias curves, optionally checked by Monte Carlo."""
    if any(lam <= 0 for lam in lambdas):
        raise click.UsageError("all --lam values must be positive")
    if r <= 0 or eta <= 0:
        raise click.UsageError("--r and --eta must be positive")
    config = {
        "estimator": estimator,
        "lambdas": sorted(lambdas),
        "r": r,
        "eta": eta,
        "omega0": omega0,
        "n": n,
        "seed": seed,
        "with_mc": with_mc,
        "mc_reps": mc_reps,
        "out": str(out),
    }
    out = _out_dir(out)
    _run_bias_curve(config, out)
    _write_manifest(out, "bias-curve", config)


# ---------------------------------------------------------------------------
# concentration


def _run_concentration(config: dict, out: Path) -> None:
    if config["prior"] == "ridge":
        prior = PriorSpec.ridge(config["tau2_beta"], config["tau2_phi"])
    else:
        prior = PriorSpec.spike_slab(
            p_beta=config["p_incl"],
            p_phi=config["p_incl"],
            tau2_beta=config["tau2_beta"],
            tau2_phi=config["tau2_phi"],
        )
    a = config["a"]
    draw_rows = []
    summary_rows = []
    for p in config["p_list"]:
        cov = CovarianceModel.isotropic(1.0, p)
        draws = prior_delta_draws(
            prior, cov, a, config["draws"],
            np.random.SeedSequence([config["seed"], p]),
        )
        for i, d in enumerate(draws):
            draw_rows.append([p, i, d])
        sd = float(np.std(draws, ddof=1))
        if config["prior"] == "ridge":
            spec = SpectrumSummary.from_eigenvalues(np.ones(p))
            predicted = float(np.sqrt(clt_scale(a, prior, spec)))
        else:
            predicted = float("nan")
        summary_rows.append([p, sd, predicted])
    _write_csv(out / "concentration.csv", ["p", "draw", "delta"], draw_rows)
    _write_csv(
        out / "concentration_summary.csv",
        ["p", "sample_sd", "predicted_sd"],
        summary_rows,
    )


@main.command()
@click.option("--prior", default="ridge", show_default=True,
              type=click.Choice(["ridge", "spike_slab"]))
@click.option("--p", "p_list", multiple=True, type=int, required=True)
@click.option("--draws", default=2000, show_default=True, type=int)
@click.option("--a", default=1.0, show_default=True, type=float)
@click.option("--tau2-beta", default=1.0, show_default=True, type=float)
@click.option("--tau2-phi", default=1.0, show_default=True, type=float)
@click.option("--p-incl", default=0.1, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=".", show_default=True)
@_exit_codes
def concentration(prior, p_list, draws, a, tau2_beta, tau2_phi, p_incl, seed, out):
    """Prior draws of the selection bias across dimensions."""
    if any(p < 1 for p in p_list):
        raise click.UsageError("all --p values must be positive")
    config = {
        "prior": prior,
        "p_list": sorted(p_list),
        "draws": draws,
        "a": a,
        "tau2_beta": tau2_beta,
        "tau2_phi": tau2_phi,
        "p_incl": p_incl,
        "seed": seed,
        "out": str(out),
    }
    out = _out_dir(out)
    _run_concentration(config, out)
    _write_manifest(out, "concentration", config)


# ---------------------------------------------------------------------------
# spectra


def _run_spectra(config: dict, out: Path) -> None:
    n = config["n"]
    p = config["p"]
    r = p / n
    rng = np.random.default_rng(config["seed"])
    if config["cov"] == "identity":
        X = rng.standard_normal((n, p))
    else:
        data, _ = dgp_factor(
            config["sigma_x"], n, p, config["latent_dim"],
            np.random.SeedSequence([config["seed"]]),
        )
        X = data.X
    spec_f, _ = spectrum_pair(X)
    eigs = spec_f.eigenvalues
    if config["cov"] == "identity" and r >= 1:
        lo, hi = mp_support(r)
    else:
        lo, hi = float(eigs.min()), float(eigs.max())
    edges = np.linspace(lo, hi, config["bins"] + 1)
    counts, _ = np.histogram(eigs, bins=edges)
    widths = np.diff(edges)
    emp = counts / (counts.sum() * widths)
    mids = 0.5 * (edges[:-1] + edges[1:])
    if config["cov"] == "identity" and r >= 1:
        theory = np.asarray(mp_density(r, mids))
    else:
        theory = np.full(mids.size, np.nan)
    _write_csv(
        out / "spectrum_hist.csv",
        ["bin_lo", "bin_mid", "bin_hi", "count", "empirical_density", "mp_density"],
        [
            [edges[i], mids[i], edges[i + 1], int(counts[i]), emp[i], theory[i]]
            for i in range(mids.size)
        ],
    )
    _write_csv(
        out / "stieltjes.csv",
        ["lam", "v"],
        [[lam, stieltjes(spec_f, lam)] for lam in config["lambdas"]],
    )


@main.command()
@click.option("--n", default=500, show_default=True, type=int)
@click.option("--p", default=1000, show_default=True, type=int)
@click.option("--cov", default="identity", show_default=True,
              type=click.Choice(["identity", "factor"]))
@click.option("--sigma-x", default=1.0, show_default=True, type=float)
@click.option("--latent-dim", default=5, show_default=True, type=int)
@click.option("--bins", default=50, show_default=True, type=int)
@click.option("--lam", "lambdas", multiple=True, type=float,
              default=(1e-3, 1e-2, 1e-1, 1.0, 10.0), show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=".", show_default=True)
@_exit_codes
def spectra(n, p, cov, sigma_x, latent_dim, bins, lambdas, seed, out):
    """Empirical spectrum histogram and Stieltjes-transform curve."""
    if n < 2 or p < 2 or bins < 1:
        raise click.UsageError("--n, --p and --bins must be at least 2, 2, 1")
    if any(lam <= 0 for lam in lambdas):
        raise click.UsageError("all --lam values must be positive")
    config = {
        "n": n,
        "p": p,
        "cov": cov,
        "sigma_x": sigma_x,
        "latent_dim": latent_dim,
        "bins": bins,
        "lambdas": sorted(lambdas),
        "seed": seed,
        "out": str(out),
    }
    out = _out_dir(out)
    _run_spectra(config, out)
    _write_manifest(out, "spectra", config)


# ---------------------------------------------------------------------------
# replay


_RUNNERS = {
    "simulate": _run_simulate,
    "bias-curve": _run_bias_curve,
    "concentration": _run_concentration,
    "spectra": _run_spectra,
}


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default=None,
              help="Output directory; defaults to the manifest's directory.")
@_exit_codes
def replay(manifest, out):
    """Re-run a command from its manifest; outputs are byte-identical."""
    with open(manifest, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise click.UsageError(
            f"manifest schema {meta.get('schema_version')} != {SCHEMA_VERSION}"
        )
    command = meta["command"]
    if command not in _RUNNERS:
        raise click.UsageError(f"unknown command {command!r} in manifest")
    config = dict(meta["config"])
    out_dir = _out_dir(out if out is not None else str(Path(manifest).parent))
    config["out"] = str(out_dir)
    _RUNNERS[command](config, out_dir)
    _write_manifest(out_dir, command, config)


if __name__ == "__main__":
    main()
