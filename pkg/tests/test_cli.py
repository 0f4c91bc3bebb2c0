import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from selbias.cli import RECORD_COLUMNS, SCHEMA_VERSION, SUMMARY_COLUMNS, main


def run_cli(args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def strip_column(path, name):
    header, rows = read_csv(path)
    idx = header.index(name)
    return [
        [v for j, v in enumerate(row) if j != idx]
        for row in [header] + rows
    ]


class TestSimulate:
    def test_cardinality_and_schema(self, tmp_path):
        res = run_cli([
            "simulate", "--study", "ridge", "--setting", "naive",
            "--reps", "3", "--n", "30", "--p", "8", "--seed", "1",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        header, rows = read_csv(tmp_path / "records.csv")
        assert tuple(header) == RECORD_COLUMNS
        assert len(rows) == 3 * 3
        sheader, srows = read_csv(tmp_path / "summary.csv")
        assert tuple(sheader) == SUMMARY_COLUMNS
        assert len(srows) == 3
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["schema_version"] == SCHEMA_VERSION
        assert manifest["command"] == "simulate"
        assert manifest["base_seed"] == 1

    def test_rerun_reproduces_outputs(self, tmp_path):
        args = [
            "simulate", "--study", "ridge", "--setting", "fixed",
            "--reps", "2", "--n", "30", "--p", "8", "--method", "naive",
            "--out", None,
        ]
        d1, d2 = tmp_path / "a", tmp_path / "b"
        for d in (d1, d2):
            args[-1] = str(d)
            assert run_cli(args).exit_code == 0
        assert (d1 / "summary.csv").read_bytes() == (d2 / "summary.csv").read_bytes()
        # records.csv differs only in wall-clock timing.
        assert strip_column(d1 / "records.csv", "elapsed_s") == strip_column(
            d2 / "records.csv", "elapsed_s"
        )

    def test_sigma_x_flag_validation(self, tmp_path):
        res = run_cli([
            "simulate", "--study", "factor", "--setting", "naive",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 2
        res = run_cli([
            "simulate", "--study", "ridge", "--sigma-x", "1.0",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 2

    def test_factor_study_with_sigma_x(self, tmp_path):
        res = run_cli([
            "simulate", "--study", "factor", "--sigma-x", "1.0",
            "--reps", "2", "--n", "30", "--p", "10", "--latent-dim", "2",
            "--method", "naive", "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        _, rows = read_csv(tmp_path / "records.csv")
        assert all(r[1] == "sigma_x=1" for r in rows)

    def test_abort_exit_code(self, tmp_path, monkeypatch):
        import selbias.cli as cli
        from selbias.errors import StudyAbortError

        def boom(*a, **k):
            raise StudyAbortError("forced")

        monkeypatch.setattr(cli, "run_study", boom)
        res = CliRunner().invoke(main, [
            "simulate", "--study", "ridge", "--setting", "naive",
            "--reps", "2", "--n", "30", "--p", "8", "--out", str(tmp_path),
        ])
        assert res.exit_code == 3

    def test_numeric_failure_exit_code(self, tmp_path, monkeypatch):
        import selbias.cli as cli
        from selbias.errors import NumericalDegeneracyError

        def boom(*a, **k):
            raise NumericalDegeneracyError("forced")

        monkeypatch.setattr(cli, "run_study", boom)
        res = CliRunner().invoke(main, [
            "simulate", "--study", "ridge", "--setting", "naive",
            "--reps", "2", "--n", "30", "--p", "8", "--out", str(tmp_path),
        ])
        assert res.exit_code == 4


class TestBiasCurve:
    def test_zero_omega_gives_zero_bias(self, tmp_path):
        res = run_cli([
            "bias-curve", "--estimator", "naive", "--lam", "0.5",
            "--lam", "1.0", "--omega0", "0.0", "--n", "60",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        header, rows = read_csv(tmp_path / "bias_curve.csv")
        assert header == ["lam", "formula_bias"]
        assert [float(r[1]) for r in rows] == [0.0, 0.0]

    def test_zprior_requires_wide_regime(self, tmp_path):
        res = run_cli([
            "bias-curve", "--estimator", "zprior", "--lam", "1.0",
            "--r", "0.5", "--out", str(tmp_path),
        ])
        assert res.exit_code == 2

    def test_bad_lam_rejected(self, tmp_path):
        res = run_cli([
            "bias-curve", "--estimator", "naive", "--lam", "-1.0",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 2

    def test_with_mc_columns(self, tmp_path):
        res = run_cli([
            "bias-curve", "--estimator", "naive", "--lam", "1.0",
            "--n", "40", "--with-mc", "--mc-reps", "5",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        header, rows = read_csv(tmp_path / "bias_curve.csv")
        assert header == ["lam", "formula_bias", "mc_bias", "mc_se"]
        assert float(rows[0][3]) > 0


class TestConcentration:
    def test_sd_decreases_with_dimension(self, tmp_path):
        res = run_cli([
            "concentration", "--p", "10", "--p", "100", "--p", "1000",
            "--draws", "500", "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        _, rows = read_csv(tmp_path / "concentration_summary.csv")
        sds = [float(r[1]) for r in rows]
        preds = [float(r[2]) for r in rows]
        assert sds[0] > sds[1] > sds[2]
        for sd, pred in zip(sds, preds):
            assert abs(sd - pred) <= 0.35 * pred
        _, draws = read_csv(tmp_path / "concentration.csv")
        assert len(draws) == 3 * 500

    def test_spike_slab_prior(self, tmp_path):
        res = run_cli([
            "concentration", "--prior", "spike_slab", "--p", "50",
            "--draws", "200", "--p-incl", "0.2", "--out", str(tmp_path),
        ])
        assert res.exit_code == 0


class TestSpectra:
    def test_histogram_matches_limit(self, tmp_path):
        res = run_cli([
            "spectra", "--n", "200", "--p", "400", "--bins", "20",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        header, rows = read_csv(tmp_path / "spectrum_hist.csv")
        emp = np.array([float(r[4]) for r in rows])
        theory = np.array([float(r[5]) for r in rows])
        lo = np.array([float(r[0]) for r in rows])
        hi = np.array([float(r[2]) for r in rows])
        l1 = float(np.sum(np.abs(emp - theory) * (hi - lo)))
        assert l1 <= 0.25
        _, srows = read_csv(tmp_path / "stieltjes.csv")
        vs = [float(r[1]) for r in srows]
        assert all(a >= b for a, b in zip(vs, vs[1:]))

    def test_factor_covariance_runs(self, tmp_path):
        res = run_cli([
            "spectra", "--n", "80", "--p", "40", "--cov", "factor",
            "--sigma-x", "1.0", "--latent-dim", "3", "--bins", "10",
            "--out", str(tmp_path),
        ])
        assert res.exit_code == 0
        _, rows = read_csv(tmp_path / "spectrum_hist.csv")
        assert all(r[5] == "nan" for r in rows)


class TestReplay:
    def test_spectra_replay_byte_identical(self, tmp_path):
        src = tmp_path / "src"
        res = run_cli([
            "spectra", "--n", "100", "--p", "200", "--bins", "10",
            "--out", str(src),
        ])
        assert res.exit_code == 0
        dst = tmp_path / "dst"
        res = run_cli(["replay", str(src / "manifest.json"), "--out", str(dst)])
        assert res.exit_code == 0
        for name in ("spectrum_hist.csv", "stieltjes.csv"):
            assert (src / name).read_bytes() == (dst / name).read_bytes()

    def test_simulate_replay_matches_summary(self, tmp_path):
        src = tmp_path / "src"
        res = run_cli([
            "simulate", "--study", "ridge", "--setting", "naive",
            "--reps", "2", "--n", "30", "--p", "8", "--method", "naive",
            "--out", str(src),
        ])
        assert res.exit_code == 0
        dst = tmp_path / "dst"
        res = run_cli(["replay", str(src / "manifest.json"), "--out", str(dst)])
        assert res.exit_code == 0
        assert (src / "summary.csv").read_bytes() == (dst / "summary.csv").read_bytes()
        assert strip_column(src / "records.csv", "elapsed_s") == strip_column(
            dst / "records.csv", "elapsed_s"
        )

    def test_schema_mismatch_rejected(self, tmp_path):
        src = tmp_path / "src"
        run_cli(["spectra", "--n", "50", "--p", "60", "--bins", "5",
                 "--out", str(src)])
        meta = json.loads((src / "manifest.json").read_text())
        meta["schema_version"] = 99
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(meta))
        res = run_cli(["replay", str(bad), "--out", str(tmp_path / "dst")])
        assert res.exit_code == 2


class TestSchemaGolden:
    def test_frozen_record_columns(self):
        assert RECORD_COLUMNS == (
            "study", "setting", "method", "rep", "seed", "estimate",
            "post_sd", "ci_lo", "ci_hi", "truth", "elapsed_s", "status",
        )

    def test_frozen_summary_columns(self):
        assert SUMMARY_COLUMNS == (
            "study", "setting", "method", "n_reps", "coverage",
            "coverage_mcse", "mean_width", "mean_post_sd", "rmse",
            "rmse_mcse", "bias", "bias_mcse",
        )

    def test_version_flag(self):
        res = run_cli(["--version"])
        assert res.exit_code == 0
