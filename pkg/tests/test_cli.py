"""Configuration parsing and CLI dispatch."""

import json
import os

import numpy as np
import pytest

from cartwave.cli import main
from cartwave.config import parse_config_text
from cartwave.errors import InvalidInputError
from cartwave.haar import CoeffArray, GridFunction, forward_haar


class TestConfig:
    def test_minimal_defaults_resolved(self):
        cfg = parse_config_text('{"seed": 3, "experiment": {"name": "rates"}}')
        assert cfg.seed == 3
        assert cfg.prior["kind"] == "gw"
        assert cfg.band["gamma"] == 0.05
        assert cfg.experiment["name"] == "rates"

    def test_gamma_range_rejected(self):
        with pytest.raises(InvalidInputError) as err:
            parse_config_text('{"band": {"gamma": 1.5}}')
        assert "gamma must lie in (0,1)" in str(err.value)

    def test_unknown_key_rejected(self):
        with pytest.raises(InvalidInputError):
            parse_config_text('{"bandit": {}}')
        with pytest.raises(InvalidInputError):
            parse_config_text('{"prior": {"gama": 2}}')

    def test_roundtrip_reparse_identical(self):
        cfg = parse_config_text('{"seed": 9, "prior": {"kind": "exponential", "c": 2.0}}')
        again = parse_config_text(cfg.to_json())
        assert again == cfg
        assert again.to_json() == cfg.to_json()


class TestDispatch:
    def test_verify_clean_build(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out

    def test_unknown_subcommand_usage_exit(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_dp_cond_uniform_needs_stratified_flag(self, capsys):
        code = main(
            ["posterior", "--method", "dp", "--prior", "cond_uniform", "--n", "64",
             "--seed", "0"]
        )
        assert code == 1
        assert "stratified" in capsys.readouterr().err

    def test_dp_cond_uniform_with_flag_runs(self, capsys):
        code = main(
            ["posterior", "--method", "dp", "--prior", "cond_uniform", "--stratified",
             "--n", "64", "--seed", "0"]
        )
        assert code == 0

    def test_transform_roundtrip_files(self, tmp_path):
        g = GridFunction(np.random.default_rng(0).standard_normal(32))
        src = tmp_path / "grid.csv"
        src.write_text(g.to_csv())
        mid = tmp_path / "coeffs.csv"
        out = tmp_path / "back.csv"
        assert main(["transform", "--direction", "forward", "--input", str(src),
                     "--output", str(mid)]) == 0
        assert main(["transform", "--direction", "inverse", "--input", str(mid),
                     "--output", str(out)]) == 0
        back = GridFunction.from_csv(out.read_text())
        assert np.max(np.abs(back.values - g.values)) < 1e-12

    def test_prior_sample_lines(self, tmp_path):
        out = tmp_path / "trees.jsonl"
        assert main(["prior-sample", "--kind", "gw", "--gamma", "4", "--lmax", "6",
                     "--count", "25", "--seed", "5", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 25
        for line in lines:
            doc = json.loads(line)
            assert doc["max_depth_cap"] == 6

    def test_posterior_json_shape(self, tmp_path):
        out = tmp_path / "post.json"
        assert main(["posterior", "--method", "dp", "--n", "256", "--truth",
                     "full_decay", "--alpha", "0.5", "--seed", "1",
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert "inclusion" in doc and "top_trees" in doc
        assert len(doc["top_trees"]) <= 20

    def test_posterior_mcmc_diagnostics(self, tmp_path):
        out = tmp_path / "post.json"
        assert main(["posterior", "--method", "mcmc", "--iters", "2000", "--n", "64",
                     "--truth", "full_decay", "--alpha", "0.5", "--cov", "g_prior",
                     "--seed", "1", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert 0.0 <= doc["chain"]["acceptance_rate"] <= 1.0
        assert doc["chain"]["ess_proxy"] > 0

    def test_bands_outputs(self, tmp_path):
        outdir = tmp_path / "bands"
        assert main(["bands", "--gamma", "0.05", "--vn", "auto", "--draws", "200",
                     "--n", "128", "--truth", "full_decay", "--alpha", "0.5",
                     "--gw-gamma", "4", "--seed", "2", "--out", str(outdir)]) == 0
        names = {p.name for p in outdir.iterdir()}
        assert {"band.json", "band_envelope.csv", "center.csv", "band.png",
                "manifest.json"} <= names
        doc = json.loads((outdir / "band.json").read_text())
        assert doc["sigma_n"] >= 0 and doc["R_n"] >= 0

    def test_uh_check_csv(self, tmp_path):
        outdir = tmp_path / "uh"
        assert main(["uh", "check", "--density", "beta:2,5", "--D", "4",
                     "--n", "256", "--out", str(outdir)]) == 0
        text = (outdir / "balance_check.csv").read_text()
        assert text.splitlines()[0].startswith("l,k,max_side")

    def test_experiment_outputs_and_manifest(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "seed": 4,
            "experiment": {"name": "rates", "truth": "cusp", "alpha": 1.0,
                           "n_grid": [64, 256], "replicates": 2, "draws": 60},
        }))
        outdir = tmp_path / "run"
        assert main(["experiment", "rates", "--config", str(cfg),
                     "--out", str(outdir)]) == 0
        names = {p.name for p in outdir.iterdir()}
        assert {"rates_raw.csv", "rates_aggregates.json", "rates_plot.csv",
                "rates.png", "config_resolved.json", "manifest.json"} <= names
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert "rates_raw.csv" in manifest["outputs"]

    def test_byte_identical_reruns(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({
            "seed": 8,
            "experiment": {"name": "bvm", "truth": "full_decay", "alpha": 0.5,
                           "n_grid": [64, 256], "replicates": 2, "draws": 200},
        }))
        d1, d2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["experiment", "bvm", "--config", str(cfg), "--out", str(d1)]) == 0
        assert main(["experiment", "bvm", "--config", str(cfg), "--out", str(d2)]) == 0
        for name in ("bvm_raw.csv", "bvm_plot.csv"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_env_var_output_dir(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CARTWAVE_OUT", str(tmp_path / "envout"))
        assert main(["uh", "build", "--density", "uniform", "--D", "2",
                     "--n", "64"]) == 0
        assert (tmp_path / "envout" / "breakpoints.json").exists()
