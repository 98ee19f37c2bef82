import json

import numpy as np
import pytest
from click.testing import CliRunner

from advlab.cli import main
from advlab.config import DEFAULTS, ExperimentConfig, parse_config_text, serialize_config
from advlab.validation import ConfigurationError

SMOKE_TOML = """\
seed = 7
out_dir = "{out}"

[dataset]
source = "two-gaussians"
per_class = 40
eval_per_class = 20
augment = false

[model]
architecture = "mlp"
hidden = [8]

[train]
epochs = 2
batch_size = 32
decay_epochs = []

[objective]
variant = "{variant}"
lambda = {lam}
eta = 0.5

[attack]
eps = 0.05
alpha = 0.0125
steps = 4

[eval]
attacks = ["pgd10"]
"""


def write_config(tmp_path, variant="PGD-AT", lam=1.0, name="exp.toml", out=None):
    out = out or str(tmp_path / "out")
    path = tmp_path / name
    path.write_text(SMOKE_TOML.format(out=out, variant=variant, lam=lam))
    return path


class TestConfigFormat:
    def test_parse_serialize_round_trip_is_identity(self, tmp_path):
        cfg = ExperimentConfig.load(write_config(tmp_path))
        text = serialize_config(cfg.mapping)
        assert parse_config_text(text) == cfg.mapping

    def test_json_alternative(self, tmp_path):
        cfg = ExperimentConfig.load(write_config(tmp_path))
        json_path = tmp_path / "exp.json"
        cfg.dump(json_path)
        again = ExperimentConfig.load(json_path)
        assert again.mapping == cfg.mapping

    def test_defaults_fill_missing_sections(self, tmp_path):
        path = tmp_path / "tiny.toml"
        path.write_text('seed = 3\n\n[dataset]\nsource = "two-gaussians"\n')
        cfg = ExperimentConfig.load(path)
        assert cfg.seed == 3
        assert cfg.mapping["train"]["momentum"] == DEFAULTS["train"]["momentum"]
        assert cfg.objective_config().variant == "raat"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = 1\nbogus = 2\n")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(path)

    def test_objective_keys_appear_verbatim(self):
        # the config surface speaks the documented key names
        assert set(DEFAULTS["objective"]) >= {"variant", "lambda", "eta", "gamma",
                                              "misclassified_mode", "supervised_branch"}

    def test_variant_names_accept_canonical_spellings(self, tmp_path):
        for variant in ("PGD-AT", "TRADES", "MART", "Cons-AT", "RAAT", "RAAT++"):
            cfg = ExperimentConfig.load(write_config(tmp_path, variant=variant,
                                                     lam=6.0 if variant in ("TRADES", "MART") else 1.0))
            assert cfg.objective_config().variant == variant.lower().replace("_", "-")


class TestTrainCommand:
    def test_smoke_run_writes_log_and_report(self, tmp_path):
        config = write_config(tmp_path)
        result = CliRunner().invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output
        out = tmp_path / "out"
        log_lines = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log_lines) == 2
        first = json.loads(log_lines[0])
        assert set(first) == {"epoch", "lr", "train_loss", "clean_acc", "pgd10_acc", "subset_counts"}
        report = json.loads((out / "eval_report.json").read_text())
        assert "clean_acc" in report and "pgd10" in report["robust"]

    def test_same_seed_runs_are_byte_identical(self, tmp_path):
        config = write_config(tmp_path)
        runner = CliRunner()
        blobs = {}
        for run in ("a", "b"):
            out = tmp_path / run
            result = runner.invoke(main, ["train", "--config", str(config), "--out", str(out)])
            assert result.exit_code == 0, result.output
            blobs[run] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        assert blobs["a"] == blobs["b"]

    def test_rerun_into_same_directory_overwrites_identically(self, tmp_path):
        config = write_config(tmp_path)
        runner = CliRunner()
        out = tmp_path / "out"
        assert runner.invoke(main, ["train", "--config", str(config)]).exit_code == 0
        first = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        assert runner.invoke(main, ["train", "--config", str(config)]).exit_code == 0
        second = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
        assert first == second

    def test_latest_checkpoint_persisted_with_final_epoch(self, tmp_path):
        config = write_config(tmp_path)
        result = CliRunner().invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output
        sidecar = json.loads((tmp_path / "out" / "latest.ckpt.json").read_text())
        assert sidecar["epoch"] == 1  # last of the 2 epochs

    def test_alignment_profile_in_report_when_probes_configured(self, tmp_path):
        config = write_config(tmp_path)
        config.write_text(config.read_text() + "\n[eval]\nalignment_probes = 5\n")
        result = CliRunner().invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "out" / "eval_report.json").read_text())
        assert report["alignment"]["mu_grid"] == [0.0, 0.25, 0.5, 0.75, 1.0]
        deviations = np.asarray(report["alignment"]["deviations"])
        assert deviations.shape[1] == 5
        assert np.all(deviations[:, 0] == 0.0) and np.all(deviations[:, -1] == 0.0)

    def test_raat_run_logs_subset_counts(self, tmp_path):
        config = write_config(tmp_path, variant="RAAT")
        result = CliRunner().invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output
        rec = json.loads((tmp_path / "out" / "train_log.jsonl").read_text().splitlines()[0])
        counts = rec["subset_counts"]
        assert counts is not None
        assert counts["non_boundary"] + counts["boundary"] + counts["misclassified"] == 80

    def test_invalid_config_exits_2(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[dataset]\nsource = "unknown-source"\n')
        result = CliRunner().invoke(main, ["train", "--config", str(path)])
        assert result.exit_code == 2

    def test_missing_config_exits_2(self):
        result = CliRunner().invoke(main, ["train", "--config", "/nonexistent.toml"])
        assert result.exit_code == 2


class TestEvalCommand:
    def test_eval_on_trained_checkpoint(self, tmp_path):
        config = write_config(tmp_path)
        runner = CliRunner()
        assert runner.invoke(main, ["train", "--config", str(config)]).exit_code == 0
        ckpt = tmp_path / "out" / "best.ckpt"
        result = runner.invoke(main, ["eval", "--checkpoint", str(ckpt),
                                      "--config", str(config),
                                      "--out", str(tmp_path / "evalout")])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "evalout" / "eval_report.json").read_text())
        assert report["robust"]["pgd10"] <= 100.0

    def test_external_numbers_reproduce_published_metrics(self, tmp_path):
        config = write_config(tmp_path)
        runner = CliRunner()
        assert runner.invoke(main, ["train", "--config", str(config)]).exit_code == 0
        ckpt = tmp_path / "out" / "best.ckpt"
        result = runner.invoke(main, ["eval", "--checkpoint", str(ckpt),
                                      "--config", str(config),
                                      "--out", str(tmp_path / "evalout"),
                                      "--clean-accuracy", "82.76",
                                      "--aa-accuracy", "51.65"])
        assert result.exit_code == 0, result.output
        report = json.loads((tmp_path / "evalout" / "eval_report.json").read_text())
        assert abs(report["nrr"] - 63.605) < 0.001
        assert abs(report["mean"] - 67.205) < 0.001

    def test_zero_budget_attack_equals_clean_in_report(self, tmp_path):
        config_text = SMOKE_TOML.format(out=str(tmp_path / "out"), variant="PGD-AT", lam=1.0)
        config_text = config_text.replace("eps = 0.05", "eps = 0.0")
        config = tmp_path / "zero.toml"
        config.write_text(config_text)
        runner = CliRunner()
        assert runner.invoke(main, ["train", "--config", str(config)]).exit_code == 0
        result = runner.invoke(main, ["eval", "--checkpoint", str(tmp_path / "out" / "best.ckpt"),
                                      "--config", str(config), "--out", str(tmp_path / "e")])
        assert result.exit_code == 0
        report = json.loads((tmp_path / "e" / "eval_report.json").read_text())
        assert report["robust"]["pgd10"] == report["clean_acc"]

    def test_missing_checkpoint_exits_2_without_report(self, tmp_path):
        config = write_config(tmp_path)
        result = CliRunner().invoke(main, ["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                                           "--config", str(config),
                                           "--out", str(tmp_path / "evalout")])
        assert result.exit_code == 2
        assert not (tmp_path / "evalout" / "eval_report.json").exists()

    def test_architecture_mismatch_exits_2(self, tmp_path):
        config = write_config(tmp_path)
        runner = CliRunner()
        assert runner.invoke(main, ["train", "--config", str(config)]).exit_code == 0
        other = write_config(tmp_path, name="other.toml")
        text = other.read_text().replace("hidden = [8]", "hidden = [16]")
        other.write_text(text)
        result = runner.invoke(main, ["eval", "--checkpoint", str(tmp_path / "out" / "best.ckpt"),
                                      "--config", str(other)])
        assert result.exit_code == 2


class TestAblateCommand:
    def test_two_ideas_emits_exactly_four_rows(self, tmp_path):
        config = write_config(tmp_path, variant="RAAT")
        result = CliRunner().invoke(main, ["ablate", "--config", str(config),
                                           "--study", "two-ideas"])
        assert result.exit_code == 0, result.output
        rows = (tmp_path / "out" / "two_ideas.csv").read_text().splitlines()
        assert len(rows) == 5  # header + 4 runs
        assert rows[0] == "setting,bound,consistency_weight,clean_acc,pgd10_acc"

    def test_eta_sweep_tags_runs_by_eta(self, tmp_path):
        config = write_config(tmp_path, variant="RAAT")
        text = config.read_text() + "\n[ablate]\neta_values = [0.05, 0.1, 0.2]\n"
        config.write_text(text)
        result = CliRunner().invoke(main, ["ablate", "--config", str(config),
                                           "--study", "eta-sweep"])
        assert result.exit_code == 0, result.output
        rows = (tmp_path / "out" / "eta_sweep.csv").read_text().splitlines()
        assert len(rows) == 4
        assert [r.split(",")[0] for r in rows[1:]] == ["0.05", "0.1", "0.2"]

    def test_lambda_sweep_tags_runs_by_weight(self, tmp_path):
        config = write_config(tmp_path, variant="RAAT")
        text = config.read_text() + "\n[ablate]\nlambda_values = [0.5, 1.0]\n"
        config.write_text(text)
        result = CliRunner().invoke(main, ["ablate", "--config", str(config),
                                           "--study", "lambda-sweep"])
        assert result.exit_code == 0, result.output
        rows = (tmp_path / "out" / "lambda_sweep.csv").read_text().splitlines()
        assert rows[0] == "lambda,clean_acc,pgd10_acc"
        assert [r.split(",")[0] for r in rows[1:]] == ["0.5", "1.0"]

    def test_fig2_emits_five_strategy_curves(self, tmp_path):
        config = write_config(tmp_path)
        result = CliRunner().invoke(main, ["ablate", "--config", str(config), "--study", "fig2"])
        assert result.exit_code == 0, result.output
        rows = (tmp_path / "out" / "fig2.csv").read_text().splitlines()
        assert rows[0] == "epoch,clean_acc,robust_acc,strategy"
        strategies = {r.split(",")[-1] for r in rows[1:]}
        assert len(strategies) == 5
        assert len(rows) == 1 + 5 * 2  # 5 strategies x 2 epochs

    def test_unknown_study_exits_2(self, tmp_path):
        config = write_config(tmp_path)
        result = CliRunner().invoke(main, ["ablate", "--config", str(config), "--study", "bogus"])
        assert result.exit_code == 2


class TestTheoryCommand:
    def test_taylor_suite_passes_and_reports(self, tmp_path):
        result = CliRunner().invoke(main, ["theory", "--study", "taylor",
                                           "--out", str(tmp_path), "--trials", "50"])
        assert result.exit_code == 0, result.output
        assert "max |lhs - rhs|" in result.output
        assert (tmp_path / "taylor.csv").exists()

    def test_gaussian_sweep_row_count(self, tmp_path):
        result = CliRunner().invoke(main, ["theory", "--study", "gaussian-sweep",
                                           "--out", str(tmp_path),
                                           "--d-values", "4,16,64", "--trials", "20"])
        assert result.exit_code == 0, result.output
        rows = (tmp_path / "gaussian_sweep.csv").read_text().splitlines()
        assert rows[0] == "d,std_err,rob_err,cr_rob_err,m"
        assert len(rows) == 4

    def test_gaussian_sweep_zero_sigma_all_zero(self, tmp_path):
        result = CliRunner().invoke(main, ["theory", "--study", "gaussian-sweep",
                                           "--out", str(tmp_path),
                                           "--d-values", "4,16", "--trials", "10",
                                           "--sigma-scale", "0"])
        assert result.exit_code == 0, result.output
        for row in (tmp_path / "gaussian_sweep.csv").read_text().splitlines()[1:]:
            _, std, rob, cr, _ = row.split(",")
            assert float(std) == float(rob) == float(cr) == 0.0


class TestReportCommand:
    def test_published_row_metrics(self):
        result = CliRunner().invoke(main, ["report", "--clean", "82.76",
                                           "--aa-accuracy", "51.65"])
        assert result.exit_code == 0
        payload = json.loads(result.output)
        assert abs(payload["nrr"] - 63.605) < 0.001
        assert abs(payload["mean"] - 67.205) < 1e-9

    def test_requires_numbers_or_report(self):
        result = CliRunner().invoke(main, ["report"])
        assert result.exit_code == 2
