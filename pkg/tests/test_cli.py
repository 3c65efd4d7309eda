import json

import pytest
import yaml
from click.testing import CliRunner

from seqdebias.cli import main
from seqdebias.experiments import DATA_ROOT_ENV


@pytest.fixture
def runner(tmp_path, monkeypatch):
    monkeypatch.setenv(DATA_ROOT_ENV, str(tmp_path / "data"))
    monkeypatch.chdir(tmp_path)
    return CliRunner()


def tiny_spec(tmp_path, **overrides):
    spec = {
        "dataset": "synthetic",
        "repeats": 1,
        "model": {"mode": "base_bce", "max_len": 50, "dropout": 0.0},
        "train": {"max_epochs": 1, "batch_size": 32},
        "eval": {"num_negatives": 10, "k": 5},
        "output_dir": str(tmp_path / "runs"),
    }
    spec.update(overrides)
    path = tmp_path / "spec.yaml"
    path.write_text(yaml.safe_dump(spec))
    return path


class TestPrepare:
    def test_synthetic(self, runner, tmp_path):
        result = runner.invoke(main, ["prepare", "synthetic"])
        assert result.exit_code == 0, result.output
        assert "users" in result.output
        assert (tmp_path / "data" / "processed" / "synthetic" / "dataset.npz").exists()

    def test_unknown_dataset_json_error(self, runner):
        result = runner.invoke(main, ["prepare", "nope"])
        assert result.exit_code == 1
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "ValueError"
        assert "nope" in record["message"]

    def test_missing_raw_file_error(self, runner):
        result = runner.invoke(main, ["prepare", "ml-1m"])
        assert result.exit_code == 1
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "FileNotFoundError"


class TestTrainAndReport:
    def test_train_report_plot(self, runner, tmp_path):
        spec_path = tiny_spec(tmp_path)
        result = runner.invoke(main, ["train", str(spec_path)])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert summary[0]["ok"] == 1

        run_dirs = list((tmp_path / "runs").iterdir())
        assert len(run_dirs) == 1
        run_dir = run_dirs[0]
        assert (run_dir / "results.csv").exists()
        assert (run_dir / "spec.json").exists()
        assert list(run_dir.glob("ckpt_*.pt"))

        result = runner.invoke(main, ["report", str(run_dir)])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)[0]["runs"] == 1

        result = runner.invoke(
            main, ["plot", str(run_dir), "--kind", "exposure_bars", "--boundaries", "5"]
        )
        assert result.exit_code == 0, result.output
        assert (run_dir / "exposure_bars.png").exists()

    def test_evaluate_checkpoint(self, runner, tmp_path):
        spec_path = tiny_spec(tmp_path)
        runner.invoke(main, ["train", str(spec_path)])
        ckpt = next((tmp_path / "runs").glob("*/ckpt_*.pt"))
        result = runner.invoke(
            main,
            ["evaluate", str(ckpt), "--dataset", "synthetic",
             "--num-negatives", "10", "--k", "5"],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert 0.0 <= report["ndcg_at_k"] <= 1.0

    def test_sweep_two_points(self, runner, tmp_path):
        spec_path = tiny_spec(
            tmp_path, sweep={"model.inference_c": [0.0, 5.0]}
        )
        result = runner.invoke(main, ["sweep", str(spec_path)])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert len(summary) == 2

        run_dir = next((tmp_path / "runs").iterdir())
        result = runner.invoke(
            main, ["plot", str(run_dir), "--param", "model.inference_c"]
        )
        assert result.exit_code == 0, result.output
        assert (run_dir / "sweep_curve.png").exists()


class TestSpecValidation:
    def test_unknown_key_is_hard_error(self, runner, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump({"dataset": "synthetic", "leraning_rate": 1}))
        result = runner.invoke(main, ["train", str(path)])
        assert result.exit_code == 1
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "ConfigError"
        assert "leraning_rate" in record["message"]

    def test_unknown_nested_key(self, runner, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(
            yaml.safe_dump({"dataset": "synthetic", "model": {"depth": 3}})
        )
        result = runner.invoke(main, ["train", str(path)])
        assert result.exit_code == 1
        assert "depth" in result.output

    def test_bad_sweep_axis(self, runner, tmp_path):
        spec_path = tiny_spec(tmp_path, sweep={"model.nonexistent": [1]})
        result = runner.invoke(main, ["sweep", str(spec_path)])
        assert result.exit_code == 1
        record = json.loads(result.output.strip().splitlines()[-1])
        assert record["error"] == "ConfigError"
