import json
import os

import numpy as np
import pandas as pd
import pytest
import yaml

from main import main
from tests.conftest import TOY_DOCUMENT

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("trained")
    config_path = root / "toy.yaml"
    config_path.write_text(yaml.safe_dump(TOY_DOCUMENT))
    run_dir = root / "run"
    assert main(["train", str(config_path), "--run-dir", str(run_dir), "--seed", "3"]) == 0
    return {"config": str(config_path), "run_dir": run_dir}


class TestTrain:
    def test_outputs(self, trained_run):
        run_dir = trained_run["run_dir"]
        lines = (run_dir / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        resolved = yaml.safe_load((run_dir / "resolved_config.yaml").read_text())
        assert resolved["train"]["seed"] == 3
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["steps"] == 2
        assert os.path.exists(summary["checkpoint"])

    def test_unknown_key_exits_2(self, toy_config_path, tmp_path, capsys):
        code = main(["train", toy_config_path, "--run-dir", str(tmp_path / "r"), "--override", "train.tua=0.95"])
        assert code == 2
        assert "tua" in capsys.readouterr().err

    def test_out_of_range_tau_exits_2(self, toy_config_path, tmp_path):
        assert main(["train", toy_config_path, "--run-dir", str(tmp_path / "r"), "--override", "train.tau=1.5"]) == 2

    def test_override_is_echoed(self, toy_config_path, tmp_path):
        run_dir = tmp_path / "r"
        assert main(["train", toy_config_path, "--run-dir", str(run_dir), "--override", "train.tau=0.9"]) == 0
        assert yaml.safe_load((run_dir / "resolved_config.yaml").read_text())["train"]["tau"] == 0.9

    def test_non_empty_run_dir_needs_force(self, toy_config_path, tmp_path):
        run_dir = tmp_path / "busy"
        run_dir.mkdir()
        (run_dir / "notes.txt").write_text("keep")
        assert main(["train", toy_config_path, "--run-dir", str(run_dir)]) == 2
        assert main(["train", toy_config_path, "--run-dir", str(run_dir), "--force"]) == 0
        assert (run_dir / "notes.txt").exists()

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["train", str(tmp_path / "absent.yaml"), "--run-dir", str(tmp_path / "r")]) == 2

    def test_usage_error_exits_2(self):
        assert main(["train"]) == 2


class TestEvalAndExport:
    def test_eval_target_test_split(self, trained_run, capsys):
        checkpoint = str(trained_run["run_dir"] / "last.ckpt")
        assert main(["eval", "--checkpoint", checkpoint, "--config", trained_run["config"]]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["count"] == 20
        assert 0.0 <= result["accuracy"] <= 1.0

    def test_eval_missing_checkpoint(self, tmp_path, idx_fixture):
        code = main([
            "eval", "--checkpoint", str(tmp_path / "absent.ckpt"),
            "--images", idx_fixture["images_path"], "--labels", idx_fixture["labels_path"],
        ])
        assert code == 2

    def test_export_features(self, trained_run, idx_fixture, tmp_path):
        out = tmp_path / "features.csv"
        code = main([
            "export-features", "--checkpoint", str(trained_run["run_dir"] / "last.ckpt"), "--out", str(out),
            "--images", idx_fixture["images_path"], "--labels", idx_fixture["labels_path"],
        ])
        assert code == 0
        frame = pd.read_csv(out)
        feature_dim = TOY_DOCUMENT["model"]["widths"][-1]
        assert frame.shape == (4, feature_dim + 3)
        assert list(frame.columns[:4]) == ["id", "domain", "label", "z_0"]
        np.testing.assert_array_equal(frame["label"], idx_fixture["labels"])

    def test_export_unlabeled_marks_minus_one(self, trained_run, idx_fixture, tmp_path):
        out = tmp_path / "features.csv"
        code = main([
            "export-features", "--checkpoint", str(trained_run["run_dir"] / "last.ckpt"), "--out", str(out),
            "--images", idx_fixture["images_path"],
        ])
        assert code == 0
        assert (pd.read_csv(out)["label"] == -1).all()


class TestCount:
    def test_dida_prefix_at_512_channels(self, capsys):
        assert main(["count", os.path.join(CONFIGS, "count_c512.yaml"), "--json"]) == 0
        report = json.loads(capsys.readouterr().out)
        dida = next(row for row in report["prefixes"] if row["prefix"] == "dida")
        assert dida["params"] == 24_594
        assert report["dida_closed_form"] == {"block2": 24_594}

    def test_table(self, toy_config_path, capsys):
        assert main(["count", toy_config_path]) == 0
        out = capsys.readouterr().out
        assert out.splitlines()[0].split() == ["prefix", "params", "MACs"]
        assert "total" in out


class TestGradcheck:
    def test_selected_ops_pass(self, capsys):
        assert main(["gradcheck", "--ops", "relu,linear,softmax_cross_entropy", "--seeds", "2"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert all(row["passed"] for row in report.values())

    def test_unknown_op_exits_2(self):
        assert main(["gradcheck", "--ops", "nope"]) == 2


class TestAblate:
    def test_matrix_records_failures_and_continues(self, toy_config_path, tmp_path):
        plan = tmp_path / "plan.yaml"
        plan.write_text(yaml.safe_dump({
            "base": toy_config_path,
            "seeds": [0],
            "runs": [
                {"name": "dida"},
                {"name": "bad_reduction", "overrides": ["model.dida.reduction=3"]},
                {"name": "source_only", "overrides": ["model.dida=null", "train.target_loss_mode=none"]},
            ],
        }))
        run_dir = tmp_path / "matrix"
        assert main(["ablate", str(plan), "--run-dir", str(run_dir)]) == 0
        summary = json.loads((run_dir / "ablation_summary.json").read_text())
        statuses = {job["name"]: job["status"] for job in summary["jobs"]}
        assert statuses == {"dida": "completed", "bad_reduction": "failed", "source_only": "completed"}
        assert summary["failed"] == ["bad_reduction/seed0"]
        assert set(summary["ordering"]) == {"dida", "source_only"}
        jobs = pd.read_csv(run_dir / "ablation_jobs.csv")
        assert list(jobs["name"]) == ["dida", "bad_reduction", "source_only"]
        assert jobs.loc[jobs["name"] == "bad_reduction", "final_accuracy"].isna().all()
