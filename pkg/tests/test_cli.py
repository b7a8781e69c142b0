#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from reliscope.cli.context import LOCK_NAME
from reliscope.cli.main import cli
from reliscope.utils.core import read_records

TINY_CONFIG = {
    "seed": 13,
    "dataset": {
        "synthetic": {
            "train_count": 24, "val_count": 16, "test_count": 16, "side": 32, "radius_range": [3, 8],
            "readiness_threshold": 5.5, "center_jitter": 1.0, "canopy_density": 0.1,
        },
        "augmentation": None,
    },
    "model": {"train": {"epochs": 2, "batch_size": 8, "initial_learning_rate": 0.001}},
    "saliency": {"method": "gradcam"},
    "cluster": {"dim": 4, "q": 3, "k": 3},
}

STEPS = [
    ["synth"], ["train"], ["--split", "val", "explain"], ["explain"], ["cluster"],
    ["reliability"], ["adjust"], ["report"],
]


def _config(directory: Path, **changes) -> str:
    data = json.loads(json.dumps(TINY_CONFIG))
    for section, values in changes.items():
        data[section].update(values)
    path = directory / "tiny.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _invoke(*args):
    runner = CliRunner(mix_stderr=False)
    return runner.invoke(cli, ["--no-progress", *args], catch_exceptions=False)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """在小型合成数据集上执行一次完整流程"""
    directory = tmp_path_factory.mktemp("pipeline")
    config = _config(directory)
    out = directory / "out"
    result = _invoke("--config", config, "--out", str(out), "run")
    assert result.exit_code == 0, result.stderr
    return config, out, result


class TestRun:
    def test_layout(self, pipeline):
        _, out, _ = pipeline
        expected = [
            "config.json", "run-log.jsonl", "data/manifest.csv", "data/synth_truth.csv",
            "checkpoints/best.rscp", "checkpoints/last.rscp", "checkpoints/train_metrics.json",
            "maps/gradcam/val/predictions.csv", "maps/gradcam/test/predictions.csv",
            "cluster/gradcam.cmodel", "cluster/gradcam_val_assignments.csv", "cluster/gradcam_test_assignments.csv",
            "reports/gradcam/reliability.json", "reports/gradcam/val_report.json",
            "reports/gradcam/test_report.json", "reports/gradcam/test_clusters.csv",
            "reports/gradcam/report.txt", "reports/gradcam/report.html", "reports/gradcam/composition_test.png",
        ]
        missing = [name for name in expected if not (out / name).exists()]
        assert missing == []
        assert not (out / LOCK_NAME).exists()

    def test_one_map_per_image(self, pipeline):
        _, out, _ = pipeline
        assert len(list((out / "maps/gradcam/test").glob("*.gradcam.smap"))) == 16
        assert len(list((out / "maps/gradcam/val").glob("*.gradcam.smap.json"))) == 16

    def test_records_annotated(self, pipeline):
        _, out, _ = pipeline
        records = read_records(out / "reports/gradcam/test_records.csv")
        assert len(records) == 16
        assert all(record.cluster_id in (1, 2, 3) for record in records)
        assert all(0.0 <= record.reliability <= 1.0 for record in records)

    def test_echoes_delta(self, pipeline):
        _, _, result = pipeline
        assert result.stdout.startswith("test: overall_accuracy_delta=")

    def test_config_archived(self, pipeline):
        _, out, _ = pipeline
        archived = json.loads((out / "config.json").read_text(encoding="utf-8"))
        assert archived["seed"] == 13
        assert archived["cluster"]["q"] == 3
        assert archived["output_dir"] == str(out)

    def test_run_log(self, pipeline):
        _, out, _ = pipeline
        entries = [json.loads(line) for line in (out / "run-log.jsonl").read_text(encoding="utf-8").splitlines()]
        assert [entry["event"] for entry in entries] == ["start", "finish"]
        assert entries[1]["exit_code"] == 0
        assert entries[0]["seed"] == 13 and entries[0]["method"] == "gradcam"
        assert "cpu_cores" in entries[0]["system"]

    def test_timestamps_only_in_run_log(self, pipeline):
        _, out, _ = pipeline
        report = (out / "reports/gradcam/test_report.json").read_text(encoding="utf-8")
        assert "timestamp" not in report

    def test_steps_match_run(self, pipeline, tmp_path):
        config, out, _ = pipeline
        stepwise = tmp_path / "out"
        for step in STEPS:
            result = _invoke("--config", config, "--out", str(stepwise), *step)
            assert result.exit_code == 0, (step, result.stderr)
        for name in (
            "cluster/gradcam_val_assignments.csv", "cluster/gradcam_test_assignments.csv",
            "cluster/gradcam.cmodel", "reports/gradcam/val_report.json", "reports/gradcam/test_report.json",
            "reports/gradcam/report.txt",
        ):
            assert (stepwise / name).read_bytes() == (out / name).read_bytes(), name


class TestExitCodes:
    def test_missing_config_file(self, tmp_path):
        result = _invoke("--config", str(tmp_path / "absent.json"), "--out", str(tmp_path / "out"), "synth")
        assert result.exit_code == 2
        assert "absent.json" in result.stderr

    def test_missing_seed(self, tmp_path):
        path = tmp_path / "noseed.json"
        path.write_text(json.dumps({"dataset": TINY_CONFIG["dataset"]}), encoding="utf-8")
        result = _invoke("--config", str(path), "--out", str(tmp_path / "out"), "synth")
        assert result.exit_code == 2

    def test_seed_flag_supplies_seed(self, tmp_path):
        path = tmp_path / "noseed.json"
        path.write_text(json.dumps({"dataset": TINY_CONFIG["dataset"]}), encoding="utf-8")
        result = _invoke("--config", str(path), "--out", str(tmp_path / "out"), "--seed", "3", "synth")
        assert result.exit_code == 0, result.stderr
        assert (tmp_path / "out/data/manifest.csv").exists()

    def test_unknown_method(self, tmp_path):
        result = _invoke("--config", _config(tmp_path), "--method", "smoothgrad", "synth")
        assert result.exit_code == 2

    def test_train_before_synth(self, tmp_path):
        result = _invoke("--config", _config(tmp_path), "--out", str(tmp_path / "out"), "train")
        assert result.exit_code == 2
        assert "synth" in result.stderr

    def test_explain_without_checkpoint(self, tmp_path):
        config, out = _config(tmp_path), str(tmp_path / "out")
        assert _invoke("--config", config, "--out", out, "synth").exit_code == 0
        result = _invoke("--config", config, "--out", out, "explain")
        assert result.exit_code == 2

    def test_too_few_maps_for_pca(self, pipeline, tmp_path):
        _, out, _ = pipeline
        shutil.copytree(out / "maps", tmp_path / "out" / "maps")
        config = _config(tmp_path, cluster={"dim": 50})
        result = _invoke("--config", config, "--out", str(tmp_path / "out"), "cluster")
        assert result.exit_code == 3

    @pytest.mark.parametrize("content", ["{not json", '{"clusters": []}'])
    def test_damaged_reliability_file(self, pipeline, tmp_path, content):
        config, out, _ = pipeline
        copy = tmp_path / "out"
        shutil.copytree(out, copy)
        (copy / "reports" / "gradcam" / "reliability.json").write_text(content, encoding="utf-8")
        result = _invoke("--config", config, "--out", str(copy), "adjust")
        assert result.exit_code == 2
        assert "reliability.json" in result.stderr

    def test_report_without_reports(self, tmp_path):
        result = _invoke("--config", _config(tmp_path), "--out", str(tmp_path / "out"), "report")
        assert result.exit_code == 3

    def test_failure_recorded_in_run_log(self, tmp_path):
        out = tmp_path / "out"
        _invoke("--config", _config(tmp_path), "--out", str(out), "report")
        finish = json.loads((out / "run-log.jsonl").read_text(encoding="utf-8").splitlines()[-1])
        assert finish["event"] == "finish" and finish["exit_code"] == 3

    def test_locked_output_directory(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / LOCK_NAME).write_text("999", encoding="ascii")
        result = _invoke("--config", _config(tmp_path), "--out", str(out), "synth")
        assert result.exit_code == 2
        assert LOCK_NAME in result.stderr
        assert (out / LOCK_NAME).exists()
        assert not (out / "data").exists()


def test_version():
    result = _invoke("--version")
    assert result.exit_code == 0
    assert "reliscope" in result.stdout
