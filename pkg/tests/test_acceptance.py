#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
端到端验收：预置错误子群的合成数据集（600/200/200，种子2023），
Grad-CAM、q=8、k=5、t=0.75，完整流程执行两次，另用种子7执行一次检查增益不依赖单一种子
"""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from reliscope.cli.main import cli

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "synthetic.json"

DETERMINISTIC_FILES = [
    "cluster/gradcam.cmodel",
    "cluster/gradcam_val_assignments.csv",
    "cluster/gradcam_test_assignments.csv",
    "reports/gradcam/reliability.json",
    "reports/gradcam/val_report.json",
    "reports/gradcam/test_report.json",
    "reports/gradcam/test_records.csv",
    "reports/gradcam/report.txt",
    "reports/gradcam/report.html",
]


def _run(out: Path, *extra: str) -> Path:
    result = CliRunner(mix_stderr=False).invoke(
        cli, ["--no-progress", "--config", str(CONFIG), "--out", str(out), *extra, "run"], catch_exceptions=False,
    )
    assert result.exit_code == 0, result.stderr
    return out


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return [_run(tmp_path_factory.mktemp(name)) for name in ("first", "second")]


@pytest.fixture(scope="module")
def other_seed_run(tmp_path_factory):
    return _run(tmp_path_factory.mktemp("seed7"), "--seed", "7")


@pytest.mark.slow
@pytest.mark.parametrize("fixture", ["runs", "other_seed_run"])
def test_adjustment_gain(request, fixture):
    out = request.getfixturevalue(fixture)
    out = out[0] if isinstance(out, list) else out
    data = json.loads((out / "reports/gradcam/test_report.json").read_text(encoding="utf-8"))
    assert data["decision"]["swap_set"]
    assert data["delta_points"]["overall_accuracy"] >= 10.0
    assert data["error_capture"] >= 0.6


@pytest.mark.slow
def test_fixed_parameters(runs):
    config = json.loads((runs[0] / "config.json").read_text(encoding="utf-8"))
    assert config["saliency"]["method"] == "gradcam"
    assert (config["cluster"]["q"], config["cluster"]["k"]) == (8, 5)
    assert config["reliability"]["threshold"] == 0.75
    assert config["dataset"]["synthetic"]["planted_error_fraction"] == 0.25


@pytest.mark.slow
@pytest.mark.parametrize("name", DETERMINISTIC_FILES)
def test_rerun_is_byte_identical(runs, name):
    first, second = runs
    assert (first / name).read_bytes() == (second / name).read_bytes()
