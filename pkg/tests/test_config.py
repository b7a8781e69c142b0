#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
from pathlib import Path

import pytest

from reliscope.utils.core import ClassLabel, SaliencyMethod
from reliscope.utils.errors import ConfigError, InfeasibleGeometry, InvalidInputError
from reliscope.utils.ingest import Split
from reliscope.utils.config import CONFIG_ARCHIVE_NAME, config_from_dict, load_config


def _write(tmp_path: Path, data) -> Path:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestDefaults:
    def test_defaults(self):
        config = config_from_dict({"seed": 3})
        assert config.saliency.method == SaliencyMethod.GRADCAM
        assert (config.cluster.dim, config.cluster.q, config.cluster.sigma, config.cluster.k) == (50, 8, 0.2, 5)
        assert config.reliability.threshold == 0.75
        assert config.split == Split.TEST
        assert config.model.train.epochs == 25
        assert config.model.train.seed == 3
        assert config.dataset.augmentation.base_multiplier == 4.0
        assert config.dataset.side == 256

    def test_synthetic_inherits_seed(self):
        config = config_from_dict({"seed": 9, "dataset": {"synthetic": {"side": 32, "radius_range": [3, 8],
                                                                          "readiness_threshold": 5.5}}})
        assert config.dataset.synthetic.seed == 9
        assert config.dataset.synthetic.radius_range == (3.0, 8.0)
        assert config.dataset.side == 32

    def test_augmentation_can_be_disabled(self):
        config = config_from_dict({"seed": 1, "dataset": {"augmentation": None}})
        assert config.dataset.augmentation is None

    def test_augmentation_target_class(self):
        config = config_from_dict({"seed": 1, "dataset": {"augmentation": {"target_class": "ready"}}})
        assert config.dataset.augmentation.target_class == ClassLabel.READY


class TestPrecedence:
    def test_command_line_overrides_file(self, tmp_path):
        path = _write(tmp_path, {"seed": 1, "output_dir": "a", "split": "val", "saliency": {"method": "osm"}})
        config = load_config(str(path), seed=2, output_dir="b", method="lime", split="test")
        assert config.seed == 2
        assert config.output_dir == "b"
        assert config.saliency.method == SaliencyMethod.LIME
        assert config.split == Split.TEST

    def test_file_overrides_defaults(self, tmp_path):
        path = _write(tmp_path, {"seed": 1, "cluster": {"q": 4}, "reliability": {"threshold": 0.6}})
        config = load_config(str(path))
        assert config.cluster.q == 4
        assert config.cluster.dim == 50
        assert config.reliability.threshold == 0.6

    def test_none_overrides_are_ignored(self, tmp_path):
        path = _write(tmp_path, {"seed": 5, "output_dir": "keep"})
        config = load_config(str(path), seed=None, output_dir=None)
        assert (config.seed, config.output_dir) == (5, "keep")

    def test_relative_paths_follow_config_file(self, tmp_path):
        path = _write(tmp_path, {"seed": 1, "dataset": {"manifest": "data/manifest.csv"},
                                 "model": {"checkpoint": "ckpt/best.rscp"}})
        config = load_config(str(path))
        assert config.dataset.manifest == str(tmp_path / "data/manifest.csv")
        assert config.model.checkpoint == str(tmp_path / "ckpt/best.rscp")


class TestValidation:
    def test_missing_seed(self):
        with pytest.raises(ConfigError) as info:
            config_from_dict({})
        assert info.value.exit_code == 2

    @pytest.mark.parametrize("seed", [-1, 2 ** 64, True, "7"])
    def test_seed_range(self, seed):
        with pytest.raises(ConfigError):
            config_from_dict({"seed": seed})

    def test_largest_seed(self):
        assert config_from_dict({"seed": 2 ** 64 - 1}).seed == 2 ** 64 - 1

    @pytest.mark.parametrize("data", [
        {"seed": 1, "colour": "red"},
        {"seed": 1, "cluster": {"clusters": 8}},
        {"seed": 1, "dataset": {"images": "x"}},
        {"seed": 1, "model": {"arch": "resnet"}},
        {"seed": 1, "saliency": {"smoothgrad": {}}},
        {"seed": 1, "saliency": {"osm": {"window": 3}}},
    ])
    def test_unknown_keys(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_manifest_and_synthetic_exclusive(self):
        with pytest.raises(ConfigError):
            config_from_dict({"seed": 1, "dataset": {"manifest": "m.csv", "synthetic": {}}})

    @pytest.mark.parametrize("section", [
        {"cluster": {"q": 1}}, {"cluster": {"sigma": 0}}, {"cluster": {"variance_target": 1.5}},
        {"reliability": {"threshold": 1.2}}, {"model": {"train": {"optimizer": "sgd"}}},
        {"saliency": {"osm": {"patch_size": 4, "stride": 5}}},
    ])
    def test_invalid_values(self, section):
        with pytest.raises(ConfigError):
            config_from_dict({"seed": 1, **section})

    def test_infeasible_synthetic_geometry(self):
        with pytest.raises(InfeasibleGeometry):
            config_from_dict({"seed": 1, "dataset": {"synthetic": {"side": 16, "radius_range": [5, 15]}}})

    def test_unknown_method(self):
        with pytest.raises(InvalidInputError):
            config_from_dict({"seed": 1}, method="smoothgrad")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.json"))

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{seed: 1", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestArchive:
    def test_archive_round_trip(self, tmp_path):
        config = config_from_dict({"seed": 11, "output_dir": str(tmp_path / "out"),
                                   "dataset": {"synthetic": {"side": 32, "radius_range": [3, 8],
                                                             "readiness_threshold": 5.5}}})
        path = config.archive()
        assert path == tmp_path / "out" / CONFIG_ARCHIVE_NAME
        reloaded = load_config(str(path))
        assert reloaded.to_dict() == config.to_dict()

    def test_to_json_is_stable(self):
        config = config_from_dict({"seed": 4})
        assert config.to_json() == config_from_dict({"seed": 4}).to_json()
