#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
import struct
from dataclasses import replace

import numpy as np
import pytest
import torch

from reliscope.utils.core import ClassLabel, ImageTensor
from reliscope.utils.errors import (
    CheckpointError, CheckpointVersionMismatch, ShapeMismatchError, TrainingDiverged, TruncatedCheckpoint,
    UnknownLayerError,
)
from reliscope.utils.ingest import LabeledImage
from reliscope.utils.model import (
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, Classifier, GradientClassifier, MiniCnn, TrainConfig, backward_to_layer,
    default_architecture, forward, load_checkpoint, predict_records, read_checkpoint, save_checkpoint, train,
)


def _brightness_samples(count: int, side: int = 8, seed: int = 0, prefix: str = "s"):
    """亮图为Ready、暗图为NotReady的可分数据"""
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(count):
        label = ClassLabel(index % 2)
        center = 0.75 if label == ClassLabel.READY else 0.25
        pixels = np.clip(rng.normal(center, 0.08, size=(1, side, side)), 0.0, 1.0)
        samples.append(LabeledImage(ImageTensor(pixels), label, f"{prefix}_{index:03d}"))
    return samples


def _zeroed(model: MiniCnn) -> MiniCnn:
    with torch.no_grad():
        for parameter in model.parameters():
            parameter.zero_()
    return model


# ---------------------------------------------------------------------------
# 前向与梯度
# ---------------------------------------------------------------------------

class TestForwardBackward:
    def test_protocols(self):
        model = MiniCnn(default_architecture(1))
        assert isinstance(model, Classifier)
        assert isinstance(model, GradientClassifier)

    def test_probabilities(self):
        model = MiniCnn(default_architecture(3), seed=1)
        batch = np.random.default_rng(0).uniform(size=(5, 3, 16, 16)).astype(np.float32)
        probabilities = model.predict_proba(batch)
        assert probabilities.shape == (5, 2)
        assert np.allclose(probabilities.sum(axis=1), 1.0)

    def test_batch_composition_does_not_matter(self):
        model = MiniCnn(default_architecture(1), seed=2)
        batch = np.random.default_rng(1).uniform(size=(4, 1, 16, 16)).astype(np.float32)
        together = model.predict_proba(batch)
        alone = np.concatenate([model.predict_proba(batch[i:i + 1]) for i in range(4)])
        assert np.allclose(together, alone, atol=1e-6)

    def test_forward_cache(self):
        model = MiniCnn(default_architecture(1), seed=2)
        image = ImageTensor(np.random.default_rng(2).uniform(size=(1, 16, 16)))
        result = forward(model, image, keep_cache=True)
        assert result.activations["conv3"].tensor.shape == (32, 4, 4)
        assert result.activations["gap"].tensor.shape == (32,)

    def test_zero_weights_give_even_odds(self):
        model = _zeroed(MiniCnn(default_architecture(3), seed=5))
        batch = np.random.default_rng(3).uniform(size=(2, 3, 16, 16)).astype(np.float32)
        assert np.array_equal(model.predict_proba(batch), np.full((2, 2), 0.5, dtype=np.float32))

    def test_single_conv_dense_forward_by_hand(self):
        architecture = [
            {"type": "conv", "id": "conv1", "in_channels": 1, "out_channels": 1, "kernel": 3, "padding": 1},
            {"type": "relu", "id": "relu1"},
            {"type": "gap", "id": "gap"},
            {"type": "dense", "id": "dense", "in_features": 1, "out_features": 2},
        ]
        model = MiniCnn(architecture).double()
        with torch.no_grad():
            model.layers["conv1"].weight.fill_(1.0)
            model.layers["conv1"].bias.fill_(-2.0)
            model.layers["dense"].weight.copy_(torch.tensor([[1.0], [-1.0]], dtype=torch.float64))
            model.layers["dense"].bias.copy_(torch.tensor([0.5, 0.0], dtype=torch.float64))
        pixels = np.arange(16, dtype=np.float64).reshape(4, 4) / 16.0

        padded = np.pad(pixels, 1)
        conv = np.array([[padded[i:i + 3, j:j + 3].sum() - 2.0 for j in range(4)] for i in range(4)])
        pooled = np.maximum(conv, 0.0).mean()
        logits = np.array([pooled + 0.5, -pooled])
        expected = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()

        assert model.predict_proba(pixels[None, None]) == pytest.approx(expected[None], abs=1e-12)

    def test_shape_mismatch(self):
        model = MiniCnn(default_architecture(3))
        with pytest.raises(ShapeMismatchError):
            model.predict_proba(np.zeros((1, 1, 16, 16), dtype=np.float32))

    def test_unknown_layer(self):
        model = MiniCnn(default_architecture(1))
        image = ImageTensor(np.zeros((1, 16, 16)))
        with pytest.raises(UnknownLayerError):
            backward_to_layer(model, image, ClassLabel.READY, "relu1")
        with pytest.raises(UnknownLayerError):
            backward_to_layer(model, image, ClassLabel.READY, "conv9")

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        model = MiniCnn(default_architecture(1), seed=seed).double()
        rng = np.random.default_rng(seed)
        image = ImageTensor(rng.uniform(size=(1, 16, 16)))
        layer_id = model.conv_layer_ids[seed % 3]
        cls = ClassLabel(seed % 2)
        gradient = backward_to_layer(model, image, cls, layer_id).tensor

        with torch.no_grad():
            _, cache = model.run_layers(model.to_tensor(image.data[None]), capture=True)
            activation = cache[layer_id].clone()
            eps = 1e-6
            for flat in rng.choice(activation[0].numel(), size=8, replace=False):
                index = tuple(int(i) for i in np.unravel_index(flat, activation.shape[1:]))
                plus, minus = activation.clone(), activation.clone()
                plus[(0, *index)] += eps
                minus[(0, *index)] -= eps
                numeric = float(
                    model.forward_from(layer_id, plus)[0, int(cls)] - model.forward_from(layer_id, minus)[0, int(cls)]
                ) / (2 * eps)
                analytic = float(gradient[index])
                scale = max(abs(numeric), abs(analytic), 1e-6)
                assert abs(numeric - analytic) / scale < 1e-3


# ---------------------------------------------------------------------------
# 训练
# ---------------------------------------------------------------------------

class TestTraining:
    def test_learning_rate_schedule(self):
        cfg = TrainConfig()
        assert cfg.learning_rate_at(4) == pytest.approx(1e-4)
        assert cfg.learning_rate_at(5) == pytest.approx(1e-5)
        assert cfg.learning_rate_at(10) == pytest.approx(1e-6)

    def test_history_follows_schedule(self):
        model = MiniCnn(default_architecture(1), seed=0)
        cfg = TrainConfig(epochs=3, initial_learning_rate=1e-3, scheduler_step_size=2, batch_size=8)
        result = train(model, _brightness_samples(16), _brightness_samples(8, seed=1, prefix="v"), cfg,
                       show_progress=False)
        assert [m.epoch for m in result.history] == [0, 1, 2]
        assert [m.learning_rate for m in result.history] == pytest.approx([1e-3, 1e-3, 1e-4])

    def test_learns_separable_data(self):
        model = MiniCnn(default_architecture(1), seed=3)
        cfg = TrainConfig(epochs=20, initial_learning_rate=1e-2, scheduler_step_size=10, batch_size=16, seed=3)
        result = train(model, _brightness_samples(64), _brightness_samples(32, seed=1, prefix="v"), cfg,
                       show_progress=False)
        assert result.best_val_accuracy >= 0.9
        assert result.history[-1].train_loss < result.history[0].train_loss

    def test_zero_gradients_leave_parameters_unchanged(self):
        # 全零网络在类别均衡的整批数据上梯度恰为0
        model = _zeroed(MiniCnn(default_architecture(1), seed=0))
        cfg = TrainConfig(epochs=3, weight_decay=0.0, initial_learning_rate=1e-2, batch_size=16)
        result = train(model, _brightness_samples(16), _brightness_samples(4, prefix="v"), cfg, show_progress=False)
        for tensor in result.final_model.state_dict().values():
            assert torch.count_nonzero(tensor) == 0

    def test_zero_epochs_returns_initial_weights(self):
        model = MiniCnn(default_architecture(1), seed=6)
        result = train(model, _brightness_samples(8), _brightness_samples(4, prefix="v"), TrainConfig(epochs=0),
                       show_progress=False)
        assert result.history == []
        assert result.best_epoch is None
        for name, tensor in model.state_dict().items():
            assert torch.equal(result.model.state_dict()[name], tensor)
            assert torch.equal(result.final_model.state_dict()[name], tensor)

    def test_input_model_is_not_modified(self):
        model = MiniCnn(default_architecture(1), seed=0)
        before = {name: tensor.clone() for name, tensor in model.state_dict().items()}
        train(model, _brightness_samples(8), _brightness_samples(4, prefix="v"), TrainConfig(epochs=1, batch_size=4),
              show_progress=False)
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, before[name])

    def test_divergence(self):
        model = MiniCnn(default_architecture(1), seed=0)
        model.layers["dense"].bias.data.fill_(float("nan"))
        with pytest.raises(TrainingDiverged) as info:
            train(model, _brightness_samples(8), _brightness_samples(4, prefix="v"), TrainConfig(epochs=2),
                  show_progress=False)
        assert info.value.exit_code == 4

    def test_predict_records(self):
        model = MiniCnn(default_architecture(1), seed=0)
        samples = _brightness_samples(5)
        records = predict_records(model, samples)
        assert [r.image_id for r in records] == [s.image_id for s in samples]
        assert all(r.truth == s.label for r, s in zip(records, samples))

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        train_set = _brightness_samples(16)
        val_set = _brightness_samples(8, seed=1, prefix="v")
        cfg = TrainConfig(epochs=3, initial_learning_rate=1e-3, scheduler_step_size=1, batch_size=8, seed=4)
        model = MiniCnn(default_architecture(1), seed=4)

        full = train(model, train_set, val_set, cfg, show_progress=False)

        partial = train(model, train_set, val_set, replace(cfg, epochs=1), show_progress=False)
        save_checkpoint(partial.final_model, tmp_path / "last.rscp", epoch=0, optimizer_state=partial.optimizer_state)
        checkpoint = read_checkpoint(tmp_path / "last.rscp")
        assert checkpoint.resume is not None
        resumed = train(checkpoint.model, train_set, val_set, cfg, resume=checkpoint.resume, show_progress=False)

        assert [m.to_dict() for m in resumed.history] == [m.to_dict() for m in full.history]
        for (name, a), (_, b) in zip(full.final_model.state_dict().items(), resumed.final_model.state_dict().items()):
            assert torch.equal(a, b), name


# ---------------------------------------------------------------------------
# 检查点
# ---------------------------------------------------------------------------

class TestCheckpoint:
    @pytest.fixture
    def saved(self, tmp_path):
        model = MiniCnn(default_architecture(3), seed=9)
        model.input_side = 16
        model.channel_means = (0.1, 0.2, 0.3)
        path = tmp_path / "model.rscp"
        save_checkpoint(model, path, epoch=7)
        return model, path

    def test_round_trip_predictions_identical(self, saved):
        model, path = saved
        loaded = load_checkpoint(path)
        batch = np.random.default_rng(5).uniform(size=(3, 3, 16, 16)).astype(np.float32)
        assert np.array_equal(model.predict_proba(batch), loaded.predict_proba(batch))
        assert loaded.channel_means == (0.1, 0.2, 0.3)
        assert loaded.input_side == 16
        assert read_checkpoint(path).header["epoch"] == 7

    def test_truncated(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(TruncatedCheckpoint):
            load_checkpoint(path)

    def test_version_mismatch(self, saved):
        _, path = saved
        data = bytearray(path.read_bytes())
        data[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionMismatch):
            load_checkpoint(path)

    def test_resume_checkpoint_header(self, tmp_path):
        model = MiniCnn(default_architecture(1), seed=0)
        result = train(model, _brightness_samples(8), _brightness_samples(4, prefix="v"),
                       TrainConfig(epochs=1, batch_size=4), show_progress=False)
        path = tmp_path / "last.rscp"
        save_checkpoint(result.final_model, path, epoch=0, optimizer_state=result.optimizer_state)
        meta = read_checkpoint(path).header["optimizer"]
        assert meta["epoch"] == 0
        assert meta["best_epoch"] == 0
        assert "best_parameters" not in meta

    def test_header_missing_fields(self, tmp_path):
        header = json.dumps({"architecture": default_architecture(1)}).encode("utf-8")
        path = tmp_path / "partial.rscp"
        path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header)) + header)
        with pytest.raises(CheckpointError) as info:
            load_checkpoint(path)
        assert info.value.exit_code == 2

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.rscp"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
