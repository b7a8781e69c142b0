#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
测试公共夹具
长时间的端到端验收测试标记为 slow，只在 pytest --runslow 时运行
"""

import numpy as np
import pytest

from reliscope.utils.core import ClassLabel, ClassScores, ImageTensor, PredictionRecord, SaliencyMap
from reliscope.utils.ingest import SyntheticSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行标记为 slow 的测试")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 长时间运行的端到端测试")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class LinearScorer:
    """Ready类别分数为像素线性函数的分类器：p_ready = 0.5 + Σ w·x，供遮挡与LIME的解析对照"""

    def __init__(self, weights: np.ndarray):
        self.weights = np.asarray(weights, dtype=np.float64)

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        ready = 0.5 + np.tensordot(batch, self.weights, axes=([1, 2, 3], [0, 1, 2]))
        return np.stack([1.0 - ready, ready], axis=1)


@pytest.fixture
def linear_scorer():
    """16x16单通道、权重很小的线性打分器（概率保持在[0,1]内）"""
    rng = np.random.default_rng(7)
    return LinearScorer(rng.uniform(-1e-3, 1e-3, size=(1, 16, 16)))


@pytest.fixture
def small_image():
    rng = np.random.default_rng(11)
    return ImageTensor(rng.uniform(0.0, 1.0, size=(1, 16, 16)))


@pytest.fixture
def tiny_spec():
    """边长32的小合成数据集参数"""
    return SyntheticSpec(
        train_count=24, val_count=16, test_count=16, side=32, radius_range=(3.0, 8.0),
        readiness_threshold=5.5, center_jitter=1.0, canopy_density=0.1, seed=5,
    )


def make_record(image_id: str, predicted: ClassLabel, truth: ClassLabel) -> PredictionRecord:
    ready = 0.8 if predicted == ClassLabel.READY else 0.2
    return PredictionRecord(
        image_id=image_id, predicted=predicted, scores=ClassScores((1.0 - ready, ready)), truth=truth,
    )


def make_map(image_id: str, values, explained_class: ClassLabel = ClassLabel.READY, method: str = "gradcam"):
    return SaliencyMap(values=np.asarray(values, dtype=np.float64), method=method, image_id=image_id,
                       explained_class=explained_class)


def outcome_records(prefix: str, tp: int = 0, tn: int = 0, fp: int = 0, fn: int = 0):
    """按混淆结果计数构造预测记录"""
    records = []
    plan = [
        (tp, ClassLabel.READY, ClassLabel.READY),
        (tn, ClassLabel.NOT_READY, ClassLabel.NOT_READY),
        (fp, ClassLabel.READY, ClassLabel.NOT_READY),
        (fn, ClassLabel.NOT_READY, ClassLabel.READY),
    ]
    for count, predicted, truth in plan:
        for _ in range(count):
            records.append(make_record(f"{prefix}_{len(records):04d}", predicted, truth))
    return records
