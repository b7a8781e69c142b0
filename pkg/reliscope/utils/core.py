#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
核心数据类型模块
定义图像、类别、分数、显著性图、预测记录等共享类型，以及混淆矩阵和精度指标
"""

import csv
import zlib
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ClassAbsent, EmptyEvaluationSet, InvalidInputError, ShapeMismatchError


class ClassLabel(IntEnum):
    """收获成熟度类别，Ready为正类"""

    NOT_READY = 0
    READY = 1

    def flipped(self) -> "ClassLabel":
        """返回另一个类别"""
        return ClassLabel.READY if self is ClassLabel.NOT_READY else ClassLabel.NOT_READY

    @property
    def text(self) -> str:
        """清单文件中使用的文本形式"""
        return "ready" if self is ClassLabel.READY else "not_ready"

    @classmethod
    def from_text(cls, value: str) -> "ClassLabel":
        """
        从文本解析类别

        参数:
            value: "ready" / "not_ready"（也接受 0 / 1）

        返回:
            类别
        """
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower()
        if normalized in ("ready", "1"):
            return cls.READY
        if normalized in ("not_ready", "notready", "0"):
            return cls.NOT_READY
        raise InvalidInputError(f"无法识别的类别标签: {value!r}")


class ConfusionOutcome(Enum):
    """混淆矩阵结果"""

    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"

    @property
    def is_false(self) -> bool:
        return self in (ConfusionOutcome.FP, ConfusionOutcome.FN)


class SaliencyMethod(str, Enum):
    """显著性图方法"""

    GRADCAM = "gradcam"
    OSM = "osm"
    LIME = "lime"

    @classmethod
    def parse(cls, value: Any) -> "SaliencyMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise InvalidInputError(f"未知的显著性方法: {value!r}（可选 gradcam / osm / lime）")


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """分类器输入图像，平面存储 (C, H, W)，取值在[0,1]"""

    data: np.ndarray

    def __post_init__(self):
        array = np.array(self.data, dtype=np.float32, copy=True)
        if array.ndim != 3:
            raise ShapeMismatchError(f"图像张量必须为三维 (C, H, W)，实际维度: {array.ndim}")
        if array.shape[0] not in (1, 3):
            raise ShapeMismatchError(f"图像通道数必须为1或3，实际: {array.shape[0]}")
        if array.size == 0:
            raise ShapeMismatchError("图像为空")
        if not np.all(np.isfinite(array)) or array.min() < 0.0 or array.max() > 1.0:
            raise InvalidInputError("图像取值必须在[0,1]之间")
        array.setflags(write=False)
        object.__setattr__(self, "data", array)

    @classmethod
    def from_hwc(cls, array: np.ndarray) -> "ImageTensor":
        """从 (H, W, C) 或 (H, W) 数组创建"""
        array = np.asarray(array)
        if array.ndim == 2:
            array = array[:, :, None]
        return cls(np.transpose(array, (2, 0, 1)))

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    def to_hwc(self) -> np.ndarray:
        return np.transpose(self.data, (1, 2, 0))


@dataclass(frozen=True)
class ClassScores:
    """softmax类别分数，下标为类别值"""

    probabilities: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(p) for p in self.probabilities)
        if len(values) != len(ClassLabel):
            raise ShapeMismatchError(f"类别分数长度必须为{len(ClassLabel)}，实际: {len(values)}")
        if any(p < -1e-6 or p > 1 + 1e-6 for p in values):
            raise InvalidInputError(f"类别分数必须在[0,1]之间: {values}")
        if abs(sum(values) - 1.0) > 1e-6:
            raise InvalidInputError(f"类别分数之和必须为1: {values}")
        object.__setattr__(self, "probabilities", values)

    @property
    def predicted(self) -> ClassLabel:
        """分数最高的类别，平分时取NotReady"""
        return ClassLabel(int(np.argmax(self.probabilities)))

    def score(self, label: ClassLabel) -> float:
        return self.probabilities[int(label)]


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """显著性图，与 (图像, 方法, 解释类别) 绑定"""

    values: np.ndarray
    method: SaliencyMethod
    image_id: str
    explained_class: ClassLabel
    score: Optional[float] = None
    config: Optional[Dict[str, Any]] = None

    def __post_init__(self):
        array = np.array(self.values, dtype=np.float64, copy=True)
        if array.ndim != 2:
            raise ShapeMismatchError(f"显著性图必须为二维，实际维度: {array.ndim}")
        array.setflags(write=False)
        object.__setattr__(self, "values", array)
        object.__setattr__(self, "method", SaliencyMethod.parse(self.method))
        object.__setattr__(self, "explained_class", ClassLabel(int(self.explained_class)))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])


@dataclass(frozen=True)
class ConfusionMatrix:
    """二分类混淆矩阵计数"""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise InvalidInputError(f"混淆矩阵计数必须为非负整数: {name}={value}")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def false_count(self) -> int:
        return self.fp + self.fn

    def count(self, outcome: ConfusionOutcome) -> int:
        return getattr(self, outcome.value.lower())

    def swapped(self) -> "ConfusionMatrix":
        """全部预测翻转后的矩阵：TP↔FN，TN↔FP"""
        return ConfusionMatrix(tp=self.fn, tn=self.fp, fp=self.tn, fn=self.tp)

    def to_dict(self) -> Dict[str, int]:
        """转换为字典"""
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConfusionMatrix":
        return cls(**{key: int(data[key]) for key in ("tp", "tn", "fp", "fn")})


def outcome_of(predicted: ClassLabel, truth: ClassLabel) -> ConfusionOutcome:
    """
    由预测类别和真实类别得到混淆结果（Ready为正类）

    参数:
        predicted: 预测类别
        truth: 真实类别

    返回:
        混淆结果
    """
    if predicted == ClassLabel.READY:
        return ConfusionOutcome.TP if truth == ClassLabel.READY else ConfusionOutcome.FP
    return ConfusionOutcome.TN if truth == ClassLabel.NOT_READY else ConfusionOutcome.FN


@dataclass(frozen=True)
class PredictionRecord:
    """单张图像的预测记录"""

    image_id: str
    predicted: ClassLabel
    scores: ClassScores
    truth: Optional[ClassLabel] = None
    cluster_id: Optional[int] = None
    unreliability: Optional[float] = None
    adjusted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "predicted", ClassLabel(int(self.predicted)))
        if self.truth is not None:
            object.__setattr__(self, "truth", ClassLabel(int(self.truth)))
        if (self.cluster_id is None) != (self.unreliability is None):
            raise InvalidInputError(f"记录 {self.image_id}: 簇编号与不可靠度必须同时存在")
        if self.unreliability is not None and not 0.0 <= self.unreliability <= 1.0:
            raise InvalidInputError(f"记录 {self.image_id}: 不可靠度必须在[0,1]之间")

    @property
    def outcome(self) -> Optional[ConfusionOutcome]:
        """混淆结果，仅在真实类别已知时存在"""
        if self.truth is None:
            return None
        return outcome_of(self.predicted, self.truth)

    @property
    def reliability(self) -> Optional[float]:
        if self.unreliability is None:
            return None
        return 1.0 - self.unreliability

    def flipped(self) -> "PredictionRecord":
        """翻转预测类别，翻转两次恢复原记录"""
        return replace(self, predicted=self.predicted.flipped(), adjusted=not self.adjusted)

    def with_cluster(self, cluster_id: int, unreliability: float) -> "PredictionRecord":
        return replace(self, cluster_id=int(cluster_id), unreliability=float(unreliability))

    def to_row(self) -> Dict[str, str]:
        """转换为CSV行"""
        outcome = self.outcome
        return {
            "image_id": self.image_id,
            "predicted": self.predicted.text,
            "score_not_ready": f"{self.scores.probabilities[0]:.9g}",
            "score_ready": f"{self.scores.probabilities[1]:.9g}",
            "truth": self.truth.text if self.truth is not None else "",
            "outcome": outcome.value if outcome is not None else "",
            "cluster_id": "" if self.cluster_id is None else str(self.cluster_id),
            "unreliability": "" if self.unreliability is None else f"{self.unreliability:.6f}",
            "reliability": "" if self.reliability is None else f"{self.reliability:.6f}",
            "adjusted": "1" if self.adjusted else "0",
        }

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "PredictionRecord":
        """从CSV行恢复记录"""
        p_not_ready = float(row["score_not_ready"])
        p_ready = float(row["score_ready"])
        total = p_not_ready + p_ready
        cluster = row.get("cluster_id") or ""
        unreliability = row.get("unreliability") or ""
        return cls(
            image_id=row["image_id"],
            predicted=ClassLabel.from_text(row["predicted"]),
            scores=ClassScores((p_not_ready / total, p_ready / total)),
            truth=ClassLabel.from_text(row["truth"]) if row.get("truth") else None,
            cluster_id=int(cluster) if cluster else None,
            unreliability=float(unreliability) if unreliability else None,
            adjusted=row.get("adjusted", "0") == "1",
        )


RECORD_COLUMNS = [
    "image_id", "predicted", "score_not_ready", "score_ready", "truth",
    "outcome", "cluster_id", "unreliability", "reliability", "adjusted",
]


def write_records(records: Sequence[PredictionRecord], path):
    """
    写出预测记录表（CSV）

    参数:
        records: 预测记录
        path: 输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=RECORD_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for record in records:
            writer.writerow(record.to_row())


def read_records(path) -> List[PredictionRecord]:
    """读取预测记录表"""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"预测记录文件不存在: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        try:
            return [PredictionRecord.from_row(row) for row in csv.DictReader(f)]
        except (KeyError, ValueError) as e:
            raise InvalidInputError(f"预测记录文件格式错误: {path} ({e})")


def confusion_matrix(records: Iterable[PredictionRecord]) -> ConfusionMatrix:
    """
    统计混淆矩阵

    参数:
        records: 带真实类别的预测记录

    返回:
        混淆矩阵
    """
    counts = {outcome: 0 for outcome in ConfusionOutcome}
    seen = 0
    for record in records:
        outcome = record.outcome
        if outcome is None:
            raise InvalidInputError(f"记录 {record.image_id} 缺少真实类别")
        counts[outcome] += 1
        seen += 1
    if seen == 0:
        raise EmptyEvaluationSet("评估集为空，无法统计混淆矩阵")
    return ConfusionMatrix(
        tp=counts[ConfusionOutcome.TP], tn=counts[ConfusionOutcome.TN],
        fp=counts[ConfusionOutcome.FP], fn=counts[ConfusionOutcome.FN],
    )


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """总体精度 (TP+TN)/总数"""
    if cm.total < 1:
        raise EmptyEvaluationSet("混淆矩阵为空，无法计算总体精度")
    return (cm.tp + cm.tn) / cm.total


def average_class_accuracy(cm: ConfusionMatrix) -> float:
    """平均类别精度：两个类别召回率的平均值"""
    positives = cm.tp + cm.fn
    negatives = cm.tn + cm.fp
    if positives < 1:
        raise ClassAbsent("真实标签中缺少Ready类别，无法计算平均类别精度")
    if negatives < 1:
        raise ClassAbsent("真实标签中缺少NotReady类别，无法计算平均类别精度")
    return 0.5 * (cm.tp / positives + cm.tn / negatives)


def accuracy_summary(cm: ConfusionMatrix) -> Dict[str, Optional[float]]:
    """
    汇总精度指标，缺少类别时平均类别精度记为None

    返回:
        {"overall_accuracy": ..., "average_class_accuracy": ...}
    """
    try:
        aca: Optional[float] = average_class_accuracy(cm)
    except ClassAbsent:
        aca = None
    return {"overall_accuracy": overall_accuracy(cm), "average_class_accuracy": aca}


def derive_seed(seed: int, *parts: Any) -> int:
    """
    由全局种子和若干键（如图像标识）派生确定性的子种子，与调度顺序无关

    参数:
        seed: 全局种子
        parts: 派生键

    返回:
        64位子种子
    """
    keys = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    keys.extend(zlib.crc32(str(part).encode("utf-8")) for part in parts)
    return int(np.random.SeedSequence(keys).generate_state(2, dtype=np.uint64)[0])
