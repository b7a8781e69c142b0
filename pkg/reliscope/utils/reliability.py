#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
可靠度模块
由验证集的混淆结果计算每个簇的不可靠度 r，选择需要交换类别的簇，
调整预测并统计调整前后的精度变化
"""

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .core import (
    ConfusionMatrix, ConfusionOutcome, PredictionRecord, SaliencyMap, accuracy_summary, confusion_matrix,
    write_records,
)
from .embed_cluster import normalize_map
from .errors import (
    ConfigError, InvalidInputError, MismatchedRecordsError, MissingOutcomeError, ShapeMismatchError,
    UnknownClusterError,
)

logger = logging.getLogger(__name__)

REPORT_KEYS = (
    "before", "after", "delta_points", "decision", "clusters", "composition", "error_capture", "threshold_sweep",
)

DEFAULT_THRESHOLD = 0.75
SWEEP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class ClusterReliability:
    """单个簇的统计：样本数、错误数 (FP+FN)、不可靠度 r 与各混淆结果计数"""

    cluster_id: int
    per_outcome: ConfusionMatrix

    @property
    def total(self) -> int:
        return self.per_outcome.total

    @property
    def false_count(self) -> int:
        return self.per_outcome.false_count

    @property
    def empty(self) -> bool:
        return self.total == 0

    @property
    def r(self) -> Optional[float]:
        """错误比例，空簇为None"""
        if self.empty:
            return None
        return self.false_count / self.total

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cluster_id": self.cluster_id,
            "total": self.total,
            "false_count": self.false_count,
            "r": self.r,
            "reliability": None if self.r is None else 1.0 - self.r,
            "empty": self.empty,
            **self.per_outcome.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ClusterReliability":
        return cls(cluster_id=int(data["cluster_id"]), per_outcome=ConfusionMatrix.from_dict(data))


@dataclass(frozen=True)
class SwapDecision:
    """交换决策：阈值 t 与 r > t 的簇集合"""

    threshold: float = DEFAULT_THRESHOLD
    swap_set: frozenset = frozenset()

    def to_dict(self) -> Dict[str, Any]:
        return {"threshold": self.threshold, "swap_set": sorted(self.swap_set)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SwapDecision":
        return cls(threshold=float(data["threshold"]), swap_set=frozenset(int(c) for c in data["swap_set"]))


@dataclass
class Prototype:
    """簇原型：成员显著性图的逐元素均值"""

    cluster_id: int
    map: SaliencyMap
    size: int


def _cluster_of(record: PredictionRecord, assignments: Mapping[str, int]) -> int:
    if record.image_id not in assignments:
        raise MismatchedRecordsError(f"记录 {record.image_id} 没有簇编号")
    return int(assignments[record.image_id])


def cluster_composition(records: Iterable[PredictionRecord], assignments: Mapping[str, int],
                        q: int) -> Dict[int, ConfusionMatrix]:
    """
    每个簇内的 TP/TN/FP/FN 计数

    参数:
        records: 带真实类别的预测记录
        assignments: 图像标识 → 簇编号
        q: 簇数

    返回:
        簇编号 → 混淆矩阵（包含空簇）
    """
    counts = {cluster_id: Counter() for cluster_id in range(1, q + 1)}
    for record in records:
        cluster_id = _cluster_of(record, assignments)
        if cluster_id not in counts:
            raise UnknownClusterError(f"记录 {record.image_id} 的簇编号 {cluster_id} 不在 1..{q} 之内")
        outcome = record.outcome
        if outcome is None:
            raise MissingOutcomeError(f"记录 {record.image_id} 缺少真实类别，无法统计混淆结果")
        counts[cluster_id][outcome] += 1
    return {
        cluster_id: ConfusionMatrix(
            tp=counter[ConfusionOutcome.TP], tn=counter[ConfusionOutcome.TN],
            fp=counter[ConfusionOutcome.FP], fn=counter[ConfusionOutcome.FN],
        )
        for cluster_id, counter in counts.items()
    }


def cluster_reliability(assignments: Mapping[str, int], records: Iterable[PredictionRecord],
                        q: int) -> List[ClusterReliability]:
    """
    每个簇的不可靠度 r = (FP+FN)/样本数，空簇只做标记

    参数:
        assignments: 图像标识 → 簇编号
        records: 带真实类别的验证集预测记录
        q: 簇数

    返回:
        按簇编号排列的统计列表
    """
    composition = cluster_composition(records, assignments, q)
    rels = [ClusterReliability(cluster_id, matrix) for cluster_id, matrix in composition.items()]
    for rel in rels:
        if rel.empty:
            logger.warning(f"簇 {rel.cluster_id} 为空，没有可靠度")
    return rels


def select_swap_clusters(rels: Sequence[ClusterReliability], t: float = DEFAULT_THRESHOLD) -> SwapDecision:
    """
    选择 r > t 的簇（严格大于），空簇从不入选

    参数:
        rels: 簇统计
        t: 阈值

    返回:
        交换决策
    """
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"阈值 t 必须在[0,1]之间: {t}")
    swap_set = frozenset(rel.cluster_id for rel in rels if rel.r is not None and rel.r > t)
    return SwapDecision(threshold=t, swap_set=swap_set)


def adjust(records: Sequence[PredictionRecord], assignments: Mapping[str, int],
           decision: SwapDecision) -> List[PredictionRecord]:
    """
    翻转交换簇内所有记录的预测类别，其余记录保持不变

    参数:
        records: 预测记录
        assignments: 图像标识 → 簇编号
        decision: 交换决策

    返回:
        调整后的记录（顺序不变）
    """
    adjusted = []
    for record in records:
        if _cluster_of(record, assignments) in decision.swap_set:
            adjusted.append(record.flipped())
        else:
            adjusted.append(record)
    return adjusted


def prototypes(maps: Sequence[SaliencyMap], assignments: Mapping[str, int], q: int,
               normalize: bool = True) -> List[Prototype]:
    """
    每个簇的原型：成员显著性图的逐元素均值（默认在归一化后的取值域中计算）

    参数:
        maps: 显著性图
        assignments: 图像标识 → 簇编号
        q: 簇数
        normalize: 是否先对每张图做最小-最大归一化

    返回:
        非空簇的原型列表，空簇跳过并给出提示
    """
    members: Dict[int, List[SaliencyMap]] = {cluster_id: [] for cluster_id in range(1, q + 1)}
    for smap in maps:
        if smap.image_id not in assignments:
            continue
        cluster_id = int(assignments[smap.image_id])
        if cluster_id not in members:
            raise UnknownClusterError(f"显著性图 {smap.image_id} 的簇编号 {cluster_id} 不在 1..{q} 之内")
        members[cluster_id].append(smap)

    result = []
    for cluster_id, group in members.items():
        if not group:
            logger.warning(f"簇 {cluster_id} 没有成员，跳过原型")
            continue
        shape = (group[0].height, group[0].width)
        if any((smap.height, smap.width) != shape for smap in group):
            raise ShapeMismatchError(f"簇 {cluster_id} 中显著性图尺寸不一致")
        stack = np.stack([normalize_map(smap.values) if normalize else smap.values for smap in group])
        votes = Counter(smap.explained_class for smap in group)
        explained = max(votes.items(), key=lambda item: (item[1], -int(item[0])))[0]
        result.append(Prototype(
            cluster_id=cluster_id,
            map=SaliencyMap(
                values=stack.mean(axis=0), method=group[0].method, image_id=f"prototype_{cluster_id}",
                explained_class=explained, config={"members": len(group), "normalized": normalize},
            ),
            size=len(group),
        ))
    return result


def annotate(records: Sequence[PredictionRecord], assignments: Mapping[str, int],
             rels: Sequence[ClusterReliability]) -> List[PredictionRecord]:
    """
    为每条记录附加簇编号与不可靠度 r（可靠度为 1 − r）

    参数:
        records: 预测记录
        assignments: 图像标识 → 簇编号
        rels: 验证集簇统计

    返回:
        附加后的记录（数量与顺序不变）
    """
    by_cluster = {rel.cluster_id: rel for rel in rels}
    annotated = []
    for record in records:
        cluster_id = _cluster_of(record, assignments)
        rel = by_cluster.get(cluster_id)
        if rel is None:
            raise UnknownClusterError(f"记录 {record.image_id} 的簇编号 {cluster_id} 未知")
        if rel.empty:
            raise UnknownClusterError(f"记录 {record.image_id} 所在的簇 {cluster_id} 在验证集中为空，没有可靠度")
        annotated.append(record.with_cluster(cluster_id, rel.r))
    return annotated


def error_capture(records: Sequence[PredictionRecord], assignments: Mapping[str, int],
                  decision: SwapDecision) -> Optional[float]:
    """全部错误预测中落入交换簇的比例，没有错误预测时为None"""
    false_records = [record for record in records if record.outcome is not None and record.outcome.is_false]
    if not false_records:
        return None
    captured = sum(1 for record in false_records if _cluster_of(record, assignments) in decision.swap_set)
    return captured / len(false_records)


def threshold_sweep(records: Sequence[PredictionRecord], assignments: Mapping[str, int],
                    rels: Sequence[ClusterReliability],
                    thresholds: Sequence[float] = SWEEP_THRESHOLDS) -> List[Dict[str, Any]]:
    """
    在一组阈值上比较交换结果（仅作报告，不自动选择阈值）

    参数:
        records: 预测记录
        assignments: 图像标识 → 簇编号
        rels: 验证集簇统计
        thresholds: 阈值列表

    返回:
        每个阈值的交换簇集合与调整后精度
    """
    rows = []
    for t in thresholds:
        decision = select_swap_clusters(rels, t)
        summary = accuracy_summary(confusion_matrix(adjust(records, assignments, decision)))
        rows.append({"threshold": t, "swap_set": sorted(decision.swap_set), **summary})
    return rows


def _delta_points(before: Optional[float], after: Optional[float]) -> Optional[float]:
    if before is None or after is None:
        return None
    return (after - before) * 100.0


@dataclass
class ReliabilityReport:
    """可靠度报告：调整前后的混淆矩阵与精度、簇统计、交换决策与逐条记录"""

    split: str
    before: ConfusionMatrix
    after: ConfusionMatrix
    before_accuracy: Dict[str, Optional[float]]
    after_accuracy: Dict[str, Optional[float]]
    clusters: List[ClusterReliability]
    decision: SwapDecision
    records: List[PredictionRecord]
    composition: Dict[int, ConfusionMatrix] = field(default_factory=dict)
    error_capture: Optional[float] = None
    threshold_sweep: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def overall_accuracy_delta(self) -> float:
        """总体精度变化（百分点）"""
        return _delta_points(self.before_accuracy["overall_accuracy"], self.after_accuracy["overall_accuracy"])

    @property
    def average_class_accuracy_delta(self) -> Optional[float]:
        """平均类别精度变化（百分点），缺少类别时为None"""
        return _delta_points(
            self.before_accuracy["average_class_accuracy"], self.after_accuracy["average_class_accuracy"]
        )

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return {
            "split": self.split,
            "before": {"confusion_matrix": self.before.to_dict(), **self.before_accuracy},
            "after": {"confusion_matrix": self.after.to_dict(), **self.after_accuracy},
            "delta_points": {
                "overall_accuracy": self.overall_accuracy_delta,
                "average_class_accuracy": self.average_class_accuracy_delta,
            },
            "decision": self.decision.to_dict(),
            "clusters": [rel.to_dict() for rel in self.clusters],
            "composition": {str(cid): matrix.to_dict() for cid, matrix in sorted(self.composition.items())},
            "error_capture": self.error_capture,
            "threshold_sweep": self.threshold_sweep,
            "records": [record.to_row() for record in self.records],
        }

    def to_json(self) -> str:
        """转换为JSON字符串"""
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)


def report(before_records: Sequence[PredictionRecord], after_records: Sequence[PredictionRecord],
           rels: Sequence[ClusterReliability], decision: SwapDecision, split: str = "val",
           assignments: Optional[Mapping[str, int]] = None) -> ReliabilityReport:
    """
    汇总调整前后的混淆矩阵与精度

    参数:
        before_records: 调整前记录
        after_records: 调整后记录（与调整前一一对应）
        rels: 验证集簇统计
        decision: 交换决策
        split: 数据划分名称
        assignments: 图像标识 → 簇编号，给定时附带簇组成、错误捕获率与阈值扫描

    返回:
        可靠度报告
    """
    before_ids = [record.image_id for record in before_records]
    after_ids = [record.image_id for record in after_records]
    if before_ids != after_ids:
        raise MismatchedRecordsError("调整前后的记录标识不一致")
    for record in list(before_records) + list(after_records):
        if record.truth is None:
            raise MissingOutcomeError(f"记录 {record.image_id} 缺少真实类别，无法生成报告")

    before = confusion_matrix(before_records)
    after = confusion_matrix(after_records)
    result = ReliabilityReport(
        split=split, before=before, after=after,
        before_accuracy=accuracy_summary(before), after_accuracy=accuracy_summary(after),
        clusters=list(rels), decision=decision, records=list(after_records),
    )
    if assignments is not None:
        q = max([rel.cluster_id for rel in rels] or [0])
        result.composition = cluster_composition(before_records, assignments, q)
        result.error_capture = error_capture(before_records, assignments, decision)
        result.threshold_sweep = threshold_sweep(before_records, assignments, rels)
    logger.info(
        f"{split}: 总体精度 {result.before_accuracy['overall_accuracy']:.2%} → "
        f"{result.after_accuracy['overall_accuracy']:.2%}（{result.overall_accuracy_delta:+.2f} 个百分点）"
    )
    return result


def write_report(result: ReliabilityReport, directory) -> Dict[str, Path]:
    """
    写出报告：JSON、簇统计CSV与逐条记录CSV

    参数:
        result: 可靠度报告
        directory: 输出目录

    返回:
        文件类型 → 路径
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": directory / f"{result.split}_report.json",
        "clusters": directory / f"{result.split}_clusters.csv",
        "records": directory / f"{result.split}_records.csv",
    }
    paths["json"].write_text(result.to_json() + "\n", encoding="utf-8")

    columns = ["cluster_id", "total", "false_count", "r", "reliability", "empty", "tp", "tn", "fp", "fn"]
    with open(paths["clusters"], "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for rel in result.clusters:
            row = rel.to_dict()
            row["r"] = "" if row["r"] is None else f"{row['r']:.6f}"
            row["reliability"] = "" if row["reliability"] is None else f"{row['reliability']:.6f}"
            row["empty"] = "1" if row["empty"] else "0"
            writer.writerow(row)

    write_records(result.records, paths["records"])
    return paths


def read_report(path, required: Iterable[str] = ()) -> Dict[str, Any]:
    """
    读取报告JSON

    参数:
        path: 文件路径
        required: 必须存在的顶层字段

    返回:
        报告字典
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"报告文件不存在: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"报告文件无法解析: {path} ({e})")
    if not isinstance(data, dict):
        raise InvalidInputError(f"报告文件顶层必须是对象: {path}")
    missing = sorted(set(required) - set(data))
    if missing:
        raise InvalidInputError(f"报告文件缺少字段 {', '.join(missing)}: {path}")
    return data


def save_reliability(rels: Sequence[ClusterReliability], decision: SwapDecision, path):
    """保存验证集簇统计与交换决策，供其他数据划分复用"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"clusters": [rel.to_dict() for rel in rels], "decision": decision.to_dict()}
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_reliability(path):
    """
    读取 save_reliability 写出的文件

    返回:
        (簇统计列表, 交换决策)
    """
    data = read_report(path, required=("clusters", "decision"))
    try:
        rels = [ClusterReliability.from_dict(entry) for entry in data["clusters"]]
        return rels, SwapDecision.from_dict(data["decision"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"簇可靠度文件内容无效: {path} ({e!r})")
