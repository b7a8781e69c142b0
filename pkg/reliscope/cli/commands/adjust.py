#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
adjust 子命令
把一个数据划分的显著性图经kNN归入验证集的簇，附加可靠度并交换不可靠簇的预测
"""

import logging
from typing import Dict, List, Optional

import click

from ...utils.core import PredictionRecord, read_records, write_records
from ...utils.embed_cluster import ClusterModel, assign_knn_batch, embed_maps, load_cluster_model
from ...utils.ingest import Split
from ...utils.reliability import (
    ReliabilityReport, adjust, annotate, load_reliability, report, write_report,
)
from ...utils.saliency import load_maps
from ..context import RunContext, stage, write_assignments

logger = logging.getLogger(__name__)


def split_assignments(ctx: RunContext, model: ClusterModel, split: Split) -> Dict[str, int]:
    """验证集直接使用聚类结果，其余划分用kNN传递簇编号"""
    if split is Split.VAL:
        return model.assignments
    maps = load_maps(ctx.layout.maps_dir(ctx.method, split), ctx.method)
    labels = assign_knn_batch(model, embed_maps(model.basis, maps), k=ctx.config.cluster.k)
    return {smap.image_id: label for smap, label in zip(maps, labels)}


def stage_adjust(ctx: RunContext, split: Optional[Split] = None) -> Optional[ReliabilityReport]:
    """
    写出簇编号表、调整后的逐条记录，划分带真实类别时再写出调整前后的报告

    参数:
        ctx: 运行上下文
        split: 数据划分，缺省取配置中的划分

    返回:
        可靠度报告；记录缺少真实类别时为None
    """
    split = Split.parse(split or ctx.config.split)
    method = ctx.method
    layout = ctx.layout
    model = load_cluster_model(layout.cluster_model(method))
    rels, decision = load_reliability(layout.reliability(method))

    assignments = split_assignments(ctx, model, split)
    write_assignments(assignments, layout.assignments(method, split))

    records: List[PredictionRecord] = read_records(layout.predictions(method, split))
    after = annotate(adjust(records, assignments, decision), assignments, rels)
    flipped = sum(1 for record in after if record.adjusted)
    logger.info(f"{split.value}: {len(after)} 条记录中交换了 {flipped} 条")

    if any(record.truth is None for record in records):
        logger.warning(f"{split.value} 缺少真实类别，只写出调整后的记录，不生成报告")
        write_records(after, layout.reports_dir(method) / f"{split.value}_records.csv")
        return None

    result = report(records, after, rels, decision, split=split.value, assignments=assignments)
    write_report(result, layout.reports_dir(method))
    return result


@click.command("adjust")
@stage("adjust")
def adjust_command(ctx: RunContext):
    """按验证集簇可靠度调整预测"""
    result = stage_adjust(ctx)
    if result is not None:
        click.echo(f"overall_accuracy_delta={result.overall_accuracy_delta:+.2f}")
