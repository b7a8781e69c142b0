#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
reliability 子命令
统计验证集每个簇的错误比例并选出交换簇
"""

import logging

import click

from ...utils.core import read_records
from ...utils.embed_cluster import load_cluster_model, save_cluster_model
from ...utils.ingest import Split
from ...utils.reliability import (
    ReliabilityReport, adjust, annotate, cluster_reliability, prototypes, report, save_reliability,
    select_swap_clusters, write_report,
)
from ...utils.reporting import save_prototypes
from ...utils.saliency import load_maps
from ..context import RunContext, stage

logger = logging.getLogger(__name__)


def stage_reliability(ctx: RunContext) -> ReliabilityReport:
    """
    计算簇可靠度与交换决策，写出 reliability.json、验证集报告和簇原型，
    并把簇统计写回 .cmodel

    参数:
        ctx: 运行上下文

    返回:
        验证集的可靠度报告
    """
    method = ctx.method
    layout = ctx.layout
    model = load_cluster_model(layout.cluster_model(method))
    assignments = model.assignments
    records = read_records(layout.predictions(method, Split.VAL))

    rels = cluster_reliability(assignments, records, model.q)
    decision = select_swap_clusters(rels, ctx.config.reliability.threshold)
    logger.info(f"交换簇（t={decision.threshold}）: {sorted(decision.swap_set) or '无'}")
    save_reliability(rels, decision, layout.reliability(method))

    model.cluster_stats = [rel.to_dict() for rel in rels]
    save_cluster_model(model, layout.cluster_model(method))

    after = annotate(adjust(records, assignments, decision), assignments, rels)
    result = report(records, after, rels, decision, split=Split.VAL.value, assignments=assignments)
    write_report(result, layout.reports_dir(method))

    maps = load_maps(layout.maps_dir(method, Split.VAL), method)
    save_prototypes(prototypes(maps, assignments, model.q), layout.prototypes_dir(method))
    return result


@click.command("reliability")
@stage("reliability")
def reliability_command(ctx: RunContext):
    """统计簇可靠度并选择交换簇"""
    result = stage_reliability(ctx)
    click.echo(f"swap_set={sorted(result.decision.swap_set)} "
               f"overall_accuracy_delta={result.overall_accuracy_delta:+.2f}")
