#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
run 子命令
按顺序执行整条流程，结果与逐个运行各子命令相同
"""

import logging
from typing import Optional

import click

from ...utils.ingest import Split
from ...utils.reliability import ReliabilityReport
from ..context import RunContext, stage
from .adjust import stage_adjust
from .cluster import stage_cluster
from .explain import stage_explain
from .reliability import stage_reliability
from .report import stage_report
from .synth import stage_synth
from .train import stage_train

logger = logging.getLogger(__name__)


def stage_run(ctx: RunContext) -> Optional[ReliabilityReport]:
    """
    合成（配置了合成数据时）→ 训练（未指定检查点时）→ 验证集与目标划分的显著性图 →
    聚类 → 可靠度 → 调整 → 汇总报告

    参数:
        ctx: 运行上下文

    返回:
        目标划分的可靠度报告
    """
    if ctx.config.dataset.synthetic is not None:
        stage_synth(ctx)
    if ctx.config.model.checkpoint is None:
        stage_train(ctx)
    else:
        logger.info(f"使用已有检查点 {ctx.config.model.checkpoint}，跳过训练")

    split = ctx.config.split
    stage_explain(ctx, Split.VAL)
    if split is not Split.VAL:
        stage_explain(ctx, split)
    stage_cluster(ctx)
    stage_reliability(ctx)
    result = stage_adjust(ctx, split)
    stage_report(ctx)
    return result


@click.command("run")
@stage("run")
def run_command(ctx: RunContext):
    """执行完整流程"""
    result = stage_run(ctx)
    if result is not None:
        click.echo(f"{result.split}: overall_accuracy_delta={result.overall_accuracy_delta:+.2f}")
