#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
explain 子命令
对一个数据划分做预测并计算显著性图
"""

import logging
from typing import List, Optional

import click

from ...utils.core import PredictionRecord, SaliencyMap, SaliencyMethod, write_records
from ...utils.ingest import Split, load_dataset
from ...utils.model import load_checkpoint, predict_records
from ...utils.saliency import batch_explain, save_maps
from ..context import RunContext, stage

logger = logging.getLogger(__name__)


def stage_explain(ctx: RunContext, split: Optional[Split] = None,
                  method: Optional[SaliencyMethod] = None) -> List[SaliencyMap]:
    """
    写出 maps/<方法>/<划分>/ 下的 predictions.csv 与每张图像的 .smap 文件

    参数:
        ctx: 运行上下文
        split: 数据划分，缺省取配置中的划分
        method: 显著性方法，缺省取配置中的方法

    返回:
        显著性图列表
    """
    split = Split.parse(split or ctx.config.split)
    method = SaliencyMethod.parse(method or ctx.method)
    model = load_checkpoint(ctx.checkpoint_path())
    samples = load_dataset(ctx.manifest(), ctx.config.dataset.side, [split], ctx.settings)[split]

    records: List[PredictionRecord] = predict_records(model, samples)
    write_records(records, ctx.layout.predictions(method, split))

    maps = batch_explain(
        model, samples, method, ctx.config.saliency.explainer(method),
        seed=ctx.config.seed, settings=ctx.settings, show_progress=ctx.show_progress,
    )
    save_maps(maps, ctx.layout.maps_dir(method, split))
    logger.info(f"{split.value}: 已写出 {len(maps)} 张 {method.value} 显著性图")
    return maps


@click.command("explain")
@stage("explain")
def explain_command(ctx: RunContext):
    """预测并计算显著性图"""
    stage_explain(ctx)
    click.echo(str(ctx.layout.maps_dir(ctx.method, ctx.config.split)))
