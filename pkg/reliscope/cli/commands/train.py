#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
train 子命令
在训练集上训练分类器，按验证集总体精度保留最佳检查点
"""

import json
import logging
from pathlib import Path
from typing import Optional

import click

from ...utils.errors import CheckpointError
from ...utils.ingest import Split, augment, channel_means, load_dataset
from ...utils.model import (
    MiniCnn, TrainResult, default_architecture, read_checkpoint, save_checkpoint, train,
)
from ..context import RunContext, stage

logger = logging.getLogger(__name__)


def stage_train(ctx: RunContext, resume: Optional[str] = None) -> TrainResult:
    """
    训练分类器，写出 best.rscp、last.rscp 与 train_metrics.json

    参数:
        ctx: 运行上下文
        resume: 带优化器状态的检查点路径（通常是 last.rscp）

    返回:
        训练结果
    """
    cfg = ctx.config.model.train
    data = load_dataset(ctx.manifest(), ctx.config.dataset.side, [Split.TRAIN, Split.VAL], ctx.settings)
    train_samples = data[Split.TRAIN]
    if ctx.config.dataset.augmentation is not None:
        train_samples = augment(train_samples, ctx.config.dataset.augmentation, ctx.config.seed)
        logger.info(f"增广后训练样本 {len(train_samples)} 个")

    resume_state = None
    if resume is not None:
        checkpoint = read_checkpoint(resume)
        if checkpoint.resume is None:
            raise CheckpointError(f"检查点不含优化器状态，无法续训: {resume}")
        model = checkpoint.model
        resume_state = checkpoint.resume
        best_path = Path(resume).with_name("best.rscp")
        if best_path.exists():
            resume_state["best_state"] = read_checkpoint(best_path).model.state_dict()
    else:
        channels = data[Split.TRAIN][0].image.channels
        model = MiniCnn(default_architecture(channels), seed=ctx.config.seed)
        model.input_side = ctx.config.dataset.side
        model.channel_means = channel_means(data[Split.TRAIN])

    result = train(model, train_samples, data[Split.VAL], cfg, resume=resume_state,
                   show_progress=ctx.show_progress)

    layout = ctx.layout
    save_checkpoint(result.model, layout.best_checkpoint, epoch=result.best_epoch)
    last_epoch = result.history[-1].epoch if result.history else None
    save_checkpoint(result.final_model, layout.last_checkpoint, epoch=last_epoch,
                    optimizer_state=result.optimizer_state)
    layout.train_metrics.write_text(
        json.dumps(result.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if result.best_val_accuracy is not None:
        logger.info(f"最佳轮次 {result.best_epoch}，验证总体精度 {result.best_val_accuracy:.2%}")
    return result


@click.command("train")
@click.option("--resume", type=click.Path(dir_okay=False), default=None,
              help="从带优化器状态的检查点继续训练")
@stage("train")
def train_command(ctx: RunContext, resume: Optional[str]):
    """训练分类器"""
    stage_train(ctx, resume=resume)
    click.echo(str(ctx.layout.best_checkpoint))
