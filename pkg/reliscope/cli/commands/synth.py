#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
synth 子命令
按配置中的合成参数生成带预置错误的数据集
"""

import logging
from pathlib import Path

import click

from ...utils.errors import ConfigError
from ...utils.ingest import synth_generate, write_synthetic
from ..context import RunContext, stage

logger = logging.getLogger(__name__)


def stage_synth(ctx: RunContext) -> Path:
    """
    生成合成数据集，写入输出目录的 data/

    参数:
        ctx: 运行上下文

    返回:
        清单文件路径
    """
    spec = ctx.config.dataset.synthetic
    if spec is None:
        raise ConfigError("配置中没有 dataset.synthetic，无法生成合成数据")
    dataset = synth_generate(spec, ctx.settings)
    return write_synthetic(dataset, ctx.layout.data_dir)


@click.command("synth")
@stage("synth")
def synth_command(ctx: RunContext):
    """生成合成花椰菜数据集（图像、清单与真值表）"""
    manifest = stage_synth(ctx)
    click.echo(str(manifest))
