#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
命令行主入口
定义 reliscope 命令组与全局选项，注册各阶段子命令
"""

import logging
import sys

import click

from .. import __version__
from ..utils.core import SaliencyMethod
from ..utils.ingest import Split
from .commands.adjust import adjust_command
from .commands.cluster import cluster_command
from .commands.explain import explain_command
from .commands.reliability import reliability_command
from .commands.report import report_command
from .commands.run import run_command
from .commands.synth import synth_command
from .commands.train import train_command

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbose: bool):
    """配置根日志处理器，输出到标准错误"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


@click.group("reliscope")
@click.version_option(__version__, prog_name="reliscope")
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="JSON配置文件")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="全局种子，覆盖配置")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="输出目录，覆盖配置")
@click.option("--method", type=click.Choice([m.value for m in SaliencyMethod]), default=None,
              help="显著性方法，覆盖配置")
@click.option("--split", type=click.Choice([s.value for s in Split]), default=None, help="数据划分，覆盖配置")
@click.option("-v", "--verbose", is_flag=True, help="输出调试日志")
@click.option("--no-progress", is_flag=True, help="不显示进度条")
@click.pass_context
def cli(ctx: click.Context, config, seed, out, method, split, verbose, no_progress):
    """作物图像分类的事后可靠度评估工具"""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, seed=seed, out=out, method=method, split=split, progress=not no_progress)


for command in (synth_command, train_command, explain_command, cluster_command,
                reliability_command, adjust_command, report_command, run_command):
    cli.add_command(command)


def main():
    """程序入口"""
    cli(prog_name="reliscope")


if __name__ == "__main__":
    main()
