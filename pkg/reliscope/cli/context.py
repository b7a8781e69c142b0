#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
命令行运行上下文
固定的输出目录布局、输出目录锁，以及各子命令共享的配置与工作线程设置
"""

import csv
import functools
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click

from ..utils.concurrency_settings import WorkerSettings
from ..utils.config import PipelineConfig, load_config
from ..utils.core import SaliencyMethod
from ..utils.errors import (
    CheckpointError, ConfigError, InvalidInputError, OutputLocked, ReliscopeError, exit_code_of,
)
from ..utils.ingest import DatasetManifest, Split, read_manifest
from ..utils.system_monitor import RunLog

logger = logging.getLogger(__name__)

LOCK_NAME = ".reliscope.lock"


@dataclass(frozen=True)
class OutputLayout:
    """输出目录布局：checkpoints/、maps/<方法>/<划分>/、cluster/、reports/<方法>/，合成数据在 data/"""

    root: Path

    @property
    def data_dir(self) -> Path:
        return self.root / "data"

    @property
    def synthetic_manifest(self) -> Path:
        return self.data_dir / "manifest.csv"

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def best_checkpoint(self) -> Path:
        return self.checkpoints_dir / "best.rscp"

    @property
    def last_checkpoint(self) -> Path:
        return self.checkpoints_dir / "last.rscp"

    @property
    def train_metrics(self) -> Path:
        return self.checkpoints_dir / "train_metrics.json"

    def maps_dir(self, method: SaliencyMethod, split: Split) -> Path:
        return self.root / "maps" / SaliencyMethod.parse(method).value / Split.parse(split).value

    def predictions(self, method: SaliencyMethod, split: Split) -> Path:
        return self.maps_dir(method, split) / "predictions.csv"

    def cluster_model(self, method: SaliencyMethod) -> Path:
        return self.root / "cluster" / f"{SaliencyMethod.parse(method).value}.cmodel"

    def assignments(self, method: SaliencyMethod, split: Split) -> Path:
        return self.root / "cluster" / f"{SaliencyMethod.parse(method).value}_{Split.parse(split).value}_assignments.csv"

    def reports_dir(self, method: SaliencyMethod) -> Path:
        return self.root / "reports" / SaliencyMethod.parse(method).value

    def reliability(self, method: SaliencyMethod) -> Path:
        return self.reports_dir(method) / "reliability.json"

    def prototypes_dir(self, method: SaliencyMethod) -> Path:
        return self.reports_dir(method) / "prototypes"


class OutputLock:
    """输出目录锁，拒绝同一输出目录上的并发运行"""

    def __init__(self, root: Path):
        self.path = Path(root) / LOCK_NAME
        self._fd: Optional[int] = None

    def __enter__(self) -> "OutputLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLocked(f"输出目录正被另一个进程使用（如确认无其他运行，请删除 {self.path}）")
        os.write(self._fd, str(os.getpid()).encode("ascii"))
        return self

    def __exit__(self, exc_type, exc, tb):
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            try:
                self.path.unlink()
            except FileNotFoundError:
                pass
        return False


@dataclass
class RunContext:
    """子命令共享的运行上下文"""

    config: PipelineConfig
    settings: WorkerSettings
    show_progress: bool = True

    @property
    def layout(self) -> OutputLayout:
        return OutputLayout(self.config.out)

    @property
    def method(self) -> SaliencyMethod:
        return self.config.saliency.method

    def manifest(self) -> DatasetManifest:
        """清单：配置中的清单路径，或 synth 生成的清单"""
        if self.config.dataset.manifest is not None:
            return read_manifest(self.config.dataset.manifest)
        if self.config.dataset.synthetic is not None:
            if not self.layout.synthetic_manifest.exists():
                raise InvalidInputError(f"合成数据清单不存在，请先运行 synth: {self.layout.synthetic_manifest}")
            return read_manifest(self.layout.synthetic_manifest)
        raise ConfigError("配置中必须指定 dataset.manifest 或 dataset.synthetic")

    def checkpoint_path(self) -> Path:
        """分类器检查点：配置中的路径，或 train 写出的最佳检查点"""
        path = Path(self.config.model.checkpoint) if self.config.model.checkpoint else self.layout.best_checkpoint
        if not path.exists():
            raise CheckpointError(f"检查点不存在，请先运行 train 或在配置中指定 model.checkpoint: {path}")
        return path


def write_assignments(assignments: Dict[str, int], path: Path):
    """写出 图像标识 → 簇编号 表，按图像标识排序"""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["image_id", "cluster_id"])
        for image_id in sorted(assignments):
            writer.writerow([image_id, assignments[image_id]])


def build_context(options: Dict[str, Any]) -> RunContext:
    """由全局命令行选项解析配置，并按工作线程设置限制torch线程数"""
    config = load_config(
        options.get("config"),
        seed=options.get("seed"),
        output_dir=options.get("out"),
        method=options.get("method"),
        split=options.get("split"),
    )
    settings = WorkerSettings()
    settings.apply_torch_threads()
    logger.debug(settings.get_status_text())
    return RunContext(config=config, settings=settings, show_progress=options.get("progress", True))


def invoke_stage(click_ctx: click.Context, command: str, func: Callable[..., Any], **kwargs) -> Any:
    """
    在输出目录锁与运行日志之内执行一个子命令
    本工具包异常映射为退出码，消息输出到标准错误

    参数:
        click_ctx: click上下文，obj 中保存全局选项
        command: 子命令名称
        func: 子命令实现，第一个参数为 RunContext
        kwargs: 子命令自身的参数

    返回:
        子命令实现的返回值
    """
    try:
        run_ctx = build_context(click_ctx.obj or {})
        with OutputLock(run_ctx.config.out):
            run_log = RunLog(run_ctx.config.out, command)
            run_log.start(
                seed=run_ctx.config.seed,
                method=run_ctx.method.value,
                split=run_ctx.config.split.value,
                workers=run_ctx.settings.max_workers,
            )
            run_ctx.config.archive()
            try:
                result = func(run_ctx, **kwargs)
            except BaseException as e:
                run_log.finish(exit_code_of(e), error=str(e))
                raise
            run_log.finish(0)
            return result
    except ReliscopeError as e:
        logger.debug("子命令失败", exc_info=True)
        click.echo(f"错误: {e}", err=True)
        click_ctx.exit(exit_code_of(e))


def stage(command: str):
    """把 func(run_ctx, **options) 包装为click回调"""

    def decorator(func: Callable[..., Any]) -> Callable[..., Any]:
        @functools.wraps(func)
        def wrapper(**kwargs):
            return invoke_stage(click.get_current_context(), command, func, **kwargs)

        return wrapper

    return decorator
