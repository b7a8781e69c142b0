#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
report 子命令
由已写出的JSON报告生成汇总的文本报告、HTML报告和图表
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List

import click

from ...utils.errors import InsufficientDataError, InvalidInputError
from ...utils.ingest import Split
from ...utils.reliability import REPORT_KEYS, Prototype, read_report
from ...utils.reporting import (
    generate_html_report, generate_text_report, plot_cluster_composition, plot_prototype_grid,
)
from ...utils.saliency import load_maps
from ..context import RunContext, stage

logger = logging.getLogger(__name__)


def _load_prototypes(directory: Path) -> List[Prototype]:
    if not directory.is_dir():
        return []
    result = []
    for smap in load_maps(directory):
        cluster_id = int(smap.image_id.rsplit("_", 1)[1])
        size = int((smap.config or {}).get("members", 0))
        result.append(Prototype(cluster_id=cluster_id, map=smap, size=size))
    return sorted(result, key=lambda proto: proto.cluster_id)


def stage_report(ctx: RunContext) -> Dict[str, Path]:
    """
    写出 reports/<方法>/ 下的 report.txt、report.html 与PNG图表

    参数:
        ctx: 运行上下文

    返回:
        文件类型 → 路径
    """
    directory = ctx.layout.reports_dir(ctx.method)
    reports: Dict[str, Dict[str, Any]] = {}
    for split in Split:
        path = directory / f"{split.value}_report.json"
        if path.exists():
            reports[split.value] = read_report(path, required=REPORT_KEYS)
    if not reports:
        raise InsufficientDataError(f"{directory} 下没有可汇总的报告，请先运行 reliability / adjust")

    summary: Dict[str, Any] = {"reports": reports, "config": ctx.config.to_dict()}
    if ctx.layout.train_metrics.exists():
        try:
            summary["training"] = json.loads(ctx.layout.train_metrics.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"训练指标文件无法解析: {ctx.layout.train_metrics} ({e})")

    charts: Dict[str, str] = {}
    for split, data in reports.items():
        if data.get("composition"):
            name = f"composition_{split}.png"
            plot_cluster_composition(data["composition"], directory / name, title=f"{split} cluster composition")
            charts[f"composition_{split}"] = name
    protos = _load_prototypes(ctx.layout.prototypes_dir(ctx.method))
    if protos:
        swap_set = reports.get(Split.VAL.value, {}).get("decision", {}).get("swap_set", [])
        plot_prototype_grid(protos, directory / "prototypes.png", swap_set=swap_set)
        charts["prototypes"] = "prototypes.png"

    paths = {"text": directory / "report.txt", "html": directory / "report.html"}
    paths["text"].write_text(generate_text_report(summary), encoding="utf-8")
    paths["html"].write_text(generate_html_report(summary, charts), encoding="utf-8")
    logger.info(f"报告已生成: {paths['text']}")
    return paths


@click.command("report")
@stage("report")
def report_command(ctx: RunContext):
    """汇总报告与图表"""
    paths = stage_report(ctx)
    click.echo(str(paths["text"]))
