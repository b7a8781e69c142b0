#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
报告生成模块
把可靠度报告渲染为纯文本和HTML，绘制簇组成柱状图与原型网格图，并写出原型图像
"""

import html
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
import numpy as np
from PIL import Image

from .embed_cluster import normalize_map
from .reliability import Prototype
from .saliency import save_map

logger = logging.getLogger(__name__)

# 真实田间图像与ResNet18上的参考精度（百分比），合成数据上无法复现
REFERENCE_ACCURACY = {
    "val": {"before": 76.32, "after": 90.31},
    "test": {"before": 72.41, "after": 88.14},
}

OUTCOME_COLORS = {"tp": "#27ae60", "tn": "#2980b9", "fp": "#f39c12", "fn": "#c0392b"}


def _percent(value: Optional[float]) -> str:
    return "无" if value is None else f"{value * 100:.2f}%"


def _points(value: Optional[float]) -> str:
    return "无" if value is None else f"{value:+.2f}"


def write_pgm(values: np.ndarray, path) -> Path:
    """
    以8位PGM写出二维数组（最小-最大缩放到0..255）

    参数:
        values: 二维数组
        path: 输出路径（.pgm）

    返回:
        输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scaled = np.round(normalize_map(values) * 255.0).astype(np.uint8)
    Image.fromarray(scaled).save(path, format="PPM")
    return path


def save_prototypes(protos: Sequence[Prototype], directory) -> List[Path]:
    """写出每个原型的 .pgm 与 .smap 文件"""
    directory = Path(directory)
    paths = []
    for proto in protos:
        paths.append(write_pgm(proto.map.values, directory / f"prototype_{proto.cluster_id}.pgm"))
        save_map(proto.map, directory)
    logger.info(f"已写出 {len(protos)} 个簇原型: {directory}")
    return paths


def plot_cluster_composition(composition: Dict[str, Dict[str, int]], path, title: str = "") -> Path:
    """
    簇组成堆叠柱状图（每个簇的 TP/TN/FP/FN 数量）

    参数:
        composition: 簇编号 → 混淆矩阵字典
        path: 输出PNG路径
        title: 图标题

    返回:
        输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cluster_ids = sorted(composition, key=int)

    figure = Figure(figsize=(8, 4), dpi=100)
    FigureCanvasAgg(figure)
    ax = figure.add_subplot(111)
    bottom = np.zeros(len(cluster_ids))
    for outcome, color in OUTCOME_COLORS.items():
        heights = np.array([composition[cid][outcome] for cid in cluster_ids], dtype=float)
        ax.bar([str(cid) for cid in cluster_ids], heights, bottom=bottom, color=color, label=outcome.upper())
        bottom += heights
    ax.set_xlabel("cluster")
    ax.set_ylabel("images")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(axis="y", alpha=0.3)
    figure.tight_layout()
    figure.savefig(path, format="png", metadata={"Software": None})
    return path


def color_limits(protos: Sequence[Prototype]) -> Tuple[float, float]:
    """所有原型共用的色标范围，取原型数值的最小值和最大值；全部为常数时取 [v, v+1]"""
    if not protos:
        return 0.0, 1.0
    low = min(float(np.min(proto.map.values)) for proto in protos)
    high = max(float(np.max(proto.map.values)) for proto in protos)
    if high <= low:
        high = low + 1.0
    return low, high


def plot_prototype_grid(protos: Sequence[Prototype], path, swap_set: Sequence[int] = ()) -> Path:
    """
    原型网格图，交换簇的标题标红

    参数:
        protos: 簇原型
        path: 输出PNG路径
        swap_set: 交换簇编号

    返回:
        输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = min(4, max(1, len(protos)))
    rows = max(1, -(-len(protos) // columns))

    low, high = color_limits(protos)

    figure = Figure(figsize=(3 * columns, 3 * rows), dpi=100)
    FigureCanvasAgg(figure)
    for index, proto in enumerate(protos):
        ax = figure.add_subplot(rows, columns, index + 1)
        ax.imshow(proto.map.values, cmap="jet", vmin=low, vmax=high)
        swapped = proto.cluster_id in set(swap_set)
        ax.set_title(f"cluster {proto.cluster_id} (n={proto.size})", color="#c0392b" if swapped else "#2c3e50")
        ax.axis("off")
    figure.tight_layout()
    figure.savefig(path, format="png", metadata={"Software": None})
    return path


def generate_text_report(summary: Dict[str, Any]) -> str:
    """
    生成纯文本格式的可靠度报告

    参数:
        summary: {"reports": {划分: 报告字典}, "config": 配置字典, "training": 训练指标（可选）}

    返回:
        文本格式的报告内容
    """
    config = summary.get("config", {})
    reports = summary.get("reports", {})

    text = """分类可靠度报告
==========================

运行配置
--------------------------
全局种子: {seed}
显著性方法: {method}
PCA维数: {dim}
簇数 q: {q}
核尺度 σ: {sigma}
kNN k: {k}
交换阈值 t: {t}""".format(
        seed=config.get("seed", "未知"),
        method=config.get("saliency", {}).get("method", "未知"),
        dim=config.get("cluster", {}).get("dim", "未知"),
        q=config.get("cluster", {}).get("q", "未知"),
        sigma=config.get("cluster", {}).get("sigma", "未知"),
        k=config.get("cluster", {}).get("k", "未知"),
        t=config.get("reliability", {}).get("threshold", "未知"),
    )

    training = summary.get("training")
    if training:
        text += f"""

训练
--------------------------
最佳轮次: {training.get("best_epoch")}
最佳验证总体精度: {_percent(training.get("best_val_overall_accuracy"))}"""

    for split, data in reports.items():
        before, after, delta = data["before"], data["after"], data["delta_points"]
        text += f"""

{split} 调整前后
--------------------------
交换簇: {", ".join(str(c) for c in data["decision"]["swap_set"]) or "无"}
总体精度: {_percent(before["overall_accuracy"])} → {_percent(after["overall_accuracy"])} ({_points(delta["overall_accuracy"])} 个百分点)
平均类别精度: {_percent(before["average_class_accuracy"])} → {_percent(after["average_class_accuracy"])} ({_points(delta["average_class_accuracy"])} 个百分点)
混淆矩阵(调整前): TP {before["confusion_matrix"]["tp"]} / TN {before["confusion_matrix"]["tn"]} / FP {before["confusion_matrix"]["fp"]} / FN {before["confusion_matrix"]["fn"]}
混淆矩阵(调整后): TP {after["confusion_matrix"]["tp"]} / TN {after["confusion_matrix"]["tn"]} / FP {after["confusion_matrix"]["fp"]} / FN {after["confusion_matrix"]["fn"]}"""
        if data.get("error_capture") is not None:
            text += f"""
落入交换簇的错误预测比例: {_percent(data["error_capture"])}"""

        if data.get("composition"):
            text += """
各簇组成:"""
            for cid, counts in data["composition"].items():
                total = sum(counts.values())
                false = counts["fp"] + counts["fn"]
                ratio = f"{false / total:.2%}" if total else "空"
                text += f"""
  簇 {cid}: {total} 张, TP {counts["tp"]} TN {counts["tn"]} FP {counts["fp"]} FN {counts["fn"]}, 错误比例 {ratio}"""

    val = reports.get("val")
    if val:
        text += """

验证集簇可靠度
--------------------------"""
        for cluster in val["clusters"]:
            if cluster["empty"]:
                text += f"""
簇 {cluster["cluster_id"]}: 空簇"""
            else:
                text += f"""
簇 {cluster["cluster_id"]}: r = {cluster["r"]:.4f}, 可靠度 = {cluster["reliability"]:.4f} ({cluster["false_count"]}/{cluster["total"]})"""

        if val.get("threshold_sweep"):
            text += """

阈值扫描（仅供参考）
--------------------------"""
            for row in val["threshold_sweep"]:
                text += f"""
t = {row["threshold"]:.2f}: 交换簇 {row["swap_set"] or "无"}, 总体精度 {_percent(row["overall_accuracy"])}"""

    text += """

参考数值（真实田间图像与ResNet18，合成数据上无法复现）
--------------------------"""
    for split, values in REFERENCE_ACCURACY.items():
        text += f"""
{split}: 总体精度 {values["before"]:.2f}% → {values["after"]:.2f}%"""

    text += """

由 reliscope 生成
"""
    return text


def generate_html_report(summary: Dict[str, Any], charts: Optional[Dict[str, str]] = None) -> str:
    """
    生成HTML格式的可靠度报告

    参数:
        summary: 同 generate_text_report
        charts: 图表名称 → 相对路径

    返回:
        HTML格式的报告内容
    """
    config = summary.get("config", {})
    reports = summary.get("reports", {})
    charts = charts or {}

    page = f"""<!DOCTYPE html>
<html lang="zh-CN">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>分类可靠度报告</title>
    <style>
        body {{ font-family: Arial, sans-serif; line-height: 1.6; margin: 0; padding: 20px; color: #333; }}
        .container {{ max-width: 1000px; margin: 0 auto; }}
        h1 {{ color: #2c3e50; border-bottom: 2px solid #eee; padding-bottom: 10px; }}
        h2 {{ color: #3498db; margin-top: 20px; }}
        table {{ width: 100%; border-collapse: collapse; margin: 20px 0; }}
        th, td {{ padding: 12px; text-align: left; border-bottom: 1px solid #ddd; }}
        th {{ background-color: #f5f5f5; }}
        .result-good {{ color: #27ae60; }}
        .result-poor {{ color: #c0392b; }}
        .summary {{ background-color: #f8f9fa; padding: 20px; border-radius: 5px; margin: 20px 0; }}
        .chart {{ margin: 30px 0; }}
    </style>
</head>
<body>
    <div class="container">
        <h1>分类可靠度报告</h1>

        <div class="summary">
            <h2>运行配置</h2>
            <p><strong>全局种子:</strong> {html.escape(str(config.get("seed", "未知")))}</p>
            <p><strong>显著性方法:</strong> {html.escape(str(config.get("saliency", {}).get("method", "未知")))}</p>
            <p><strong>PCA维数 / 簇数 q / 核尺度 σ / kNN k:</strong> {config.get("cluster", {}).get("dim", "未知")} / {config.get("cluster", {}).get("q", "未知")} / {config.get("cluster", {}).get("sigma", "未知")} / {config.get("cluster", {}).get("k", "未知")}</p>
            <p><strong>交换阈值 t:</strong> {config.get("reliability", {}).get("threshold", "未知")}</p>
        </div>"""

    for split, data in reports.items():
        before, after, delta = data["before"], data["after"], data["delta_points"]
        css = "result-good" if (delta["overall_accuracy"] or 0) >= 0 else "result-poor"
        page += f"""

        <h2>{html.escape(split)} 调整前后</h2>
        <table>
            <tr><th>指标</th><th>调整前</th><th>调整后</th><th>变化（百分点）</th></tr>
            <tr><td>总体精度</td><td>{_percent(before["overall_accuracy"])}</td><td>{_percent(after["overall_accuracy"])}</td><td class="{css}">{_points(delta["overall_accuracy"])}</td></tr>
            <tr><td>平均类别精度</td><td>{_percent(before["average_class_accuracy"])}</td><td>{_percent(after["average_class_accuracy"])}</td><td>{_points(delta["average_class_accuracy"])}</td></tr>"""
        for outcome in ("tp", "tn", "fp", "fn"):
            page += f"""
            <tr><td>{outcome.upper()}</td><td>{before["confusion_matrix"][outcome]}</td><td>{after["confusion_matrix"][outcome]}</td><td></td></tr>"""
        page += f"""
        </table>
        <p><strong>交换簇:</strong> {", ".join(str(c) for c in data["decision"]["swap_set"]) or "无"}</p>"""
        if data.get("error_capture") is not None:
            page += f"""
        <p><strong>落入交换簇的错误预测比例:</strong> {_percent(data["error_capture"])}</p>"""
        chart = charts.get(f"composition_{split}")
        if chart:
            page += f"""
        <div class="chart"><img src="{html.escape(chart)}" alt="{html.escape(split)} cluster composition"></div>"""

    val = reports.get("val")
    if val:
        page += """

        <h2>验证集簇可靠度</h2>
        <table>
            <tr><th>簇</th><th>样本数</th><th>错误数</th><th>r</th><th>可靠度</th></tr>"""
        for cluster in val["clusters"]:
            if cluster["empty"]:
                page += f"""
            <tr><td>{cluster["cluster_id"]}</td><td>0</td><td colspan="3">空簇</td></tr>"""
            else:
                swapped = cluster["cluster_id"] in val["decision"]["swap_set"]
                page += f"""
            <tr><td>{cluster["cluster_id"]}</td><td>{cluster["total"]}</td><td>{cluster["false_count"]}</td><td class="{"result-poor" if swapped else ""}">{cluster["r"]:.4f}</td><td>{cluster["reliability"]:.4f}</td></tr>"""
        page += """
        </table>"""

        if val.get("threshold_sweep"):
            page += """

        <h2>阈值扫描（仅供参考）</h2>
        <table>
            <tr><th>t</th><th>交换簇</th><th>总体精度</th><th>平均类别精度</th></tr>"""
            for row in val["threshold_sweep"]:
                page += f"""
            <tr><td>{row["threshold"]:.2f}</td><td>{", ".join(str(c) for c in row["swap_set"]) or "无"}</td><td>{_percent(row["overall_accuracy"])}</td><td>{_percent(row["average_class_accuracy"])}</td></tr>"""
            page += """
        </table>"""

    chart = charts.get("prototypes")
    if chart:
        page += f"""

        <h2>簇原型</h2>
        <div class="chart"><img src="{html.escape(chart)}" alt="cluster prototypes"></div>"""

    page += """

        <div style="margin-top: 40px; text-align: center; color: #777; font-size: 0.8em;">
            <p>由 reliscope 生成</p>
        </div>
    </div>
</body>
</html>
"""
    return page
