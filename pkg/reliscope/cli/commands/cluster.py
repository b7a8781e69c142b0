#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
cluster 子命令
对验证集显著性图做PCA与谱聚类
"""

import logging

import click

from ...utils.embed_cluster import ClusterModel, fit_cluster_model, save_cluster_model
from ...utils.ingest import Split
from ...utils.saliency import load_maps
from ..context import RunContext, stage, write_assignments

logger = logging.getLogger(__name__)


def stage_cluster(ctx: RunContext) -> ClusterModel:
    """
    拟合聚类模型，写出 cluster/<方法>.cmodel 和验证集簇编号表

    参数:
        ctx: 运行上下文

    返回:
        聚类模型
    """
    method = ctx.method
    cfg = ctx.config.cluster
    maps = load_maps(ctx.layout.maps_dir(method, Split.VAL), method)
    model = fit_cluster_model(
        maps, dim=cfg.dim, q=cfg.q, sigma=cfg.sigma, seed=ctx.config.seed, variance_target=cfg.variance_target,
    )
    save_cluster_model(model, ctx.layout.cluster_model(method))
    write_assignments(model.assignments, ctx.layout.assignments(method, Split.VAL))
    gaps = ", ".join(f"{gap:.4f}" for gap in model.eigengaps)
    logger.info(f"拉普拉斯特征值间隔: {gaps}")
    return model


@click.command("cluster")
@stage("cluster")
def cluster_command(ctx: RunContext):
    """对验证集显著性图做谱聚类"""
    stage_cluster(ctx)
    click.echo(str(ctx.layout.cluster_model(ctx.method)))
