#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
嵌入与聚类模块
显著性图向量化后做PCA降维，在高斯相似度上进行对称归一化拉普拉斯谱聚类，
并用kNN把簇编号传递给新的显著性图；聚类模型以 .cmodel 文件保存
"""

import json
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.cluster import KMeans

from .core import SaliencyMap
from .errors import (
    CheckpointError, CheckpointVersionMismatch, ConfigError, InsufficientSamples, InvalidInputError,
    IsolatedSample, NumericalError, ShapeMismatchError, TruncatedCheckpoint,
)

logger = logging.getLogger(__name__)

CLUSTER_MODEL_MAGIC = b"RSCM"
CLUSTER_MODEL_VERSION = 1
CLUSTER_MODEL_KEYS = frozenset({
    "height", "width", "dim", "image_ids", "assignments", "explained_variance_ratios", "q", "sigma", "scale", "seed",
})


def normalize_map(values: np.ndarray) -> np.ndarray:
    """单张图最小-最大归一化到[0,1]，常数图变为全0"""
    values = np.asarray(values, dtype=np.float64)
    low, high = values.min(), values.max()
    if high - low <= 0:
        return np.zeros_like(values)
    return (values - low) / (high - low)


def vectorize(maps: Sequence[SaliencyMap]) -> np.ndarray:
    """
    归一化并展平一组显著性图

    参数:
        maps: 尺寸一致的显著性图

    返回:
        (n, H×W) 矩阵
    """
    if not maps:
        return np.zeros((0, 0))
    shape = (maps[0].height, maps[0].width)
    for smap in maps:
        if (smap.height, smap.width) != shape:
            raise ShapeMismatchError(
                f"显著性图 {smap.image_id} 尺寸 {smap.height}x{smap.width} 与 {shape[0]}x{shape[1]} 不一致"
            )
    return np.stack([normalize_map(smap.values).ravel() for smap in maps])


def _round_f32(array: np.ndarray) -> np.ndarray:
    return np.asarray(array, dtype=np.float32).astype(np.float64)


@dataclass
class PcaBasis:
    """PCA基：均值、按方差递减排列的正交主成分及其解释方差比"""

    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratios: np.ndarray
    height: int
    width: int

    @property
    def dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def length(self) -> int:
        return self.height * self.width


@dataclass
class Embedding:
    """显著性图在PCA空间中的坐标"""

    image_id: str
    vector: np.ndarray


def fit_pca(maps: Sequence[SaliencyMap], dim: int = 50, variance_target: Optional[float] = None) -> PcaBasis:
    """
    对归一化、向量化后的显著性图做中心化PCA（奇异值分解）

    参数:
        maps: 显著性图
        dim: 保留的主成分数
        variance_target: 若给定，则取累计解释方差达到该比例的最小主成分数（覆盖dim）

    返回:
        PCA基
    """
    if variance_target is not None and not 0.0 < variance_target <= 1.0:
        raise ConfigError(f"variance_target 必须在(0,1]之间: {variance_target}")
    if dim < 1:
        raise ConfigError(f"dim 必须为正整数: {dim}")
    n = len(maps)
    if variance_target is None and n < dim + 1:
        raise InsufficientSamples(f"PCA需要至少 {dim + 1} 张显著性图，实际只有 {n} 张")
    if n < 2:
        raise InsufficientSamples(f"PCA需要至少 2 张显著性图，实际只有 {n} 张")

    data = vectorize(maps)
    if not np.all(np.isfinite(data)):
        raise NumericalError("显著性图含有NaN或无穷值，无法计算PCA")
    mean = data.mean(axis=0)
    try:
        _, singular_values, vt = np.linalg.svd(data - mean, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"PCA奇异值分解失败: {e}")

    # 符号约定：每个主成分绝对值最大的分量为正
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    vt = vt * signs[:, None]

    variance = singular_values ** 2
    total = variance.sum()
    ratios = variance / total if total > 0 else np.zeros_like(variance)

    if variance_target is not None:
        reached = np.nonzero(np.cumsum(ratios) >= variance_target - 1e-12)[0]
        dim = int(reached[0]) + 1 if reached.size else vt.shape[0]
        logger.info(f"累计解释方差达到 {variance_target:.0%} 需要 {dim} 个主成分")
    if dim > vt.shape[0]:
        logger.warning(f"主成分数 {dim} 超过可用的 {vt.shape[0]} 个，已截断")
        dim = vt.shape[0]

    return PcaBasis(
        mean=_round_f32(mean),
        components=_round_f32(vt[:dim]),
        explained_variance_ratios=ratios[:dim],
        height=maps[0].height,
        width=maps[0].width,
    )


def project_vector(basis: PcaBasis, vector: np.ndarray) -> np.ndarray:
    """components × (vector − mean)"""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape[-1] != basis.length:
        raise ShapeMismatchError(f"向量长度 {vector.shape[-1]} 与PCA基的 {basis.length} 不一致")
    return (vector - basis.mean) @ basis.components.T


def project(basis: PcaBasis, smap: SaliencyMap) -> Embedding:
    """
    把一张显著性图（先归一化）投影到PCA空间

    参数:
        basis: PCA基
        smap: 显著性图

    返回:
        嵌入
    """
    if (smap.height, smap.width) != (basis.height, basis.width):
        raise ShapeMismatchError(
            f"显著性图 {smap.image_id} 尺寸 {smap.height}x{smap.width} 与PCA基的 {basis.height}x{basis.width} 不一致"
        )
    return Embedding(smap.image_id, project_vector(basis, normalize_map(smap.values).ravel()))


def embed_maps(basis: PcaBasis, maps: Sequence[SaliencyMap]) -> np.ndarray:
    """批量投影，结果取float32精度，训练与传递共用同一路径"""
    if not maps:
        return np.zeros((0, basis.dim))
    for smap in maps:
        if (smap.height, smap.width) != (basis.height, basis.width):
            raise ShapeMismatchError(
                f"显著性图 {smap.image_id} 尺寸 {smap.height}x{smap.width} 与PCA基的 {basis.height}x{basis.width} 不一致"
            )
    return _round_f32(project_vector(basis, vectorize(maps)))


def rms_pairwise_distance(vectors: np.ndarray) -> float:
    """成对欧氏距离的均方根，所有点重合时返回1"""
    if vectors.shape[0] < 2:
        return 1.0
    scale = float(np.sqrt(np.mean(pdist(vectors, "sqeuclidean"))))
    return scale if scale > 0 else 1.0


def affinity(embeddings: Union[np.ndarray, Sequence[Embedding]], sigma: float = 0.2) -> np.ndarray:
    """
    高斯相似度 A_ij = exp(−‖x_i − x_j‖² / (2σ²))，对角线为1

    参数:
        embeddings: (n, dim) 数组或嵌入列表（应已标准化）
        sigma: 核尺度

    返回:
        对称相似度矩阵
    """
    if sigma <= 0:
        raise ConfigError(f"核尺度必须为正数: {sigma}")
    if not isinstance(embeddings, np.ndarray):
        embeddings = np.stack([embedding.vector for embedding in embeddings])
    points = np.asarray(embeddings, dtype=np.float64)
    squared = cdist(points, points, "sqeuclidean")
    matrix = np.exp(-squared / (2.0 * sigma ** 2))
    matrix = 0.5 * (matrix + matrix.T)
    np.fill_diagonal(matrix, 1.0)
    return matrix


@dataclass
class SpectralResult:
    """谱聚类结果：标签1..q、最小的若干特征值及所用特征向量"""

    labels: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian: np.ndarray


def spectral_cluster(matrix: np.ndarray, q: int = 8, seed: int = 0) -> SpectralResult:
    """
    对称归一化拉普拉斯谱聚类：
    L_sym = I − D^{-1/2} A D^{-1/2}（A对角线置0），取最小的q个特征值对应的特征向量，
    按行单位化后做k-means（k-means++初始化，10次重启取惯性最小，最多300次迭代）

    参数:
        matrix: 相似度矩阵
        q: 簇数
        seed: k-means种子

    返回:
        谱聚类结果，标签按首次出现顺序编号为1..q
    """
    n = matrix.shape[0]
    if q < 2:
        raise ConfigError(f"簇数至少为2: {q}")
    if n < q:
        raise InsufficientSamples(f"样本数 {n} 少于簇数 {q}")

    weights = np.array(matrix, dtype=np.float64)
    np.fill_diagonal(weights, 0.0)
    degree = weights.sum(axis=1)
    isolated = np.nonzero(degree <= 0)[0]
    if isolated.size:
        raise IsolatedSample(f"第 {int(isolated[0])} 个样本与其他样本的相似度全为0，无法归一化")

    inv_sqrt = 1.0 / np.sqrt(degree)
    laplacian = np.eye(n) - inv_sqrt[:, None] * weights * inv_sqrt[None, :]
    laplacian = 0.5 * (laplacian + laplacian.T)
    try:
        eigenvalues, eigenvectors = np.linalg.eigh(laplacian)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"拉普拉斯矩阵特征分解失败: {e}")

    vectors = eigenvectors[:, :q]
    signs = np.sign(vectors[np.argmax(np.abs(vectors), axis=0), np.arange(q)])
    signs[signs == 0] = 1.0
    vectors = vectors * signs[None, :]

    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    rows = np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)

    kmeans = KMeans(n_clusters=q, init="k-means++", n_init=10, max_iter=300, random_state=int(seed) % (2 ** 32))
    raw = kmeans.fit_predict(rows)

    # 按首次出现顺序重新编号，使标签与k-means内部编号无关
    mapping: Dict[int, int] = {}
    for value in raw:
        if value not in mapping:
            mapping[value] = len(mapping) + 1
    labels = np.array([mapping[value] for value in raw], dtype=np.int64)

    keep = min(n, q + 1)
    return SpectralResult(labels=labels, eigenvalues=eigenvalues[:keep], eigenvectors=vectors, laplacian=laplacian)


@dataclass
class ClusterModel:
    """聚类模型：PCA基、训练嵌入及其簇编号，以及kNN传递所需的标准化尺度"""

    basis: PcaBasis
    image_ids: List[str]
    embeddings: np.ndarray
    labels: np.ndarray
    q: int = 8
    sigma: float = 0.2
    scale: float = 1.0
    seed: int = 0
    variance_target: Optional[float] = None
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cluster_stats: Optional[List[Dict[str, Any]]] = None

    @property
    def assignments(self) -> Dict[str, int]:
        return {image_id: int(label) for image_id, label in zip(self.image_ids, self.labels)}

    @property
    def eigengaps(self) -> np.ndarray:
        return np.diff(self.eigenvalues)

    @property
    def standardized(self) -> np.ndarray:
        return self.embeddings / self.scale

    def cluster_sizes(self) -> Dict[int, int]:
        sizes = {cluster_id: 0 for cluster_id in range(1, self.q + 1)}
        for label in self.labels:
            sizes[int(label)] += 1
        return sizes


def fit_cluster_model(maps: Sequence[SaliencyMap], dim: int = 50, q: int = 8, sigma: float = 0.2,
                      seed: int = 0, variance_target: Optional[float] = None) -> ClusterModel:
    """
    依次执行归一化、PCA、标准化、高斯相似度与谱聚类

    参数:
        maps: 验证集显著性图
        dim: PCA维数
        q: 簇数
        sigma: 高斯核尺度
        seed: k-means种子
        variance_target: 可选的累计解释方差目标

    返回:
        聚类模型
    """
    image_ids = [smap.image_id for smap in maps]
    if len(set(image_ids)) != len(image_ids):
        raise InvalidInputError("显著性图的图像标识有重复")

    basis = fit_pca(maps, dim=dim, variance_target=variance_target)
    embeddings = embed_maps(basis, maps)
    scale = rms_pairwise_distance(embeddings)
    result = spectral_cluster(affinity(embeddings / scale, sigma), q=q, seed=seed)

    model = ClusterModel(
        basis=basis, image_ids=image_ids, embeddings=embeddings, labels=result.labels,
        q=q, sigma=sigma, scale=scale, seed=seed, variance_target=variance_target,
        eigenvalues=result.eigenvalues,
    )
    sizes = ", ".join(f"{cluster_id}:{size}" for cluster_id, size in model.cluster_sizes().items())
    logger.info(f"谱聚类完成: {len(maps)} 张图, PCA维数 {basis.dim}, 簇大小 {sizes}")
    logger.debug(f"拉普拉斯矩阵最小特征值: {np.round(result.eigenvalues, 6).tolist()}")
    return model


def assign_knn_batch(model: ClusterModel, queries: Union[np.ndarray, Sequence[Embedding]], k: int = 5) -> List[int]:
    """
    kNN簇编号传递：k个最近训练嵌入中的多数簇；平票时取平均距离更小者，再取簇编号更小者

    参数:
        model: 聚类模型
        queries: (m, dim) 嵌入数组或嵌入列表
        k: 近邻数

    返回:
        簇编号列表
    """
    n = len(model.image_ids)
    if k < 1:
        raise ConfigError(f"k 必须为正整数: {k}")
    if k > n:
        raise InsufficientSamples(f"k={k} 大于训练嵌入数 {n}")
    if not isinstance(queries, np.ndarray):
        queries = np.stack([query.vector for query in queries]) if len(queries) else np.zeros((0, model.basis.dim))
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[0] == 0:
        return []
    if queries.shape[1] != model.basis.dim:
        raise ShapeMismatchError(f"嵌入维数 {queries.shape[1]} 与聚类模型的 {model.basis.dim} 不一致")

    distances = cdist(queries / model.scale, model.standardized)
    assigned: List[int] = []
    for row in distances:
        nearest = np.argsort(row, kind="stable")[:k]
        votes: Dict[int, List[float]] = defaultdict(list)
        for index in nearest:
            votes[int(model.labels[index])].append(float(row[index]))
        best = min(votes.items(), key=lambda item: (-len(item[1]), float(np.mean(item[1])), item[0]))
        assigned.append(best[0])
    return assigned


def assign_knn(model: ClusterModel, query: Union[Embedding, np.ndarray], k: int = 5) -> int:
    """单个嵌入的kNN簇编号"""
    vector = query.vector if isinstance(query, Embedding) else query
    return assign_knn_batch(model, np.asarray(vector)[None, :], k=k)[0]


def save_cluster_model(model: ClusterModel, path):
    """
    写出 .cmodel：魔数RSCM、u16版本、u32头长度、JSON头，随后为小端float32的均值、主成分和训练嵌入

    参数:
        model: 聚类模型
        path: 输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "q": model.q,
        "sigma": model.sigma,
        "scale": model.scale,
        "seed": model.seed,
        "dim": model.basis.dim,
        "height": model.basis.height,
        "width": model.basis.width,
        "variance_target": model.variance_target,
        "explained_variance_ratios": [float(v) for v in model.basis.explained_variance_ratios],
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "image_ids": list(model.image_ids),
        "assignments": [int(label) for label in model.labels],
        "cluster_stats": model.cluster_stats,
    }
    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CLUSTER_MODEL_MAGIC)
        f.write(struct.pack("<HI", CLUSTER_MODEL_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for block in (model.basis.mean, model.basis.components, model.embeddings):
            f.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
    logger.info(f"聚类模型已保存: {path}")


def load_cluster_model(path) -> ClusterModel:
    """
    读取 .cmodel 文件

    参数:
        path: 文件路径

    返回:
        聚类模型
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"聚类模型文件不存在: {path}")
    data = path.read_bytes()
    if len(data) < 10:
        raise TruncatedCheckpoint(f"聚类模型文件被截断: {path}")
    if data[:4] != CLUSTER_MODEL_MAGIC:
        raise CheckpointError(f"不是聚类模型文件: {path}")
    version, header_length = struct.unpack("<HI", data[4:10])
    if version != CLUSTER_MODEL_VERSION:
        raise CheckpointVersionMismatch(f"聚类模型格式版本 {version} 与当前支持的 {CLUSTER_MODEL_VERSION} 不一致")
    offset = 10 + header_length
    if len(data) < offset:
        raise TruncatedCheckpoint(f"聚类模型文件被截断: {path}")
    try:
        header = json.loads(data[10:offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"聚类模型头部无法解析: {path} ({e})")

    missing = sorted(CLUSTER_MODEL_KEYS - set(header)) if isinstance(header, dict) else ["<object>"]
    if missing:
        raise CheckpointError(f"聚类模型头部缺少字段 {', '.join(missing)}: {path}")
    try:
        length = int(header["height"]) * int(header["width"])
        dim = int(header["dim"])
        n = len(header["image_ids"])
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"聚类模型头部字段无效: {path} ({e})")
    sizes = [length, dim * length, n * dim]
    if len(data) != offset + 4 * sum(sizes):
        raise TruncatedCheckpoint(f"聚类模型数据长度与头部不一致: {path}")
    blocks = []
    for size in sizes:
        blocks.append(np.frombuffer(data, dtype="<f4", count=size, offset=offset).astype(np.float64))
        offset += 4 * size

    basis = PcaBasis(
        mean=blocks[0],
        components=blocks[1].reshape(dim, length),
        explained_variance_ratios=np.asarray(header["explained_variance_ratios"], dtype=np.float64),
        height=header["height"],
        width=header["width"],
    )
    return ClusterModel(
        basis=basis,
        image_ids=list(header["image_ids"]),
        embeddings=blocks[2].reshape(n, dim),
        labels=np.asarray(header["assignments"], dtype=np.int64),
        q=header["q"],
        sigma=header["sigma"],
        scale=header["scale"],
        seed=header["seed"],
        variance_target=header.get("variance_target"),
        eigenvalues=np.asarray(header.get("eigenvalues", []), dtype=np.float64),
        cluster_stats=header.get("cluster_stats"),
    )
