#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
显著性图模块
对任意满足分类器接口的模型计算 Grad-CAM、遮挡敏感性图(OSM) 和 LIME 显著性图，
并提供 .smap 文件（小端float32 + JSON说明文件）的读写
"""

import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.linear_model import LinearRegression
from tqdm import tqdm

from .concurrency_settings import WorkerSettings
from .core import ClassLabel, ImageTensor, SaliencyMap, SaliencyMethod, derive_seed
from .errors import (
    ConfigError, ExplainError, InvalidInputError, ReliscopeError, ShapeMismatchError,
    SurrogateDegenerate, UnknownLayerError, UnsupportedExplainer,
)
from .model import Classifier, predict

logger = logging.getLogger(__name__)

PERTURBATION_CHUNK = 64
MAX_EXHAUSTIVE_SEGMENTS = 16


class FillMode(str, Enum):
    """遮挡/替换区域的填充值"""

    DATASET_MEAN = "dataset_mean"
    ZERO = "zero"
    GRAY = "gray"

    @classmethod
    def parse(cls, value: Any) -> "FillMode":
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower().replace("-", "_")
        aliases = {"datasetmean": "dataset_mean", "mean": "dataset_mean"}
        try:
            return cls(aliases.get(normalized, normalized))
        except ValueError:
            raise ConfigError(f"未知的填充方式: {value!r}（可选 dataset_mean / zero / gray）")


@dataclass(frozen=True)
class GradCamConfig:
    """Grad-CAM配置，layer_id为空时使用最后一个卷积层"""

    layer_id: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"layer_id": self.layer_id, "upsampling": "bilinear"}


@dataclass(frozen=True)
class OcclusionConfig:
    """遮挡敏感性配置：窗口边长、步长与填充方式"""

    patch_size: int = 11
    stride: int = 2
    fill: FillMode = FillMode.DATASET_MEAN

    def __post_init__(self):
        object.__setattr__(self, "fill", FillMode.parse(self.fill))
        if not 1 <= self.stride <= self.patch_size:
            raise ConfigError(f"必须满足 1 ≤ stride ≤ patch_size，实际 stride={self.stride}, patch_size={self.patch_size}")

    def to_dict(self) -> Dict[str, Any]:
        return {"patch_size": self.patch_size, "stride": self.stride, "fill": self.fill.value}


@dataclass(frozen=True)
class LimeConfig:
    """
    LIME配置
    网格分割、采样数、遮挡概率、样本权重核（余弦距离上的指数核）与填充方式
    """

    cell_size: int = 32
    sample_count: int = 1000
    mask_probability: float = 0.5
    kernel_width: float = 0.25
    kernel: str = "exponential"
    sampling: str = "random"
    fill: FillMode = FillMode.DATASET_MEAN
    seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "fill", FillMode.parse(self.fill))
        if self.cell_size < 1:
            raise ConfigError(f"cell_size 必须为正整数: {self.cell_size}")
        if not 0.0 < self.mask_probability < 1.0:
            raise ConfigError(f"mask_probability 必须在(0,1)之间: {self.mask_probability}")
        if self.kernel_width <= 0:
            raise ConfigError(f"kernel_width 必须为正数: {self.kernel_width}")
        if self.kernel not in ("exponential", "uniform"):
            raise ConfigError(f"未知的样本权重核: {self.kernel}（可选 exponential / uniform）")
        if self.sampling not in ("random", "exhaustive"):
            raise ConfigError(f"未知的采样方式: {self.sampling}（可选 random / exhaustive）")
        if self.sample_count < 2:
            raise ConfigError(f"sample_count 至少为2: {self.sample_count}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["fill"] = self.fill.value
        return data


ExplainerConfig = Union[GradCamConfig, OcclusionConfig, LimeConfig]

DEFAULT_CONFIGS = {
    SaliencyMethod.GRADCAM: GradCamConfig,
    SaliencyMethod.OSM: OcclusionConfig,
    SaliencyMethod.LIME: LimeConfig,
}


def config_digest(cfg: Union[ExplainerConfig, Dict[str, Any]]) -> str:
    """配置的SHA-256摘要（键排序后的JSON）"""
    data = cfg if isinstance(cfg, dict) else cfg.to_dict()
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def fill_values(image: ImageTensor, fill: FillMode, means: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    按通道的填充值，形状 (C, 1, 1)

    参数:
        image: 被遮挡的图像
        fill: 填充方式
        means: 数据集通道均值，缺省时使用该图像自身的通道均值

    返回:
        填充值数组
    """
    if fill is FillMode.ZERO:
        values = np.zeros(image.channels)
    elif fill is FillMode.GRAY:
        values = np.full(image.channels, 0.5)
    elif means is not None:
        values = np.asarray(means, dtype=np.float64)
        if values.shape != (image.channels,):
            raise ShapeMismatchError(f"通道均值长度 {values.shape} 与图像通道数 {image.channels} 不一致")
    else:
        values = image.data.reshape(image.channels, -1).mean(axis=1)
    return values.astype(np.float32).reshape(-1, 1, 1)


def _classifier_means(classifier: Classifier) -> Optional[Sequence[float]]:
    return getattr(classifier, "channel_means", None)


# ---------------------------------------------------------------------------
# Grad-CAM
# ---------------------------------------------------------------------------

def grad_cam(classifier: Classifier, image: ImageTensor, cls: ClassLabel,
             cfg: GradCamConfig = GradCamConfig(), image_id: str = "") -> SaliencyMap:
    """
    Grad-CAM：通道权重为梯度的空间均值，加权激活求和后ReLU，双线性上采样到图像尺寸

    参数:
        classifier: 支持 activations_and_gradients 的分类器
        image: 输入图像
        cls: 解释的类别
        cfg: Grad-CAM配置
        image_id: 图像标识

    返回:
        显著性图（非负）
    """
    if not callable(getattr(classifier, "activations_and_gradients", None)):
        raise UnsupportedExplainer(f"分类器 {type(classifier).__name__} 不支持梯度，无法计算Grad-CAM")
    layer_id = cfg.layer_id
    if layer_id is None:
        layer_id = getattr(classifier, "last_conv_layer_id", None)
        if layer_id is None:
            raise UnknownLayerError("未指定目标卷积层，且分类器没有提供最后一个卷积层")

    activation, gradient = classifier.activations_and_gradients(image, cls, layer_id)
    weights = gradient.tensor.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activation.tensor, axes=1), 0.0)
    upsampled = F.interpolate(
        torch.from_numpy(np.ascontiguousarray(cam))[None, None],
        size=(image.height, image.width), mode="bilinear", align_corners=False,
    )[0, 0].numpy()
    values = np.maximum(upsampled, 0.0)

    return SaliencyMap(
        values=values, method=SaliencyMethod.GRADCAM, image_id=image_id, explained_class=cls,
        score=predict(classifier, image).score(cls), config=cfg.to_dict(),
    )


# ---------------------------------------------------------------------------
# 遮挡敏感性
# ---------------------------------------------------------------------------

def window_positions(side: int, patch_size: int, stride: int) -> List[int]:
    """窗口起点列表，数量为 floor((side − p)/s) + 1"""
    if patch_size > side:
        raise ConfigError(f"遮挡窗口 {patch_size} 大于图像边长 {side}")
    return list(range(0, side - patch_size + 1, stride))


def occlusion_deltas(classifier: Classifier, image: ImageTensor, cls: ClassLabel,
                     cfg: OcclusionConfig = OcclusionConfig()) -> np.ndarray:
    """
    每个窗口位置的分数变化：原始分数 − 遮挡后分数（softmax后的类别概率）

    参数:
        classifier: 分类器
        image: 输入图像
        cls: 类别
        cfg: 遮挡配置

    返回:
        (行位置数, 列位置数) 的分数变化网格
    """
    rows = window_positions(image.height, cfg.patch_size, cfg.stride)
    cols = window_positions(image.width, cfg.patch_size, cfg.stride)
    fill = fill_values(image, cfg.fill, _classifier_means(classifier))
    original = float(classifier.predict_proba(image.data[None])[0, int(cls)])

    positions = list(itertools.product(rows, cols))
    deltas = np.empty(len(positions))
    p = cfg.patch_size
    for start in range(0, len(positions), PERTURBATION_CHUNK):
        chunk = positions[start:start + PERTURBATION_CHUNK]
        batch = np.repeat(image.data[None], len(chunk), axis=0)
        for index, (y, x) in enumerate(chunk):
            batch[index, :, y:y + p, x:x + p] = fill
        scores = classifier.predict_proba(batch)[:, int(cls)]
        deltas[start:start + len(chunk)] = original - scores
    return deltas.reshape(len(rows), len(cols))


def occlusion_map(classifier: Classifier, image: ImageTensor, cls: ClassLabel,
                  cfg: OcclusionConfig = OcclusionConfig(), image_id: str = "") -> SaliencyMap:
    """
    遮挡敏感性图：每个像素取覆盖它的所有窗口分数变化的平均值，未被覆盖的像素为0
    正值表示遮挡降低了该类别分数（支持该类别的证据）

    参数:
        classifier: 分类器
        image: 输入图像
        cls: 类别
        cfg: 遮挡配置
        image_id: 图像标识

    返回:
        显著性图
    """
    deltas = occlusion_deltas(classifier, image, cls, cfg)
    rows = window_positions(image.height, cfg.patch_size, cfg.stride)
    cols = window_positions(image.width, cfg.patch_size, cfg.stride)
    total = np.zeros((image.height, image.width))
    count = np.zeros((image.height, image.width))
    p = cfg.patch_size
    for i, y in enumerate(rows):
        for j, x in enumerate(cols):
            total[y:y + p, x:x + p] += deltas[i, j]
            count[y:y + p, x:x + p] += 1
    values = np.divide(total, count, out=np.zeros_like(total), where=count > 0)

    return SaliencyMap(
        values=values, method=SaliencyMethod.OSM, image_id=image_id, explained_class=cls,
        score=predict(classifier, image).score(cls), config=cfg.to_dict(),
    )


# ---------------------------------------------------------------------------
# LIME
# ---------------------------------------------------------------------------

def segment_grid(image: Union[ImageTensor, Tuple[int, int]], cell_size: int) -> np.ndarray:
    """
    网格分割：矩形单元按行优先编号，边缘单元可以更小

    参数:
        image: 图像或 (高, 宽)
        cell_size: 单元边长

    返回:
        与图像同尺寸的分割编号矩阵
    """
    height, width = (image.height, image.width) if isinstance(image, ImageTensor) else image
    if not 1 <= cell_size <= max(height, width):
        raise ConfigError(f"cell_size 必须在 [1, {max(height, width)}] 之间: {cell_size}")
    columns = -(-width // cell_size)
    ys = np.arange(height) // cell_size
    xs = np.arange(width) // cell_size
    return ys[:, None] * columns + xs[None, :]


@dataclass
class LimeSurrogate:
    """LIME线性代理模型的拟合结果"""

    coefficients: np.ndarray
    intercept: float
    masks: np.ndarray
    weights: np.ndarray
    targets: np.ndarray
    segments: np.ndarray


def _lime_masks(n_segments: int, cfg: LimeConfig, rng: np.random.Generator) -> np.ndarray:
    """采样掩码，1表示保留该分割，第一行为未扰动的原图"""
    if cfg.sampling == "exhaustive":
        if n_segments > MAX_EXHAUSTIVE_SEGMENTS:
            raise ConfigError(f"穷举采样最多支持 {MAX_EXHAUSTIVE_SEGMENTS} 个分割，实际: {n_segments}")
        combos = np.array(list(itertools.product((1, 0), repeat=n_segments)), dtype=np.int8)
        return combos
    if cfg.sample_count <= n_segments:
        raise ConfigError(f"sample_count ({cfg.sample_count}) 必须大于分割数 ({n_segments})")
    masks = (rng.random((cfg.sample_count, n_segments)) >= cfg.mask_probability).astype(np.int8)
    masks[0] = 1
    return masks


def lime_weights(masks: np.ndarray, cfg: LimeConfig) -> np.ndarray:
    """
    样本权重：余弦距离（相对全1的未扰动掩码）上的指数核 sqrt(exp(−d²/w²))，或均匀权重
    """
    if cfg.kernel == "uniform":
        return np.ones(masks.shape[0])
    kept = masks.sum(axis=1).astype(np.float64)
    norms = np.sqrt(kept) * np.sqrt(masks.shape[1])
    cosine = np.divide(kept, norms, out=np.zeros_like(kept), where=norms > 0)
    distance = 1.0 - cosine
    return np.sqrt(np.exp(-(distance ** 2) / cfg.kernel_width ** 2))


def fit_surrogate(masks: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    带截距的加权最小二乘拟合

    参数:
        masks: (样本数, 分割数) 掩码矩阵
        targets: 分类器分数
        weights: 样本权重

    返回:
        (系数, 截距)
    """
    design = np.hstack([np.ones((masks.shape[0], 1)), masks.astype(np.float64)])
    weighted = design * np.sqrt(weights)[:, None]
    if np.linalg.matrix_rank(weighted) < design.shape[1]:
        raise SurrogateDegenerate(
            f"代理模型的正规方程奇异（{masks.shape[0]} 个样本，{masks.shape[1]} 个分割），请增加采样数"
        )
    regression = LinearRegression(fit_intercept=True)
    regression.fit(masks.astype(np.float64), targets, sample_weight=weights)
    return np.asarray(regression.coef_, dtype=np.float64), float(regression.intercept_)


def lime_surrogate(classifier: Classifier, image: ImageTensor, cls: ClassLabel,
                   cfg: LimeConfig = LimeConfig()) -> LimeSurrogate:
    """
    在扰动样本上拟合LIME线性代理模型

    参数:
        classifier: 分类器
        image: 输入图像
        cls: 类别
        cfg: LIME配置

    返回:
        代理模型
    """
    segments = segment_grid(image, cfg.cell_size)
    n_segments = int(segments.max()) + 1
    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    masks = _lime_masks(n_segments, cfg, rng)
    fill = fill_values(image, cfg.fill, _classifier_means(classifier))

    targets = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], PERTURBATION_CHUNK):
        chunk = masks[start:start + PERTURBATION_CHUNK]
        keep = chunk[:, segments][:, None, :, :].astype(np.float32)
        batch = image.data[None] * keep + fill[None] * (1.0 - keep)
        targets[start:start + len(chunk)] = classifier.predict_proba(batch)[:, int(cls)]

    weights = lime_weights(masks, cfg)
    coefficients, intercept = fit_surrogate(masks, targets, weights)
    return LimeSurrogate(coefficients, intercept, masks, weights, targets, segments)


def lime_map(classifier: Classifier, image: ImageTensor, cls: ClassLabel,
             cfg: LimeConfig = LimeConfig(), image_id: str = "") -> SaliencyMap:
    """LIME显著性图：每个像素取其所在分割的代理模型系数"""
    surrogate = lime_surrogate(classifier, image, cls, cfg)
    return SaliencyMap(
        values=surrogate.coefficients[surrogate.segments], method=SaliencyMethod.LIME,
        image_id=image_id, explained_class=cls,
        score=predict(classifier, image).score(cls), config=cfg.to_dict(),
    )


# ---------------------------------------------------------------------------
# 批量解释
# ---------------------------------------------------------------------------

def explain(classifier: Classifier, image: ImageTensor, method: SaliencyMethod,
            cfg: Optional[ExplainerConfig] = None, cls: Optional[ClassLabel] = None,
            image_id: str = "") -> SaliencyMap:
    """
    计算单张图像的显著性图，默认解释预测类别

    参数:
        classifier: 分类器
        image: 输入图像
        method: 方法
        cfg: 对应方法的配置，缺省时使用默认配置
        cls: 解释的类别，缺省时为预测类别
        image_id: 图像标识

    返回:
        显著性图
    """
    method = SaliencyMethod.parse(method)
    cfg = cfg if cfg is not None else DEFAULT_CONFIGS[method]()
    if not isinstance(cfg, DEFAULT_CONFIGS[method]):
        raise ConfigError(f"{method.value} 需要 {DEFAULT_CONFIGS[method].__name__}，实际: {type(cfg).__name__}")
    if cls is None:
        cls = predict(classifier, image).predicted
    if method is SaliencyMethod.GRADCAM:
        return grad_cam(classifier, image, cls, cfg, image_id=image_id)
    if method is SaliencyMethod.OSM:
        return occlusion_map(classifier, image, cls, cfg, image_id=image_id)
    return lime_map(classifier, image, cls, cfg, image_id=image_id)


def batch_explain(classifier: Classifier, samples: Sequence, method: SaliencyMethod,
                  cfg: Optional[ExplainerConfig] = None, seed: int = 0,
                  settings: Optional[WorkerSettings] = None, show_progress: bool = True) -> List[SaliencyMap]:
    """
    批量计算显著性图，解释类别为每张图像的预测类别
    LIME在配置未指定种子时，以全局种子和图像标识派生每张图像的种子

    参数:
        classifier: 分类器
        samples: 带 image_id / image 属性的样本
        method: 方法
        cfg: 方法配置
        seed: 全局种子
        settings: 工作线程设置
        show_progress: 是否显示进度条

    返回:
        与输入顺序一致的显著性图列表
    """
    method = SaliencyMethod.parse(method)
    cfg = cfg if cfg is not None else DEFAULT_CONFIGS[method]()
    settings = settings or WorkerSettings()
    if getattr(cfg, "fill", None) is FillMode.DATASET_MEAN and _classifier_means(classifier) is None:
        logger.warning("分类器未记录数据集通道均值，dataset_mean 填充退化为每张图像自身的通道均值")

    def run(sample) -> SaliencyMap:
        image_cfg = cfg
        if isinstance(cfg, LimeConfig):
            base = cfg.seed if cfg.seed is not None else seed
            image_cfg = replace(cfg, seed=derive_seed(base, sample.image_id))
        try:
            return explain(classifier, sample.image, method, image_cfg, image_id=sample.image_id)
        except ExplainError:
            raise
        except ReliscopeError as e:
            raise ExplainError(sample.image_id, e) from e
        except (ValueError, RuntimeError) as e:
            raise ExplainError(sample.image_id, InvalidInputError(str(e))) from e

    samples = list(samples)
    with tqdm(total=len(samples), desc=f"{method.value} 显著性图", unit="张",
              disable=not show_progress or None) as progress:
        def tracked(sample) -> SaliencyMap:
            result = run(sample)
            progress.update(1)
            return result

        maps = settings.map(tracked, samples)
    logger.info(f"已计算 {len(maps)} 张 {method.value} 显著性图（{settings.get_status_text()}）")
    return maps


# ---------------------------------------------------------------------------
# .smap 文件
# ---------------------------------------------------------------------------

def map_path(directory, image_id: str, method: SaliencyMethod) -> Path:
    return Path(directory) / f"{image_id}.{SaliencyMethod.parse(method).value}.smap"


def save_map(smap: SaliencyMap, directory) -> Path:
    """
    写出显著性图：行优先小端float32数据，以及同名 .json 说明文件

    参数:
        smap: 显著性图
        directory: 输出目录

    返回:
        .smap 文件路径
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = map_path(directory, smap.image_id, smap.method)
    path.write_bytes(np.ascontiguousarray(smap.values, dtype="<f4").tobytes())

    config = smap.config or {}
    sidecar = {
        "image_id": smap.image_id,
        "method": smap.method.value,
        "explained_class": smap.explained_class.text,
        "height": smap.height,
        "width": smap.width,
        "score_of_explained_class": smap.score,
        "config_digest": config_digest(config),
        "config": config,
    }
    path.with_name(path.name + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    return path


def load_map(path) -> SaliencyMap:
    """
    读取 .smap 文件及其说明文件

    参数:
        path: .smap 文件路径

    返回:
        显著性图（数值为float32精度）
    """
    path = Path(path)
    sidecar_path = path.with_name(path.name + ".json")
    if not path.exists() or not sidecar_path.exists():
        raise InvalidInputError(f"显著性图文件或其说明文件不存在: {path}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidInputError(f"说明文件无法解析: {sidecar_path} ({e})")
    try:
        height, width = int(sidecar["height"]), int(sidecar["width"])
        method, image_id = sidecar["method"], sidecar["image_id"]
        explained_class = ClassLabel.from_text(sidecar["explained_class"])
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"说明文件字段缺失或无效: {sidecar_path} ({e!r})")
    data = path.read_bytes()
    if len(data) != 4 * height * width:
        raise ShapeMismatchError(f"显著性图大小 {len(data)} 字节与说明文件中的 {height}x{width} 不一致: {path}")
    values = np.frombuffer(data, dtype="<f4").reshape(height, width)
    return SaliencyMap(
        values=values, method=method, image_id=image_id, explained_class=explained_class,
        score=sidecar.get("score_of_explained_class"), config=sidecar.get("config"),
    )


def save_maps(maps: Sequence[SaliencyMap], directory) -> List[Path]:
    return [save_map(smap, directory) for smap in maps]


def load_maps(directory, method: Optional[SaliencyMethod] = None) -> List[SaliencyMap]:
    """读取目录下的全部显著性图，按图像标识排序"""
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"显著性图目录不存在: {directory}")
    pattern = f"*.{SaliencyMethod.parse(method).value}.smap" if method is not None else "*.smap"
    maps = [load_map(path) for path in sorted(directory.glob(pattern))]
    return sorted(maps, key=lambda smap: smap.image_id)
