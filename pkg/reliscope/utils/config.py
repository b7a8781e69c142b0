#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
运行配置模块
一个JSON文件描述整条流程：数据集、模型、显著性方法、聚类参数、交换阈值、输出目录与全局种子
优先级：命令行参数 > 配置文件 > 默认值
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional

from .core import ClassLabel, SaliencyMethod
from .errors import ConfigError
from .ingest import DEFAULT_IMAGE_SIDE, AugmentationPolicy, Split, SyntheticSpec
from .model import TrainConfig
from .saliency import GradCamConfig, LimeConfig, OcclusionConfig

logger = logging.getLogger(__name__)

CONFIG_ARCHIVE_NAME = "config.json"
MAX_SEED = 2 ** 64 - 1


def _build(cls, data: Optional[Dict[str, Any]], section: str, **overrides):
    """由字典构建数据类，未知键报错"""
    data = dict(data or {})
    data.update(overrides)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"配置节 {section} 含未知键: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"配置节 {section} 无效: {e}")


@dataclass(frozen=True)
class DatasetConfig:
    """数据集配置：清单路径或合成数据参数（二选一）"""

    manifest: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    image_side: Optional[int] = None
    augmentation: Optional[AugmentationPolicy] = field(default_factory=AugmentationPolicy)

    @property
    def side(self) -> int:
        if self.image_side is not None:
            return self.image_side
        if self.synthetic is not None:
            return self.synthetic.side
        return DEFAULT_IMAGE_SIDE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "manifest": self.manifest,
            "synthetic": _spec_dict(self.synthetic) if self.synthetic is not None else None,
            "image_side": self.image_side,
            "augmentation": _policy_dict(self.augmentation) if self.augmentation is not None else None,
        }


def _spec_dict(spec: SyntheticSpec) -> Dict[str, Any]:
    data = asdict(spec)
    data["radius_range"] = list(spec.radius_range)
    data["planted_error_signature"] = spec.planted_error_signature.value
    return data


def _policy_dict(policy: AugmentationPolicy) -> Dict[str, Any]:
    return {
        "operations": list(policy.operations),
        "base_multiplier": policy.base_multiplier,
        "minority_boost": policy.minority_boost,
        "target_class": policy.target_class.text,
    }


@dataclass(frozen=True)
class ModelConfig:
    """模型配置：已有检查点路径，或训练参数"""

    checkpoint: Optional[str] = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> Dict[str, Any]:
        return {"checkpoint": self.checkpoint, "train": asdict(self.train)}


@dataclass(frozen=True)
class SaliencyConfig:
    """显著性配置：所用方法及三种方法各自的参数"""

    method: SaliencyMethod = SaliencyMethod.GRADCAM
    gradcam: GradCamConfig = field(default_factory=GradCamConfig)
    osm: OcclusionConfig = field(default_factory=OcclusionConfig)
    lime: LimeConfig = field(default_factory=LimeConfig)

    def explainer(self, method: Optional[SaliencyMethod] = None):
        """某一方法的配置"""
        method = SaliencyMethod.parse(method or self.method)
        return {SaliencyMethod.GRADCAM: self.gradcam, SaliencyMethod.OSM: self.osm, SaliencyMethod.LIME: self.lime}[method]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method.value,
            "gradcam": {"layer_id": self.gradcam.layer_id},
            "osm": self.osm.to_dict(),
            "lime": self.lime.to_dict(),
        }


@dataclass(frozen=True)
class ClusterConfig:
    """聚类配置"""

    dim: int = 50
    q: int = 8
    sigma: float = 0.2
    k: int = 5
    variance_target: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1 or self.q < 2 or self.k < 1:
            raise ConfigError(f"聚类参数无效: dim={self.dim}, q={self.q}, k={self.k}")
        if self.sigma <= 0:
            raise ConfigError(f"核尺度必须为正数: {self.sigma}")
        if self.variance_target is not None and not 0.0 < self.variance_target <= 1.0:
            raise ConfigError(f"variance_target 必须在(0,1]之间: {self.variance_target}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ReliabilityConfig:
    """可靠度配置"""

    threshold: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"阈值必须在[0,1]之间: {self.threshold}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PipelineConfig:
    """整条流程的配置"""

    seed: int
    output_dir: str = "out"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    saliency: SaliencyConfig = field(default_factory=SaliencyConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    reliability: ReliabilityConfig = field(default_factory=ReliabilityConfig)
    split: Split = Split.TEST

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"种子必须是 0..2^64-1 之间的整数: {self.seed!r}")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "split": self.split.value,
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "saliency": self.saliency.to_dict(),
            "cluster": self.cluster.to_dict(),
            "reliability": self.reliability.to_dict(),
        }

    def to_json(self) -> str:
        """转换为JSON字符串"""
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True)

    def archive(self) -> Path:
        """把解析后的配置写入输出目录"""
        path = self.out / CONFIG_ARCHIVE_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


def _dataset_from(data: Dict[str, Any], seed: int, base_dir: Path) -> DatasetConfig:
    data = dict(data or {})
    manifest = data.get("manifest")
    if manifest is not None and not Path(manifest).is_absolute():
        manifest = str(base_dir / manifest)
    synthetic = data.get("synthetic")
    if synthetic is not None:
        synthetic = dict(synthetic)
        synthetic.setdefault("seed", seed)
        if "radius_range" in synthetic:
            synthetic["radius_range"] = tuple(synthetic["radius_range"])
        synthetic = _build(SyntheticSpec, synthetic, "dataset.synthetic")
    if manifest is not None and synthetic is not None:
        raise ConfigError("dataset.manifest 与 dataset.synthetic 只能指定一个")

    augmentation: Optional[AugmentationPolicy] = AugmentationPolicy()
    if "augmentation" in data:
        raw = data["augmentation"]
        if raw is None:
            augmentation = None
        else:
            raw = dict(raw)
            if "target_class" in raw:
                raw["target_class"] = ClassLabel.from_text(raw["target_class"])
            augmentation = _build(AugmentationPolicy, raw, "dataset.augmentation")

    unknown = sorted(set(data) - {"manifest", "synthetic", "image_side", "augmentation"})
    if unknown:
        raise ConfigError(f"配置节 dataset 含未知键: {', '.join(unknown)}")
    return DatasetConfig(manifest=manifest, synthetic=synthetic, image_side=data.get("image_side"),
                         augmentation=augmentation)


def config_from_dict(data: Dict[str, Any], base_dir: Path = Path("."), **overrides) -> PipelineConfig:
    """
    由字典构建配置，overrides 为命令行覆盖项（值为None的项忽略）

    参数:
        data: 配置字典
        base_dir: 相对路径的基准目录（配置文件所在目录）
        overrides: seed / output_dir / method / split

    返回:
        流程配置
    """
    data = dict(data or {})
    overrides = {key: value for key, value in overrides.items() if value is not None}
    known = {"seed", "output_dir", "split", "dataset", "model", "saliency", "cluster", "reliability"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"配置含未知键: {', '.join(unknown)}")

    seed = overrides.get("seed", data.get("seed"))
    if seed is None:
        raise ConfigError("必须指定全局种子（配置中的 seed 或 --seed）")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"种子必须是整数: {seed!r}")

    model_data = dict(data.get("model") or {})
    train_data = dict(model_data.pop("train", {}) or {})
    train_data.setdefault("seed", seed)
    checkpoint = model_data.pop("checkpoint", None)
    if model_data:
        raise ConfigError(f"配置节 model 含未知键: {', '.join(sorted(model_data))}")
    if checkpoint is not None and not Path(checkpoint).is_absolute():
        checkpoint = str(base_dir / checkpoint)
    model = ModelConfig(checkpoint=checkpoint, train=_build(TrainConfig, train_data, "model.train"))

    saliency_data = dict(data.get("saliency") or {})
    method_value = saliency_data.pop("method", SaliencyMethod.GRADCAM.value)
    method = SaliencyMethod.parse(overrides.get("method", method_value))
    unknown = sorted(set(saliency_data) - {"gradcam", "osm", "lime"})
    if unknown:
        raise ConfigError(f"配置节 saliency 含未知键: {', '.join(unknown)}")
    saliency = SaliencyConfig(
        method=method,
        gradcam=_build(GradCamConfig, saliency_data.get("gradcam"), "saliency.gradcam"),
        osm=_build(OcclusionConfig, saliency_data.get("osm"), "saliency.osm"),
        lime=_build(LimeConfig, saliency_data.get("lime"), "saliency.lime"),
    )

    output_dir = overrides.get("output_dir", data.get("output_dir", "out"))
    split = Split.parse(overrides.get("split", data.get("split", Split.TEST.value)))

    return PipelineConfig(
        seed=seed,
        output_dir=str(output_dir),
        dataset=_dataset_from(data.get("dataset"), seed, base_dir),
        model=model,
        saliency=saliency,
        cluster=_build(ClusterConfig, data.get("cluster"), "cluster"),
        reliability=_build(ReliabilityConfig, data.get("reliability"), "reliability"),
        split=split,
    )


def load_config(path: Optional[str] = None, **overrides) -> PipelineConfig:
    """
    读取配置文件并应用命令行覆盖项

    参数:
        path: 配置文件路径，可为空（只用默认值与覆盖项）
        overrides: seed / output_dir / method / split

    返回:
        流程配置
    """
    if path is None:
        return config_from_dict({}, **overrides)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件无法解析: {path} ({e})")
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是对象: {path}")
    return config_from_dict(data, base_dir=path.parent, **overrides)
