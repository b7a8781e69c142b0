#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
数据载入模块
从清单文件载入带标签的图像数据集，对训练数据按类别加权增广，
并生成带有预置错误结构的确定性合成数据集
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .concurrency_settings import WorkerSettings
from .core import ClassLabel, ImageTensor, derive_seed
from .errors import (
    ConfigError, EmptySplitError, ImageDecodeError, InfeasibleGeometry, ManifestError,
)

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["image_path", "label", "split", "harvested"]
TRUTH_COLUMNS = ["image_id", "split", "label", "true_radius", "apparent_radius", "center_y", "center_x", "planted"]

DEFAULT_IMAGE_SIDE = 256

TRANSFORMS = ("hflip", "vflip", "rot90", "rot180", "rot270")


class Split(str, Enum):
    """数据划分"""

    TRAIN = "train"
    VAL = "val"
    TEST = "test"

    @classmethod
    def parse(cls, value: str) -> "Split":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ManifestError(f"未知的数据划分: {value!r}（可选 train / val / test）")


@dataclass(frozen=True)
class ManifestEntry:
    """清单中的一条记录"""

    image_path: str
    label: ClassLabel
    split: Split
    harvested: bool = False

    @property
    def image_id(self) -> str:
        return Path(self.image_path).stem


@dataclass(frozen=True)
class DatasetManifest:
    """数据集清单"""

    entries: Tuple[ManifestEntry, ...]
    base_dir: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen_paths = set()
        seen_ids = set()
        for entry in self.entries:
            if entry.image_path in seen_paths:
                raise ManifestError(f"清单中的图像路径重复: {entry.image_path}")
            if entry.image_id in seen_ids:
                raise ManifestError(f"清单中的图像标识重复: {entry.image_id}")
            seen_paths.add(entry.image_path)
            seen_ids.add(entry.image_id)

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.image_path)
        return path if path.is_absolute() else self.base_dir / path


@dataclass(frozen=True)
class LabeledImage:
    """带标签的图像"""

    image: ImageTensor
    label: ClassLabel
    image_id: str


def read_manifest(path) -> DatasetManifest:
    """
    读取CSV清单文件

    参数:
        path: 清单路径，表头为 image_path,label,split,harvested

    返回:
        数据集清单，相对路径以清单所在目录为基准
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"清单文件不存在: {path}")

    entries = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [name.strip() for name in reader.fieldnames] != MANIFEST_COLUMNS:
            raise ManifestError(f"清单表头必须为 {','.join(MANIFEST_COLUMNS)}: {path}")
        for line_no, row in enumerate(reader, start=2):
            try:
                harvested = row["harvested"].strip().lower() in ("1", "true", "yes")
                entries.append(ManifestEntry(
                    image_path=row["image_path"].strip(),
                    label=ClassLabel.from_text(row["label"]),
                    split=Split.parse(row["split"]),
                    harvested=harvested,
                ))
            except (AttributeError, KeyError) as e:
                raise ManifestError(f"清单第 {line_no} 行格式错误: {e}")

    return DatasetManifest(entries=tuple(entries), base_dir=path.parent)


def write_manifest(manifest: DatasetManifest, path):
    """
    写出CSV清单文件

    参数:
        manifest: 数据集清单
        path: 输出路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for entry in manifest.entries:
            writer.writerow([entry.image_path, entry.label.text, entry.split.value, "true" if entry.harvested else "false"])


def decode_image(path, side: int = DEFAULT_IMAGE_SIDE) -> ImageTensor:
    """
    解码单张图像并双线性缩放到指定边长

    参数:
        path: 图像路径（PNG或PPM）
        side: 目标边长

    返回:
        取值在[0,1]的图像张量
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("L", "RGB"):
                img = img.convert("L" if img.mode in ("1", "I;16", "I", "F") else "RGB")
            if img.size != (side, side):
                img = img.resize((side, side), resample=Image.Resampling.BILINEAR)
            array = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageDecodeError(str(path), str(e))
    return ImageTensor.from_hwc(np.clip(array, 0.0, 1.0))


def load_dataset(
    manifest: DatasetManifest,
    side: int = DEFAULT_IMAGE_SIDE,
    splits: Optional[Sequence[Split]] = None,
    settings: Optional[WorkerSettings] = None,
) -> Dict[Split, List[LabeledImage]]:
    """
    按清单载入各划分的图像，排除已收获的植株

    参数:
        manifest: 数据集清单
        side: 缩放后的边长
        splits: 需要载入的划分，默认全部
        settings: 工作线程设置

    返回:
        划分到带标签图像列表的映射
    """
    wanted = list(splits) if splits is not None else list(Split)
    settings = settings or WorkerSettings()

    excluded = sum(1 for entry in manifest.entries if entry.harvested)
    if excluded:
        logger.info(f"排除已收获植株图像 {excluded} 张")

    result: Dict[Split, List[LabeledImage]] = {}
    channels: Optional[int] = None
    for split in wanted:
        entries = [entry for entry in manifest.entries if entry.split == split and not entry.harvested]
        if not entries:
            raise EmptySplitError(f"划分 {split.value} 在排除已收获植株后为空")

        images = settings.map(lambda entry: decode_image(manifest.resolve(entry), side), entries)
        for entry, image in zip(entries, images):
            if channels is None:
                channels = image.channels
            elif image.channels != channels:
                raise ImageDecodeError(
                    str(manifest.resolve(entry)),
                    f"通道数 {image.channels} 与数据集其他图像的 {channels} 不一致",
                )
        result[split] = [
            LabeledImage(image=image, label=entry.label, image_id=entry.image_id)
            for entry, image in zip(entries, images)
        ]
        logger.info(f"载入划分 {split.value}: {len(result[split])} 张图像")
    return result


# ---------------------------------------------------------------------------
# 数据增广
# ---------------------------------------------------------------------------

def apply_transform(image: ImageTensor, tag: str) -> ImageTensor:
    """
    对图像应用翻转或直角旋转

    参数:
        image: 输入图像
        tag: identity / hflip / vflip / rot90 / rot180 / rot270

    返回:
        变换后的图像
    """
    data = image.data
    if tag == "identity":
        return image
    if tag == "hflip":
        return ImageTensor(data[:, :, ::-1])
    if tag == "vflip":
        return ImageTensor(data[:, ::-1, :])
    if tag in ("rot90", "rot180", "rot270"):
        return ImageTensor(np.rot90(data, k=int(tag[3:]) // 90, axes=(1, 2)))
    raise ConfigError(f"未知的增广操作: {tag}")


@dataclass(frozen=True)
class AugmentationPolicy:
    """类别加权的增广策略"""

    operations: Tuple[str, ...] = TRANSFORMS
    base_multiplier: float = 4.0
    minority_boost: float = 1.5
    target_class: ClassLabel = ClassLabel.NOT_READY

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))
        unknown = [op for op in self.operations if op not in TRANSFORMS]
        if unknown:
            raise ConfigError(f"未知的增广操作: {unknown}")
        if self.minority_boost < 1:
            raise ConfigError(f"minority_boost 必须 >= 1，实际: {self.minority_boost}")
        if self.base_multiplier < 0:
            raise ConfigError(f"base_multiplier 必须 >= 0，实际: {self.base_multiplier}")
        object.__setattr__(self, "target_class", ClassLabel(int(self.target_class)))

    def expected_copies(self, label: ClassLabel) -> float:
        """某类别每张源图像的期望增广副本数"""
        if not self.operations:
            return 0.0
        boost = self.minority_boost if label == self.target_class else 1.0
        return self.base_multiplier * boost


@dataclass(frozen=True)
class AugmentedSample:
    """增广样本，惰性地由源图像和变换标签生成"""

    source: LabeledImage
    transform: str = "identity"
    copy_index: int = 0

    @property
    def image(self) -> ImageTensor:
        return apply_transform(self.source.image, self.transform)

    @property
    def label(self) -> ClassLabel:
        return self.source.label

    @property
    def source_id(self) -> str:
        return self.source.image_id

    @property
    def image_id(self) -> str:
        if self.transform == "identity":
            return self.source.image_id
        return f"{self.source.image_id}~{self.transform}~{self.copy_index}"


def augment(train: Sequence[LabeledImage], policy: AugmentationPolicy, seed: int) -> List[AugmentedSample]:
    """
    对训练数据按策略抽样增广

    每张源图像保留自身，并追加k个抽样副本；k的期望值为
    base_multiplier（目标类别再乘以minority_boost），小数部分按伯努利抽样

    参数:
        train: 训练图像
        policy: 增广策略
        seed: 全局种子

    返回:
        增广后的样本列表（含来源和变换标签）
    """
    output: List[AugmentedSample] = []
    counts = {label: 0 for label in ClassLabel}
    for sample in train:
        output.append(AugmentedSample(source=sample))
        expected = policy.expected_copies(sample.label)
        if expected <= 0:
            continue
        rng = np.random.default_rng(derive_seed(seed, "augment", sample.image_id))
        copies = int(math.floor(expected))
        if rng.random() < expected - copies:
            copies += 1
        for index in range(copies):
            tag = policy.operations[int(rng.integers(len(policy.operations)))]
            output.append(AugmentedSample(source=sample, transform=tag, copy_index=index))
        counts[sample.label] += copies

    logger.info(
        f"增广完成: {len(train)} -> {len(output)} 张"
        f"（NotReady副本 {counts[ClassLabel.NOT_READY]}，Ready副本 {counts[ClassLabel.READY]}）"
    )
    return output


def channel_means(samples: Sequence) -> Tuple[float, ...]:
    """
    计算数据集的逐通道均值，作为遮挡与LIME的默认填充值

    参数:
        samples: 带 image 属性的样本

    返回:
        每个通道的均值
    """
    if not samples:
        raise EmptySplitError("无法对空数据集计算通道均值")
    totals = None
    pixels = 0
    for sample in samples:
        data = sample.image.data.astype(np.float64)
        sums = data.reshape(data.shape[0], -1).sum(axis=1)
        totals = sums if totals is None else totals + sums
        pixels += data.shape[1] * data.shape[2]
    return tuple(float(v) for v in totals / pixels)


# ---------------------------------------------------------------------------
# 合成数据
# ---------------------------------------------------------------------------

# 偏移花球朝左上方，方向在 ±OFFSET_ANGLE_SPREAD 内抖动
OFFSET_ANGLE = 1.25 * math.pi
OFFSET_ANGLE_SPREAD = math.pi / 16.0


class PlantedSignature(str, Enum):
    """预置错误子群的视觉特征"""

    OFFSET_HEAD = "offset_head"
    TEXTURELESS_CENTER = "textureless_center"


@dataclass(frozen=True)
class SyntheticSpec:
    """合成数据集参数"""

    train_count: int = 600
    val_count: int = 200
    test_count: int = 200
    side: int = 64
    radius_range: Tuple[float, float] = (5.0, 15.0)
    readiness_threshold: float = 10.0
    canopy_density: float = 0.2
    planted_error_fraction: float = 0.25
    planted_error_signature: PlantedSignature = PlantedSignature.OFFSET_HEAD
    seed: int = 0
    center_jitter: float = 2.0
    train_planted_fraction: Optional[float] = 0.0
    channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "radius_range", tuple(float(r) for r in self.radius_range))
        object.__setattr__(self, "planted_error_signature", PlantedSignature(self.planted_error_signature))
        for name in ("train_count", "val_count", "test_count"):
            if getattr(self, name) < 0:
                raise InfeasibleGeometry(f"{name} 不能为负数")
        if self.channels not in (1, 3):
            raise InfeasibleGeometry(f"通道数必须为1或3，实际: {self.channels}")
        for name in ("canopy_density", "planted_error_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InfeasibleGeometry(f"{name} 必须在[0,1]之间，实际: {value}")
        if self.train_planted_fraction is not None and not 0.0 <= self.train_planted_fraction <= 1.0:
            raise InfeasibleGeometry(f"train_planted_fraction 必须在[0,1]之间，实际: {self.train_planted_fraction}")

        r_min, r_max = self.radius_range
        half = self.side / 2.0
        if self.side < 8:
            raise InfeasibleGeometry(f"图像边长过小: {self.side}")
        if not 0 < r_min <= r_max:
            raise InfeasibleGeometry(f"半径范围无效: {self.radius_range}")
        if r_max + self.center_jitter > half:
            raise InfeasibleGeometry(
                f"最大半径 {r_max} 加中心抖动 {self.center_jitter} 超出图像半边长 {half}"
            )
        if not r_min <= self.readiness_threshold <= r_max:
            raise InfeasibleGeometry(f"成熟半径阈值 {self.readiness_threshold} 不在半径范围内")
        if self.planted_error_fraction > 0 or (self.train_planted_fraction or 0) > 0:
            if self.readiness_threshold <= r_min:
                raise InfeasibleGeometry(f"成熟半径阈值 {self.readiness_threshold} 等于最小半径，无法生成未成熟的预置错误植株")
            offset_low, offset_high = self.offset_range
            if self.planted_error_signature == PlantedSignature.OFFSET_HEAD and offset_low >= offset_high:
                raise InfeasibleGeometry(f"边长 {self.side} 无法容纳半径 {r_max} 的偏移花球")

    @property
    def offset_range(self) -> Tuple[float, float]:
        """偏移花球中心到图像中心的距离范围，保证最大花球完整落在图像内"""
        high = (0.5 * self.side - self.radius_range[1]) / math.cos(math.pi / 4.0 - OFFSET_ANGLE_SPREAD)
        return 0.25 * self.side, high

    def counts(self) -> Dict[Split, int]:
        return {Split.TRAIN: self.train_count, Split.VAL: self.val_count, Split.TEST: self.test_count}

    def planted_fraction_for(self, split: Split) -> float:
        if split == Split.TRAIN and self.train_planted_fraction is not None:
            return self.train_planted_fraction
        return self.planted_error_fraction


@dataclass(frozen=True)
class SyntheticTruth:
    """合成图像的真值元数据"""

    image_id: str
    split: Split
    label: ClassLabel
    true_radius: float
    apparent_radius: float
    center: Tuple[float, float]
    planted: bool

    def to_row(self) -> Dict[str, str]:
        return {
            "image_id": self.image_id,
            "split": self.split.value,
            "label": self.label.text,
            "true_radius": f"{self.true_radius:.6f}",
            "apparent_radius": f"{self.apparent_radius:.6f}",
            "center_y": f"{self.center[0]:.4f}",
            "center_x": f"{self.center[1]:.4f}",
            "planted": "1" if self.planted else "0",
        }


@dataclass
class SyntheticDataset:
    """合成数据集：各划分图像与真值元数据"""

    spec: SyntheticSpec
    splits: Dict[Split, List[LabeledImage]] = field(default_factory=dict)
    truth: Dict[str, SyntheticTruth] = field(default_factory=dict)


_SOIL = np.array([0.36, 0.27, 0.17])
_LEAF = np.array([0.22, 0.52, 0.18])
_HEAD = np.array([0.93, 0.90, 0.78])


def _render_plant(spec: SyntheticSpec, rng: np.random.Generator, center, apparent_radius: float,
                  textured_head: bool, clear_head: bool) -> np.ndarray:
    """绘制单株植物：土壤背景、花球、冠层叶片，返回 (H, W, 3)"""
    side = spec.side
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) + 0.5

    canvas = np.broadcast_to(_SOIL, (side, side, 3)) + rng.normal(0.0, 0.03, size=(side, side, 3))

    head_mask = (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= apparent_radius ** 2
    head = np.broadcast_to(_HEAD, (side, side, 3))
    if textured_head:
        head = head + rng.normal(0.0, 0.05, size=(side, side, 1))
    canvas = np.where(head_mask[:, :, None], head, canvas)

    # 冠层：随机细长椭圆，总面积约为 canopy_density 倍图像面积
    mean_leaf_area = math.pi * (0.14 * side) * (0.35 * 0.14 * side)
    n_leaves = int(round(spec.canopy_density * side * side / mean_leaf_area))
    for _ in range(n_leaves):
        a = rng.uniform(0.08, 0.2) * side
        b = a * rng.uniform(0.25, 0.45)
        theta = rng.uniform(0.0, math.pi)
        cy, cx = rng.uniform(0.0, side, size=2)
        dy, dx = yy - cy, xx - cx
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        leaf_mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        if clear_head:
            leaf_mask &= ~head_mask
        shade = _LEAF + rng.normal(0.0, 0.05, size=3)
        canvas = np.where(leaf_mask[:, :, None], shade, canvas)

    return np.clip(canvas, 0.0, 1.0)


def _synth_one(spec: SyntheticSpec, split: Split, index: int) -> Tuple[LabeledImage, SyntheticTruth]:
    image_id = f"{split.value}_{index:05d}"
    rng = np.random.default_rng(derive_seed(spec.seed, "synth", image_id))
    r_min, r_max = spec.radius_range
    threshold = spec.readiness_threshold
    planted = bool(rng.random() < spec.planted_fraction_for(split))
    if planted:
        # 预置错误子群全部为未成熟植株
        true_radius = float(rng.uniform(r_min, threshold))
    else:
        true_radius = float(rng.uniform(r_min, r_max))
    label = ClassLabel.READY if true_radius >= threshold else ClassLabel.NOT_READY

    half = spec.side / 2.0
    jitter = rng.uniform(-spec.center_jitter, spec.center_jitter, size=2)
    center = (half + float(jitter[0]), half + float(jitter[1]))
    apparent_radius = true_radius
    textured_head = True
    clear_head = False

    if planted:
        # 可见花球大小沿阈值镜像到成熟区间上部，按可见大小判断的分类器会系统性误判为成熟
        depth = (threshold - true_radius) / (threshold - r_min)
        apparent_radius = float(threshold + (r_max - threshold) * (0.4 + 0.6 * depth))
        if spec.planted_error_signature == PlantedSignature.OFFSET_HEAD:
            low, high = spec.offset_range
            distance = rng.uniform(low, high)
            angle = OFFSET_ANGLE + rng.uniform(-OFFSET_ANGLE_SPREAD, OFFSET_ANGLE_SPREAD)
            center = (half + distance * math.sin(angle), half + distance * math.cos(angle))
        else:
            textured_head = False
            clear_head = True

    rgb = _render_plant(spec, rng, center, apparent_radius, textured_head, clear_head)
    pixels = rgb if spec.channels == 3 else rgb.mean(axis=2, keepdims=True)
    sample = LabeledImage(image=ImageTensor.from_hwc(pixels), label=label, image_id=image_id)
    truth = SyntheticTruth(
        image_id=image_id, split=split, label=label, true_radius=true_radius,
        apparent_radius=apparent_radius, center=center, planted=planted,
    )
    return sample, truth


def synth_generate(spec: SyntheticSpec, settings: Optional[WorkerSettings] = None) -> SyntheticDataset:
    """
    生成合成数据集
    每张图像的随机数由全局种子和图像标识派生，生成顺序不影响结果

    参数:
        spec: 合成参数
        settings: 工作线程设置

    返回:
        合成数据集（图像与真值元数据）
    """
    settings = settings or WorkerSettings()
    dataset = SyntheticDataset(spec=spec)
    for split, count in spec.counts().items():
        pairs = settings.map(lambda index: _synth_one(spec, split, index), range(count))
        dataset.splits[split] = [sample for sample, _ in pairs]
        for _, truth in pairs:
            dataset.truth[truth.image_id] = truth
        planted = sum(1 for _, truth in pairs if truth.planted)
        logger.info(f"合成划分 {split.value}: {count} 张图像，其中预置错误 {planted} 张")
    return dataset


def write_synthetic(dataset: SyntheticDataset, out_dir) -> Path:
    """
    将合成数据集写为PNG图像、清单和真值表

    参数:
        dataset: 合成数据集
        out_dir: 输出目录

    返回:
        清单文件路径
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for split, samples in dataset.splits.items():
        for sample in samples:
            pixels = np.round(sample.image.to_hwc() * 255.0).astype(np.uint8)
            if pixels.shape[2] == 1:
                pixels = pixels[:, :, 0]
            relative = f"images/{sample.image_id}.png"
            Image.fromarray(pixels).save(out_dir / relative, format="PNG")
            entries.append(ManifestEntry(image_path=relative, label=sample.label, split=split))

    manifest_path = out_dir / "manifest.csv"
    write_manifest(DatasetManifest(entries=tuple(entries), base_dir=out_dir), manifest_path)

    with open(out_dir / "synth_truth.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRUTH_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for truth in dataset.truth.values():
            writer.writerow(truth.to_row())

    logger.info(f"合成数据已写入 {out_dir}（{len(entries)} 张图像）")
    return manifest_path


def read_synthetic_truth(path) -> Dict[str, Dict[str, str]]:
    """读取合成真值表，返回图像标识到行的映射"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        return {row["image_id"]: row for row in csv.DictReader(f)}
