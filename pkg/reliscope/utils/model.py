#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
分类模型模块
定义可插拔的二分类器接口，以及内置的小型卷积网络MiniCnn：
前向/反向传播（供Grad-CAM使用）、训练与检查点读写
"""

import copy
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from .core import ClassLabel, ClassScores, ImageTensor, PredictionRecord, derive_seed
from .errors import (
    CheckpointError, CheckpointVersionMismatch, ConfigError, EmptySplitError, ShapeMismatchError,
    TrainingDiverged, TruncatedCheckpoint, UnknownLayerError,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RSCP"
CHECKPOINT_VERSION = 1
PREDICT_CHUNK = 64


def default_architecture(in_channels: int = 3) -> List[Dict[str, Any]]:
    """
    MiniCnn默认结构：三组 conv3x3 / ReLU / maxpool2，全局平均池化，全连接输出两类

    参数:
        in_channels: 输入通道数

    返回:
        可序列化的层描述列表
    """
    layers: List[Dict[str, Any]] = []
    channels = [in_channels, 8, 16, 32]
    for index in range(1, 4):
        layers.append({
            "type": "conv", "id": f"conv{index}", "in_channels": channels[index - 1],
            "out_channels": channels[index], "kernel": 3, "padding": 1,
        })
        layers.append({"type": "relu", "id": f"relu{index}"})
        layers.append({"type": "maxpool", "id": f"pool{index}", "size": 2})
    layers.append({"type": "gap", "id": "gap"})
    layers.append({"type": "dense", "id": "dense", "in_features": 32, "out_features": len(ClassLabel)})
    return layers


@dataclass(frozen=True, eq=False)
class ActivationStack:
    """某一层的激活 (C, H', W')"""

    layer_id: str
    tensor: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientStack:
    """类别分数对某一层激活的梯度，形状与激活相同"""

    layer_id: str
    tensor: np.ndarray


@runtime_checkable
class Classifier(Protocol):
    """二分类器接口：对一批 (N, C, H, W) 图像返回 (N, 2) 的softmax概率"""

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        ...


@runtime_checkable
class GradientClassifier(Classifier, Protocol):
    """支持梯度的分类器接口，Grad-CAM需要"""

    def activations_and_gradients(
        self, image: ImageTensor, cls: ClassLabel, layer_id: str
    ) -> Tuple[ActivationStack, GradientStack]:
        ...


def predict(classifier: Classifier, image: ImageTensor) -> ClassScores:
    """对单张图像预测类别分数"""
    probabilities = classifier.predict_proba(image.data[None].astype(np.float32))[0]
    return ClassScores(tuple(float(p) for p in probabilities))


class MiniCnn(nn.Module):
    """小型可微卷积网络，由层描述列表构建"""

    def __init__(self, architecture: Optional[List[Dict[str, Any]]] = None, seed: int = 0):
        """
        初始化网络并以He均匀分布（按扇入）初始化权重

        参数:
            architecture: 层描述列表，默认为 default_architecture()
            seed: 初始化种子
        """
        super().__init__()
        self.architecture = copy.deepcopy(architecture or default_architecture())
        self.seed = int(seed)
        self.input_side: Optional[int] = None
        self.channel_means: Optional[Tuple[float, ...]] = None
        self.layer_ids: List[str] = []
        self.layer_types: Dict[str, str] = {}
        self.layers = nn.ModuleDict()

        for spec in self.architecture:
            layer_id, kind = spec["id"], spec["type"]
            if layer_id in self.layer_types:
                raise ConfigError(f"层标识重复: {layer_id}")
            if kind == "conv":
                module: nn.Module = nn.Conv2d(
                    spec["in_channels"], spec["out_channels"], spec.get("kernel", 3),
                    stride=1, padding=spec.get("padding", 1),
                )
            elif kind == "relu":
                module = nn.ReLU()
            elif kind == "maxpool":
                module = nn.MaxPool2d(spec.get("size", 2))
            elif kind == "gap":
                module = nn.Identity()
            elif kind == "dense":
                module = nn.Linear(spec["in_features"], spec["out_features"])
            else:
                raise ConfigError(f"未知的层类型: {kind}")
            self.layers[layer_id] = module
            self.layer_ids.append(layer_id)
            self.layer_types[layer_id] = kind

        last = self.architecture[-1]
        if last["type"] != "dense" or last["out_features"] != len(ClassLabel):
            raise ConfigError("网络最后一层必须是输出两类的全连接层")

        self._init_weights()
        self.eval()

    def _init_weights(self):
        generator = torch.Generator().manual_seed(self.seed)
        with torch.no_grad():
            for layer_id in self.layer_ids:
                module = self.layers[layer_id]
                if isinstance(module, (nn.Conv2d, nn.Linear)):
                    fan_in = module.weight[0].numel()
                    bound = math.sqrt(6.0 / fan_in)
                    module.weight.uniform_(-bound, bound, generator=generator)
                    module.bias.zero_()

    @property
    def conv_layer_ids(self) -> List[str]:
        return [layer_id for layer_id in self.layer_ids if self.layer_types[layer_id] == "conv"]

    @property
    def last_conv_layer_id(self) -> str:
        convs = self.conv_layer_ids
        if not convs:
            raise UnknownLayerError("网络中没有卷积层")
        return convs[-1]

    @property
    def input_channels(self) -> int:
        for spec in self.architecture:
            if spec["type"] == "conv":
                return int(spec["in_channels"])
        raise ConfigError("网络中没有卷积层，无法确定输入通道数")

    def _dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _apply_layer(self, layer_id: str, x: torch.Tensor) -> torch.Tensor:
        if self.layer_types[layer_id] == "gap":
            return x.mean(dim=(2, 3))
        return self.layers[layer_id](x)

    def check_input(self, batch: np.ndarray):
        """检查输入是否满足模型的输入约定"""
        if batch.ndim != 4:
            raise ShapeMismatchError(f"输入必须为 (N, C, H, W)，实际形状: {batch.shape}")
        if batch.shape[1] != self.input_channels:
            raise ShapeMismatchError(f"输入通道数 {batch.shape[1]} 与模型的 {self.input_channels} 不一致")
        if self.input_side is not None and batch.shape[2:] != (self.input_side, self.input_side):
            raise ShapeMismatchError(
                f"输入尺寸 {batch.shape[2]}x{batch.shape[3]} 与模型约定的 {self.input_side}x{self.input_side} 不一致"
            )
        pools = sum(1 for kind in self.layer_types.values() if kind == "maxpool")
        if min(batch.shape[2:]) < 2 ** pools:
            raise ShapeMismatchError(f"输入边长至少为 {2 ** pools}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer_id in self.layer_ids:
            x = self._apply_layer(layer_id, x)
        return x

    def run_layers(
        self, x: torch.Tensor, capture: bool = False, detach_at: Optional[str] = None
    ) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        """
        逐层前向传播

        参数:
            x: 输入张量
            capture: 是否缓存每层输出
            detach_at: 在该层输出处截断并设为需要梯度的叶子节点

        返回:
            (logits, 各层输出字典)
        """
        cache: Dict[str, torch.Tensor] = {}
        for layer_id in self.layer_ids:
            x = self._apply_layer(layer_id, x)
            if layer_id == detach_at:
                x = x.detach().requires_grad_(True)
                cache[layer_id] = x
            elif capture:
                cache[layer_id] = x
        return x, cache

    def forward_from(self, layer_id: str, activation: torch.Tensor) -> torch.Tensor:
        """从某层的输出继续前向传播，返回logits"""
        if layer_id not in self.layer_types:
            raise UnknownLayerError(f"未知的层标识: {layer_id}")
        x = activation
        for current in self.layer_ids[self.layer_ids.index(layer_id) + 1:]:
            x = self._apply_layer(current, x)
        return x

    def to_tensor(self, batch: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(np.ascontiguousarray(batch), dtype=self._dtype())

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        """
        批量预测softmax概率，评估模式下与批次组成无关

        参数:
            batch: (N, C, H, W) 图像数组

        返回:
            (N, 2) 概率数组（float64）
        """
        batch = np.asarray(batch)
        self.check_input(batch)
        outputs = []
        with torch.inference_mode():
            for start in range(0, batch.shape[0], PREDICT_CHUNK):
                logits = self(self.to_tensor(batch[start:start + PREDICT_CHUNK]))
                outputs.append(torch.softmax(logits.double(), dim=1).numpy())
        if not outputs:
            return np.zeros((0, len(ClassLabel)))
        return np.concatenate(outputs, axis=0)

    def predict(self, image: ImageTensor) -> ClassScores:
        return predict(self, image)

    def activations_and_gradients(
        self, image: ImageTensor, cls: ClassLabel, layer_id: str
    ) -> Tuple[ActivationStack, GradientStack]:
        """
        某一卷积层的激活，以及类别的softmax前分数对该激活的梯度

        参数:
            image: 输入图像
            cls: 类别
            layer_id: 卷积层标识

        返回:
            (激活, 梯度)
        """
        if self.layer_types.get(layer_id) != "conv":
            raise UnknownLayerError(f"{layer_id} 不是卷积层（可选: {', '.join(self.conv_layer_ids)}）")
        batch = image.data[None]
        self.check_input(batch)
        with torch.enable_grad():
            logits, cache = self.run_layers(self.to_tensor(batch), detach_at=layer_id)
            activation = cache[layer_id]
            (gradient,) = torch.autograd.grad(logits[0, int(cls)], activation)
        return (
            ActivationStack(layer_id, activation.detach()[0].double().numpy()),
            GradientStack(layer_id, gradient[0].double().numpy()),
        )


@dataclass
class ForwardResult:
    """前向传播结果"""

    scores: ClassScores
    logits: np.ndarray
    activations: Optional[Dict[str, ActivationStack]] = None


def forward(model: MiniCnn, image: ImageTensor, keep_cache: bool = False) -> ForwardResult:
    """
    单张图像前向传播

    参数:
        model: 网络
        image: 输入图像
        keep_cache: 是否保留各层激活

    返回:
        softmax分数、logits，以及（可选的）各层激活
    """
    batch = image.data[None]
    model.check_input(batch)
    with torch.inference_mode():
        logits, cache = model.run_layers(model.to_tensor(batch), capture=keep_cache)
        probabilities = torch.softmax(logits.double(), dim=1)[0].numpy()
    activations = None
    if keep_cache:
        activations = {
            layer_id: ActivationStack(layer_id, tensor[0].double().numpy())
            for layer_id, tensor in cache.items()
        }
    return ForwardResult(
        scores=ClassScores(tuple(float(p) for p in probabilities)),
        logits=logits[0].double().numpy(),
        activations=activations,
    )


def backward_to_layer(model: MiniCnn, image: ImageTensor, cls: ClassLabel, layer_id: str) -> GradientStack:
    """
    类别的softmax前分数对指定卷积层激活的梯度

    参数:
        model: 网络
        image: 输入图像
        cls: 类别
        layer_id: 卷积层标识

    返回:
        梯度（形状与该层激活相同）
    """
    if layer_id not in model.layer_types:
        raise UnknownLayerError(f"未知的层标识: {layer_id}")
    _, gradient = model.activations_and_gradients(image, cls, layer_id)
    return gradient


# ---------------------------------------------------------------------------
# 训练
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """训练配置：Adam、权重衰减与阶梯学习率"""

    epochs: int = 25
    optimizer: str = "adam"
    weight_decay: float = 0.0001
    initial_learning_rate: float = 0.0001
    scheduler_step_size: int = 5
    scheduler_gamma: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.optimizer.lower() != "adam":
            raise ConfigError(f"仅支持Adam优化器，实际: {self.optimizer}")
        if self.epochs < 0:
            raise ConfigError(f"epochs 不能为负数: {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay 不能为负数: {self.weight_decay}")
        if self.initial_learning_rate <= 0 or self.scheduler_step_size <= 0 or self.batch_size <= 0:
            raise ConfigError("学习率、调度步长和批大小必须为正数")
        if not 0 < self.scheduler_gamma <= 1:
            raise ConfigError(f"scheduler_gamma 必须在(0,1]之间: {self.scheduler_gamma}")

    def learning_rate_at(self, epoch: int) -> float:
        """第epoch轮（从0开始）的学习率"""
        return self.initial_learning_rate * self.scheduler_gamma ** (epoch // self.scheduler_step_size)


@dataclass
class EpochMetrics:
    """单轮训练指标"""

    epoch: int
    learning_rate: float
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_overall_accuracy: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    """训练结果：最佳验证精度模型、最终模型与逐轮指标"""

    model: MiniCnn
    final_model: MiniCnn
    history: List[EpochMetrics] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_accuracy: Optional[float] = None
    optimizer_state: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "best_epoch": self.best_epoch,
            "best_val_overall_accuracy": self.best_val_accuracy,
            "history": [metrics.to_dict() for metrics in self.history],
        }


def _stack(samples: Sequence, indices) -> np.ndarray:
    return np.stack([samples[int(i)].image.data for i in indices])


def evaluate(model: MiniCnn, samples: Sequence) -> Tuple[float, float]:
    """
    计算交叉熵损失与总体精度

    参数:
        model: 网络
        samples: 带 image/label 属性的样本

    返回:
        (平均损失, 总体精度)
    """
    losses = []
    correct = 0
    for start in range(0, len(samples), PREDICT_CHUNK):
        chunk = range(start, min(start + PREDICT_CHUNK, len(samples)))
        probabilities = model.predict_proba(_stack(samples, chunk))
        labels = np.array([int(samples[i].label) for i in chunk])
        picked = probabilities[np.arange(len(labels)), labels]
        losses.append(-np.log(np.clip(picked, 1e-12, 1.0)))
        correct += int(np.sum(np.argmax(probabilities, axis=1) == labels))
    return float(np.concatenate(losses).mean()), correct / len(samples)


def train(
    model: MiniCnn,
    train_set: Sequence,
    val_set: Sequence,
    cfg: TrainConfig,
    resume: Optional[Dict[str, Any]] = None,
    show_progress: bool = True,
) -> TrainResult:
    """
    交叉熵训练：Adam + 权重衰减，StepLR学习率调度，保留验证总体精度最佳的检查点

    参数:
        model: 初始网络（不会被修改）
        train_set: 训练样本（带 image/label 属性）
        val_set: 验证样本
        cfg: 训练配置
        resume: 续训状态（由 read_checkpoint 得到的优化器状态）
        show_progress: 是否显示进度条

    返回:
        训练结果
    """
    if not train_set:
        raise EmptySplitError("训练集为空")
    if not val_set:
        raise EmptySplitError("验证集为空")

    torch.manual_seed(cfg.seed)
    net = copy.deepcopy(model)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.initial_learning_rate, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=cfg.scheduler_step_size, gamma=cfg.scheduler_gamma)

    history: List[EpochMetrics] = []
    start_epoch = 0
    best_state = copy.deepcopy(net.state_dict())
    best_epoch: Optional[int] = None
    best_accuracy: Optional[float] = None
    if resume:
        optimizer.load_state_dict(resume["optimizer"])
        scheduler.load_state_dict(resume["scheduler"])
        start_epoch = int(resume["epoch"]) + 1
        history = [EpochMetrics(**entry) for entry in resume.get("history", [])]
        best_epoch = resume.get("best_epoch")
        best_accuracy = resume.get("best_val_accuracy")
        if resume.get("best_state") is not None:
            best_state = resume["best_state"]
        logger.info(f"从第 {start_epoch} 轮继续训练")

    labels = torch.tensor([int(sample.label) for sample in train_set], dtype=torch.long)
    n = len(train_set)
    epochs = range(start_epoch, cfg.epochs)
    for epoch in tqdm(epochs, desc="训练", unit="轮", disable=not show_progress or None):
        net.train()
        learning_rate = optimizer.param_groups[0]["lr"]
        generator = torch.Generator().manual_seed(derive_seed(cfg.seed, "epoch", epoch) % (2 ** 63))
        order = torch.randperm(n, generator=generator)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            indices = order[start:start + cfg.batch_size]
            x = net.to_tensor(_stack(train_set, indices.tolist()))
            y = labels[indices]
            optimizer.zero_grad()
            logits = net(x)
            loss = F.cross_entropy(logits, y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch)
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(indices)
            correct += int((logits.detach().argmax(dim=1) == y).sum())
        scheduler.step()

        net.eval()
        val_loss, val_accuracy = evaluate(net, val_set)
        metrics = EpochMetrics(
            epoch=epoch, learning_rate=learning_rate, train_loss=total_loss / n,
            train_accuracy=correct / n, val_loss=val_loss, val_overall_accuracy=val_accuracy,
        )
        history.append(metrics)
        logger.info(
            f"第 {epoch} 轮: 学习率 {learning_rate:.2e}, 训练损失 {metrics.train_loss:.4f}, "
            f"训练精度 {metrics.train_accuracy:.2%}, 验证精度 {val_accuracy:.2%}"
        )
        if best_accuracy is None or val_accuracy > best_accuracy:
            best_accuracy = val_accuracy
            best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())

    net.eval()
    best = copy.deepcopy(net)
    best.load_state_dict(best_state)
    best.eval()
    optimizer_state = {
        "optimizer": optimizer.state_dict(),
        "scheduler": scheduler.state_dict(),
        "epoch": history[-1].epoch if history else start_epoch - 1,
        "history": [metrics.to_dict() for metrics in history],
        "best_epoch": best_epoch,
        "best_val_accuracy": best_accuracy,
    }
    return TrainResult(
        model=best, final_model=net, history=history, best_epoch=best_epoch,
        best_val_accuracy=best_accuracy, optimizer_state=optimizer_state,
    )


def predict_records(model: Classifier, samples: Sequence) -> List[PredictionRecord]:
    """
    对样本批量预测，生成带真实类别的预测记录

    参数:
        model: 分类器
        samples: 带 image/label/image_id 属性的样本

    返回:
        预测记录列表
    """
    records: List[PredictionRecord] = []
    for start in range(0, len(samples), PREDICT_CHUNK):
        chunk = samples[start:start + PREDICT_CHUNK]
        probabilities = model.predict_proba(np.stack([sample.image.data for sample in chunk]))
        for sample, row in zip(chunk, probabilities):
            scores = ClassScores(tuple(float(p) for p in row))
            records.append(PredictionRecord(
                image_id=sample.image_id, predicted=scores.predicted, scores=scores, truth=sample.label,
            ))
    return records


# ---------------------------------------------------------------------------
# 检查点
# ---------------------------------------------------------------------------

@dataclass
class CheckpointData:
    """检查点内容"""

    model: MiniCnn
    header: Dict[str, Any]
    resume: Optional[Dict[str, Any]] = None


def _optimizer_tensors(optimizer_state: Dict[str, Any]) -> Tuple[Dict[str, Any], List[np.ndarray]]:
    """拆分Adam状态：标量写入JSON头，动量张量按参数顺序追加"""
    state = optimizer_state["optimizer"]["state"]
    keys = sorted(state.keys())
    tensors: List[np.ndarray] = []
    steps = []
    for key in keys:
        entry = state[key]
        steps.append(float(entry["step"]))
        tensors.append(entry["exp_avg"].detach().cpu().numpy())
        tensors.append(entry["exp_avg_sq"].detach().cpu().numpy())
    meta = {
        "param_groups": optimizer_state["optimizer"]["param_groups"],
        "state_keys": keys,
        "steps": steps,
        "scheduler": optimizer_state["scheduler"],
        "epoch": optimizer_state["epoch"],
        "history": optimizer_state["history"],
        "best_epoch": optimizer_state["best_epoch"],
        "best_val_accuracy": optimizer_state["best_val_accuracy"],
    }
    return meta, tensors


def save_checkpoint(model: MiniCnn, path, epoch: Optional[int] = None,
                    optimizer_state: Optional[Dict[str, Any]] = None):
    """
    写出检查点：魔数RSCP、u16版本、u32头长度、JSON头，随后按声明顺序写入小端float32参数

    参数:
        model: 网络
        path: 输出路径
        epoch: 训练轮次
        optimizer_state: 续训所需的优化器状态（TrainResult.optimizer_state）
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    params = [(name, tensor.detach().cpu().numpy()) for name, tensor in model.named_parameters()]
    tensors = [array for _, array in params]
    header: Dict[str, Any] = {
        "architecture": model.architecture,
        "seed": model.seed,
        "epoch": epoch,
        "input_side": model.input_side,
        "channel_means": list(model.channel_means) if model.channel_means is not None else None,
        "parameters": [{"name": name, "shape": list(array.shape)} for name, array in params],
        "optimizer": None,
    }
    if optimizer_state is not None:
        meta, extra = _optimizer_tensors(optimizer_state)
        header["optimizer"] = meta
        tensors.extend(extra)

    header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for array in tensors:
            f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    logger.info(f"检查点已保存: {path}")


def _read_exact(f, size: int, path) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise TruncatedCheckpoint(f"检查点文件被截断: {path}")
    return data


def _read_array(f, shape, path) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(f, 4 * count, path)
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


def read_checkpoint(path) -> CheckpointData:
    """
    读取检查点

    参数:
        path: 检查点路径

    返回:
        模型、JSON头和续训状态
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"检查点文件不存在: {path}")
    with open(path, "rb") as f:
        magic = f.read(4)
        if len(magic) < 4 and CHECKPOINT_MAGIC.startswith(magic):
            raise TruncatedCheckpoint(f"检查点文件被截断: {path}")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"不是检查点文件: {path}")
        version, header_length = struct.unpack("<HI", _read_exact(f, 6, path))
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionMismatch(
                f"检查点格式版本 {version} 与当前支持的 {CHECKPOINT_VERSION} 不一致: {path}"
            )
        try:
            header = json.loads(_read_exact(f, header_length, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"检查点头部无法解析: {path} ({e})")

        if not isinstance(header, dict):
            raise CheckpointError(f"检查点头部必须是对象: {path}")
        try:
            model = MiniCnn(header["architecture"], seed=header.get("seed", 0))
            model.input_side = header.get("input_side")
            means = header.get("channel_means")
            model.channel_means = tuple(means) if means is not None else None
            named = dict(model.named_parameters())
            state = {}
            for entry in header["parameters"]:
                if entry["name"] not in named:
                    raise CheckpointError(f"检查点包含未知参数 {entry['name']}: {path}")
                state[entry["name"]] = torch.from_numpy(_read_array(f, tuple(entry["shape"]), path))
            model.load_state_dict(state)
            model.eval()

            resume = None
            meta = header.get("optimizer")
            if meta is not None:
                shapes = [tuple(entry["shape"]) for entry in header["parameters"]]
                adam_state = {}
                for key, step, shape in zip(meta["state_keys"], meta["steps"], shapes):
                    adam_state[key] = {
                        "step": torch.tensor(step, dtype=torch.float32),
                        "exp_avg": torch.from_numpy(_read_array(f, shape, path)),
                        "exp_avg_sq": torch.from_numpy(_read_array(f, shape, path)),
                    }
                resume = {
                    "optimizer": {"state": adam_state, "param_groups": meta["param_groups"]},
                    "scheduler": meta["scheduler"],
                    "epoch": meta["epoch"],
                    "history": meta["history"],
                    "best_epoch": meta["best_epoch"],
                    "best_val_accuracy": meta["best_val_accuracy"],
                    "best_state": None,
                }
        except (KeyError, TypeError, ValueError, RuntimeError) as e:
            raise CheckpointError(f"检查点头部字段缺失或与数据不一致: {path} ({e!r})")
        if f.read(1):
            raise CheckpointError(f"检查点文件末尾有多余数据: {path}")

    return CheckpointData(model=model, header=header, resume=resume)


def load_checkpoint(path) -> MiniCnn:
    """读取检查点，只返回模型"""
    return read_checkpoint(path).model
