#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
异常定义模块
所有异常都携带命令行退出码：2 输入无效，3 数据不足，4 数值失败
"""

from typing import Optional


class ReliscopeError(Exception):
    """工具包异常基类"""

    exit_code = 2


class InvalidInputError(ReliscopeError):
    """输入无效"""

    exit_code = 2


class InsufficientDataError(ReliscopeError):
    """数据不足"""

    exit_code = 3


class NumericalError(ReliscopeError):
    """数值计算失败"""

    exit_code = 4


# ---- 输入无效 ----

class ConfigError(InvalidInputError):
    """配置文件或参数无效"""


class ManifestError(InvalidInputError):
    """数据清单格式错误"""


class ImageDecodeError(InvalidInputError):
    """图像文件无法读取或解码"""

    def __init__(self, path: str, reason: str = ""):
        self.path = str(path)
        message = f"无法读取图像文件: {self.path}"
        if reason:
            message += f" ({reason})"
        super().__init__(message)


class ShapeMismatchError(InvalidInputError):
    """张量或图尺寸不匹配"""


class UnknownLayerError(InvalidInputError):
    """未知的网络层标识"""


class UnsupportedExplainer(InvalidInputError):
    """分类器不支持所请求的解释方法"""


class CheckpointError(InvalidInputError):
    """模型检查点文件错误"""


class CheckpointVersionMismatch(CheckpointError):
    """检查点格式版本不匹配"""


class TruncatedCheckpoint(CheckpointError):
    """检查点文件被截断"""


class InfeasibleGeometry(InvalidInputError):
    """合成数据的几何参数无法实现"""


class MissingOutcomeError(InvalidInputError):
    """记录缺少混淆结果"""


class UnknownClusterError(InvalidInputError):
    """未知或无验证证据的簇"""


class MismatchedRecordsError(InvalidInputError):
    """前后两组记录的图像标识不一致"""


class OutputLocked(InvalidInputError):
    """输出目录正被另一个进程使用"""


# ---- 数据不足 ----

class EmptyEvaluationSet(InsufficientDataError):
    """评估集为空"""


class EmptySplitError(InsufficientDataError):
    """数据划分为空"""


class ClassAbsent(InsufficientDataError):
    """真实标签中缺少某个类别"""


class InsufficientSamples(InsufficientDataError):
    """样本数量不足"""


# ---- 数值失败 ----

class TrainingDiverged(NumericalError):
    """训练损失出现NaN"""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"训练在第 {epoch} 轮发散（损失为NaN）")


class SurrogateDegenerate(NumericalError):
    """LIME替代模型的正规方程奇异"""


class IsolatedSample(NumericalError):
    """亲和矩阵中存在度为零的样本"""


class ExplainError(ReliscopeError):
    """批量解释时单张图像失败，附带图像标识"""

    def __init__(self, image_id: str, cause: Exception):
        self.image_id = image_id
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
        super().__init__(f"图像 {image_id} 解释失败: {cause}")


def exit_code_of(error: Optional[BaseException]) -> int:
    """
    获取异常对应的退出码

    参数:
        error: 异常对象

    返回:
        退出码，非本工具包异常返回1
    """
    if isinstance(error, ReliscopeError):
        return error.exit_code
    return 1
