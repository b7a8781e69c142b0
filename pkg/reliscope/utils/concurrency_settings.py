#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
并发设置管理模块
管理工作线程数：默认取逻辑CPU数，可由环境变量 RELISCOPE_THREADS 封顶
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import psutil

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV_VAR = "RELISCOPE_THREADS"


class WorkerSettings:
    """工作线程设置管理类"""

    def __init__(self, max_workers: Optional[int] = None):
        """
        初始化工作线程设置
        未指定时使用逻辑CPU数，再由环境变量封顶

        参数:
            max_workers: 最大工作线程数，可选
        """
        # 默认设置
        self._max_workers = max_workers or psutil.cpu_count(logical=True) or 1

        # 环境变量封顶
        env_value = os.environ.get(THREADS_ENV_VAR)
        if env_value:
            try:
                cap = int(env_value)
                if cap >= 1:
                    self._max_workers = min(self._max_workers, cap)
                else:
                    logger.warning(f"{THREADS_ENV_VAR}={env_value} 无效，必须为正整数，已忽略")
            except ValueError:
                logger.warning(f"{THREADS_ENV_VAR}={env_value} 无效，必须为正整数，已忽略")

    @property
    def max_workers(self) -> int:
        """获取最大工作线程数"""
        return self._max_workers

    @max_workers.setter
    def max_workers(self, value: int):
        """设置最大工作线程数"""
        if value < 1:
            value = 1  # 至少保留1个工作线程
        self._max_workers = value

    def apply_torch_threads(self):
        """将线程上限同步到torch的算子内并行"""
        import torch

        torch.set_num_threads(self._max_workers)

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """
        并行映射，结果顺序与输入一致，不受调度顺序影响

        参数:
            func: 对单个元素执行的函数
            items: 输入元素

        返回:
            结果列表
        """
        items = list(items)
        if self._max_workers <= 1 or len(items) <= 1:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self._max_workers) as executor:
            return list(executor.map(func, items))

    def get_status_text(self) -> str:
        """
        获取用于日志显示的状态文本

        返回:
            格式化的状态文本
        """
        return f"工作线程数: {self._max_workers}"
