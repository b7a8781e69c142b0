#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
系统信息模块
收集运行平台信息，并以JSON Lines格式追加到输出目录的运行日志 run-log.jsonl
时间戳和主机信息只写入运行日志，不进入任何确定性产物
"""

import json
import logging
import platform
import time
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import cpuinfo
import distro
import psutil
import torch

logger = logging.getLogger(__name__)

RUN_LOG_NAME = "run-log.jsonl"


@dataclass
class SystemInfo:
    """系统静态信息数据类"""
    os_name: str
    os_version: str
    cpu_brand: str
    cpu_cores: int
    memory_total: float  # GB
    python_version: str
    torch_version: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _os_version(os_name: str) -> str:
    """Linux下取发行版名称与版本，其他系统取内核/系统版本"""
    if os_name == "Linux":
        name = distro.name(pretty=True)
        if name:
            return name
    if os_name == "Windows":
        return f"Windows {platform.release()} ({platform.version()})"
    return platform.platform(terse=True)


def _cpu_brand() -> str:
    try:
        return cpuinfo.get_cpu_info().get("brand_raw", "未知")
    except Exception as e:
        logger.warning(f"获取CPU信息失败: {e}")
        return "未知"


def get_system_info() -> SystemInfo:
    """
    收集运行日志需要的主机信息

    返回:
        系统静态信息对象
    """
    os_name = platform.system()
    return SystemInfo(
        os_name=os_name,
        os_version=_os_version(os_name),
        cpu_brand=_cpu_brand(),
        cpu_cores=psutil.cpu_count(logical=True) or 0,
        memory_total=round(psutil.virtual_memory().total / 1024 ** 3, 2),
        python_version=platform.python_version(),
        torch_version=torch.__version__,
    )


class RunLog:
    """运行日志：每个子命令一条开始记录和一条结束记录"""

    def __init__(self, out_dir, command: str, system_info: Optional[SystemInfo] = None):
        """
        参数:
            out_dir: 输出目录
            command: 子命令名称
            system_info: 系统信息，缺省时自动收集
        """
        self.path = Path(out_dir) / RUN_LOG_NAME
        self.command = command
        self._system_info = system_info
        self._start = time.time()

    def _append(self, entry: Dict[str, Any]):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")

    def start(self, **details):
        """记录子命令开始"""
        if self._system_info is None:
            self._system_info = get_system_info()
        self._start = time.time()
        self._append({
            "event": "start",
            "command": self.command,
            "timestamp": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
            "system": self._system_info.to_dict(),
            **details,
        })

    def finish(self, exit_code: int, **details):
        """记录子命令结束及耗时"""
        self._append({
            "event": "finish",
            "command": self.command,
            "timestamp": datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
            "elapsed_seconds": round(time.time() - self._start, 3),
            "exit_code": exit_code,
            **details,
        })
