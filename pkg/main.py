#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
作物图像分类可靠度评估工具
主程序入口
"""

from reliscope.cli.main import main

if __name__ == "__main__":
    main()
