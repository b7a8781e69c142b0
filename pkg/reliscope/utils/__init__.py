#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
工具模块包，包含数据、模型、显著性图、聚类与可靠性评估等功能模块
"""
