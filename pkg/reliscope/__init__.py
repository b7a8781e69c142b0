#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
图像分类可靠性评估工具包
对分类器的每个预测计算显著性图，聚类后根据验证集错误比例给出可靠性分数，
并用该分数标注和调整未见数据上的预测
"""

__version__ = "1.0.0"
__author__ = "Reliscope可靠性评估工具"
