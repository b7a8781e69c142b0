#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
子命令包：每个流程阶段一个模块
"""
