#!/usr/bin/env python3
"""
Runtime Information Helpers Package
"""

from .runtime_info import RuntimeInfoHelper

__all__ = ['RuntimeInfoHelper']
