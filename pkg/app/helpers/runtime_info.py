#!/usr/bin/env python3
"""
Runtime Information Helper
Collects the interpreter, platform and hardware facts embedded in run summaries
"""

import platform
import sys
from typing import Any, Dict

import numpy
import pandas
import psutil
import pydantic
import scipy
from coagkit_logging import logger


class RuntimeInfoHelper:
    def get_runtime_info(self) -> Dict[str, Any]:
        """
        Collect runtime information for a run summary
        """
        try:
            return {
                "python": platform.python_version(),
                "implementation": platform.python_implementation(),
                "platform": platform.platform(),
                "machine": platform.machine() or "Unknown",
                "physical_cores": self._get_physical_cores(),
                "logical_cores": psutil.cpu_count() or 1,
                "memory": self._get_memory_info(),
                "libraries": self._get_library_versions(),
            }
        except Exception as e:
            logger.error(f"Error collecting runtime info: {e}")
            return self._get_minimal_runtime_info()

    def _get_physical_cores(self) -> int:
        try:
            return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
        except Exception as e:
            logger.debug(f"Could not count CPU cores: {e}")
            return 1

    def _get_memory_info(self) -> Dict[str, int]:
        try:
            memory = psutil.virtual_memory()
            return {
                "total_mb": round(memory.total / (1024 * 1024)),
                "available_mb": round(memory.available / (1024 * 1024)),
            }
        except Exception as e:
            logger.debug(f"Could not read memory info: {e}")
            return {"total_mb": 0, "available_mb": 0}

    def _get_library_versions(self) -> Dict[str, str]:
        return {
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "pandas": pandas.__version__,
            "psutil": psutil.__version__,
            "pydantic": pydantic.__version__,
        }

    def _get_minimal_runtime_info(self) -> Dict[str, Any]:
        """
        Return minimal runtime info in case of errors
        """
        return {
            "python": sys.version.split()[0],
            "platform": sys.platform,
            "physical_cores": 1,
        }
