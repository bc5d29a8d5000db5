"""Модуль конфигурации инструментария"""

from .toolkit_config import ToolkitConfig
from .logging_config import setup_logging

__all__ = ["ToolkitConfig", "setup_logging"]
