"""Модуль пользовательского интерфейса"""

from .display_utils import DisplayUtils

__all__ = ["DisplayUtils"]
