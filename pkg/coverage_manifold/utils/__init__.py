"""Утилиты и вспомогательные функции"""

from .decorators import log_duration

__all__ = ["log_duration"]
