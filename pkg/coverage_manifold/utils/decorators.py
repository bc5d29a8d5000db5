"""
Декораторы для Coverage Manifold Toolkit
"""

import logging
import time
from functools import wraps
from typing import Callable, Any

logger = logging.getLogger(__name__)


def log_duration(label: str = None, level: int = logging.INFO):
    """
    Декоратор, логирующий длительность долгих операций (симуляция, обучение, планирование).
    """
    def decorator(func: Callable) -> Callable:
        name = label or func.__name__

        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            started = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                elapsed = time.perf_counter() - started
                logger.log(level, f"⏱️ {name}: {elapsed:.2f}с")
        return wrapper
    return decorator
