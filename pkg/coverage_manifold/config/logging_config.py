"""
Настройка логирования для Coverage Manifold Toolkit
"""

import logging
import sys
from typing import Iterable, Optional

NUMERICAL_NOISE = (
    "IntegrationWarning",
    "The occurrence of roundoff error is detected",
    "overflow encountered in exp",
)

NOISY_LOGGERS = ("matplotlib", "PIL")


class NumericalNoiseFilter(logging.Filter):
    """Отбрасывает повторяющиеся предупреждения scipy/numpy, пришедшие через py.warnings"""

    def __init__(self, patterns: Iterable[str] = NUMERICAL_NOISE):
        super().__init__()
        self.patterns = tuple(patterns)
        self.suppressed = 0

    def filter(self, record: logging.LogRecord) -> bool:
        if record.name != "py.warnings":
            return True
        message = record.getMessage()
        if any(pattern in message for pattern in self.patterns):
            self.suppressed += 1
            return False
        return True


def setup_logging(
    level: int = logging.INFO,
    log_file: Optional[str] = "coverage_manifold.log",
    format_string: str = "%(asctime)s - %(levelname)s - %(message)s"
) -> logging.Logger:
    """
    Настройка логирования для инструментария

    Консольный вывод идет в stderr: stdout остается свободным для данных.

    Args:
        level: Уровень логирования
        log_file: Файл для записи логов (None для отключения)
        format_string: Формат сообщений

    Returns:
        Логгер пакета coverage_manifold
    """
    handlers: list = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))

    noise_filter = NumericalNoiseFilter()
    for handler in handlers:
        handler.addFilter(noise_filter)

    logging.basicConfig(level=level, format=format_string, handlers=handlers, force=True)
    logging.captureWarnings(True)

    for logger_name in NOISY_LOGGERS:
        logging.getLogger(logger_name).setLevel(logging.ERROR)

    return logging.getLogger("coverage_manifold")
