"""
Иерархия исключений Coverage Manifold Toolkit
"""


class CoverageToolkitError(Exception):
    """Базовое исключение пакета"""


class ConfigurationError(CoverageToolkitError, ValueError):
    """Некорректная конфигурация (колонки, параметры, пустые наборы данных)"""


class DomainError(CoverageToolkitError, ValueError):
    """Аргумент вне области определения операции"""


class OutOfBoundsError(DomainError):
    """Точка или индекс вне допустимой сетки"""


class UnsupportedRegionError(ConfigurationError):
    """Регион, который не поддерживается сеткой (например, пересекает антимеридиан)"""


class NumericalError(CoverageToolkitError, ArithmeticError):
    """Численная процедура не сошлась"""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class TrainingDivergedError(NumericalError):
    """Потеря при обучении стала не конечной"""


class ArtifactError(CoverageToolkitError, OSError):
    """Ошибка чтения или записи артефакта"""
