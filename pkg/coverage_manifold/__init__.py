"""
Coverage Manifold Toolkit
Многообразия покрытия и скорости сотовой сети: симуляция, CNN-AE и планирование БС
"""

from .config.toolkit_config import ToolkitConfig
from .errors import (
    ArtifactError,
    ConfigurationError,
    CoverageToolkitError,
    DomainError,
    NumericalError,
)

__version__ = "1.0.0"

__all__ = [
    "ToolkitConfig",
    "CoverageToolkitError",
    "ConfigurationError",
    "DomainError",
    "NumericalError",
    "ArtifactError",
]
