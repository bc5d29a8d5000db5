"""
Конфигурация Coverage Manifold Toolkit
"""

import os
import json
import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, Any, Optional

logger = logging.getLogger(__name__)


@dataclass
class ToolkitConfig:
    """Конфигурация инструментария с загрузкой из файла и переменных окружения"""
    # logging
    log_level: str = "INFO"
    log_file: Optional[str] = "coverage_manifold.log"
    log_format: str = "%(asctime)s - %(levelname)s - %(message)s"
    # simulation
    alpha: float = 4.0
    noise_ratio: float = 0.0
    gamma_db: float = 0.0
    fading: str = "rayleigh"
    n_draws: int = 1000
    seed: int = 0
    # training
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 60
    split_fraction: float = 0.7
    ff_hidden: int = 512
    latent_dim: int = 128
    # planner
    max_bs: int = 4
    frac_th: float = 0.95
    cov_th: float = 0.9
    # ingest
    side_km: float = 10.0
    lat_column: str = "lat"
    lon_column: str = "lon"
    # runtime
    threads: int = 1
    source_file: Optional[str] = field(default=None, repr=False)

    @classmethod
    def from_file(cls, config_file: str = "config.json") -> 'ToolkitConfig':
        """Создание конфигурации из файла"""
        try:
            if os.path.exists(config_file):
                with open(config_file, 'r', encoding='utf-8') as f:
                    config_data = json.load(f)

                logging_config = config_data.get('logging', {})
                simulation_config = config_data.get('simulation', {})
                training_config = config_data.get('training', {})
                planner_config = config_data.get('planner', {})
                ingest_config = config_data.get('ingest', {})
                runtime_config = config_data.get('runtime', {})

                defaults = cls()
                config = cls(
                    log_level=logging_config.get('level', defaults.log_level),
                    log_file=logging_config.get('file', defaults.log_file),
                    log_format=logging_config.get('format', defaults.log_format),
                    alpha=simulation_config.get('alpha', defaults.alpha),
                    noise_ratio=simulation_config.get('noise_ratio', defaults.noise_ratio),
                    gamma_db=simulation_config.get('gamma_db', defaults.gamma_db),
                    fading=simulation_config.get('fading', defaults.fading),
                    n_draws=simulation_config.get('n_draws', defaults.n_draws),
                    seed=simulation_config.get('seed', defaults.seed),
                    lr=training_config.get('lr', defaults.lr),
                    batch_size=training_config.get('batch_size', defaults.batch_size),
                    epochs=training_config.get('epochs', defaults.epochs),
                    split_fraction=training_config.get('split_fraction', defaults.split_fraction),
                    ff_hidden=training_config.get('ff_hidden', defaults.ff_hidden),
                    latent_dim=training_config.get('latent_dim', defaults.latent_dim),
                    max_bs=planner_config.get('max_bs', defaults.max_bs),
                    frac_th=planner_config.get('frac_th', defaults.frac_th),
                    cov_th=planner_config.get('cov_th', defaults.cov_th),
                    side_km=ingest_config.get('side_km', defaults.side_km),
                    lat_column=ingest_config.get('lat_column', defaults.lat_column),
                    lon_column=ingest_config.get('lon_column', defaults.lon_column),
                    threads=runtime_config.get('threads', defaults.threads),
                    source_file=config_file,
                )
            else:
                logger.info(f"Файл конфигурации {config_file} не найден, используются настройки по умолчанию")
                config = cls()
        except Exception as e:
            logger.error(f"Ошибка загрузки конфигурации из {config_file}: {e}")
            config = cls()

        config.apply_env_overrides()
        return config

    def apply_env_overrides(self) -> None:
        """Переопределение значений из переменных окружения"""
        if os.getenv("COVMAN_THREADS"):
            self.threads = int(os.getenv("COVMAN_THREADS"))
        if os.getenv("COVMAN_SEED"):
            self.seed = int(os.getenv("COVMAN_SEED"))
        if os.getenv("COVMAN_LOG_LEVEL"):
            self.log_level = os.getenv("COVMAN_LOG_LEVEL")

    @property
    def log_level_value(self) -> int:
        """Числовой уровень логирования"""
        return getattr(logging, str(self.log_level).upper(), logging.INFO)

    def as_dict(self) -> Dict[str, Any]:
        """Плоское представление для манифестов"""
        data = asdict(self)
        data.pop('source_file', None)
        return data
