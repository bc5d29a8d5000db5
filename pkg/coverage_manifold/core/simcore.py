"""
Монте-Карло симулятор: SINR, вероятность покрытия и эргодическая скорость
в каждой точке RoE
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ConfigurationError, DomainError
from ..utils.decorators import log_duration
from .geodata import GRID_N, ROE_N, ROE_OFFSET, BsImage, RoiSpec, pixel_centers

logger = logging.getLogger(__name__)

SINR_CAP = 1e9
DEFAULT_SIDE_KM = 10.0

ManifoldKind = Literal["coverage", "rate_raw", "rate_scaled"]


class ChannelParams(BaseModel):
    """Параметры канала: показатель затухания, σ²/P и порог SINR (линейный)"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=4.0, gt=2.0)
    noise_ratio: float = Field(default=0.0, ge=0.0)
    gamma_th: float = Field(default=1.0, gt=0.0)

    @classmethod
    def from_db(cls, alpha: float, gamma_db: float, noise_ratio: float = 0.0) -> 'ChannelParams':
        return cls(alpha=alpha, noise_ratio=noise_ratio, gamma_th=db_to_linear(gamma_db))

    @property
    def gamma_db(self) -> float:
        return 10.0 * math.log10(self.gamma_th)


class FadingModel(BaseModel):
    """Закон замираний: Rayleigh (Exp(1)) или Nakagami-m (Gamma(m, 1))"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["rayleigh", "nakagami"] = "rayleigh"
    m: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _rayleigh_has_unit_shape(self) -> 'FadingModel':
        if self.kind == "rayleigh" and self.m != 1:
            raise ValueError("Для Rayleigh параметр m должен быть 1")
        return self

    @classmethod
    def parse(cls, text: str) -> 'FadingModel':
        """Разбор строки 'rayleigh' или 'nakagami:M'"""
        value = str(text).strip().lower()
        if value == "rayleigh":
            return cls()
        if value.startswith("nakagami:"):
            shape = value.split(":", 1)[1]
            if shape.isdigit() and int(shape) >= 1:
                return cls(kind="nakagami", m=int(shape))
        raise ConfigurationError(f"Неизвестная модель замираний: {text!r} (ожидается rayleigh или nakagami:M)")

    @property
    def label(self) -> str:
        return "rayleigh" if self.kind == "rayleigh" else f"nakagami:{self.m}"

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "rayleigh":
            return rng.standard_exponential(size)
        return rng.standard_gamma(float(self.m), size)


class McConfig(BaseModel):
    """Параметры Монте-Карло"""
    model_config = ConfigDict(frozen=True)

    n_draws: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)


@dataclass(frozen=True, eq=False)
class Manifold:
    """Сетка значений метрики над RoE"""
    values: np.ndarray
    kind: ManifoldKind = "coverage"

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DomainError(f"Многообразие должно быть квадратной сеткой, получено {values.shape}")
        if not np.isfinite(values).all():
            raise DomainError("Многообразие содержит не конечные значения")
        if self.kind in ("coverage", "rate_scaled") and ((values < 0).any() or (values > 1).any()):
            raise DomainError(f"Значения многообразия '{self.kind}' должны лежать в [0, 1]")
        if self.kind == "rate_raw" and (values < 0).any():
            raise DomainError("Скорость не может быть отрицательной")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def mean(self) -> float:
        return float(self.values.mean())


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def stream(stream_key: Sequence[int]) -> np.random.Generator:
    """
    Детерминированный счетный поток Philox, адресуемый ключом (seed, ...)

    Один и тот же ключ дает побитово одинаковую последовательность независимо
    от порядка вычислений.
    """
    seed, *spawn = [int(k) for k in stream_key]
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(spawn))
    return np.random.Generator(np.random.Philox(sequence))


def sample_fading(model: FadingModel, count: int, stream_key: Sequence[int]) -> np.ndarray:
    """Независимые выборки коэффициентов замираний по закону модели"""
    if count < 1:
        raise DomainError(f"count должен быть ≥ 1, получено {count}")
    return model.sample(stream(stream_key), count)


def clamp_distance(side_km: float, grid_n: int = GRID_N) -> float:
    """Половина пикселя: минимальное различимое расстояние до БС, км"""
    return side_km / (2 * grid_n)


DEFAULT_D_MIN = clamp_distance(DEFAULT_SIDE_KM)


def _sinr_draws(distances: np.ndarray, gains: np.ndarray, params: ChannelParams, d_min: float) -> np.ndarray:
    """SINR для каждой строки gains (реализации замираний) при фиксированных расстояниях"""
    if not d_min > 0:
        raise DomainError(f"d_min должен быть > 0, получено {d_min}")
    # Обслуживающая БС определяется по фактическому расстоянию, ничьи -> меньший индекс
    serving = int(np.argmin(distances))
    clamped = np.maximum(distances, d_min)
    path = clamped ** (-params.alpha)
    signal = gains[:, serving] * path[serving]
    interference_path = path.copy()
    interference_path[serving] = 0.0
    denominator = (gains * interference_path).sum(axis=1) + params.noise_ratio
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = signal / denominator
    ratio = np.where(np.isnan(ratio), SINR_CAP, ratio)
    return np.where(denominator > 0, ratio, np.where(signal > 0, np.inf, 0.0))


def _distances(user: Tuple[float, float], bs_points: np.ndarray) -> np.ndarray:
    points = np.asarray(bs_points, dtype=np.float64).reshape(-1, 2)
    if len(points) == 0:
        raise DomainError("Нужна хотя бы одна базовая станция")
    return np.hypot(points[:, 0] - user[0], points[:, 1] - user[1])


def sinr(
    user: Tuple[float, float],
    bs_points: np.ndarray,
    gains: Sequence[float],
    params: ChannelParams,
    d_min: float = DEFAULT_D_MIN,
) -> float:
    """SINR в точке user при заданных коэффициентах замираний (ближайшая БС обслуживает)"""
    distances = _distances(user, bs_points)
    gains = np.asarray(gains, dtype=np.float64).reshape(1, -1)
    if gains.shape[1] != len(distances):
        raise DomainError(f"Число коэффициентов {gains.shape[1]} не совпадает с числом БС {len(distances)}")
    return float(_sinr_draws(distances, gains, params, d_min)[0])


def sinr_samples(
    user: Tuple[float, float],
    bs_points: np.ndarray,
    params: ChannelParams,
    fading: FadingModel,
    mc: McConfig,
    stream_key: Sequence[int] = (),
    d_min: float = DEFAULT_D_MIN,
) -> np.ndarray:
    """Выборка SINR по mc.n_draws реализациям; реализация d использует строку d потока"""
    distances = _distances(user, bs_points)
    gains = fading.sample(stream((mc.seed, *stream_key)), (mc.n_draws, len(distances)))
    return _sinr_draws(distances, gains, params, d_min)


def coverage_from_samples(samples: np.ndarray, gamma_th: float) -> float:
    return float(np.count_nonzero(samples > gamma_th)) / len(samples)


def rate_from_samples(samples: np.ndarray) -> float:
    return float(np.log2(1.0 + np.minimum(samples, SINR_CAP)).mean())


def coverage_at(
    user: Tuple[float, float],
    bs_points: np.ndarray,
    params: ChannelParams,
    fading: FadingModel,
    mc: McConfig,
    stream_key: Sequence[int] = (),
    d_min: float = DEFAULT_D_MIN,
) -> float:
    """Доля реализаций с SINR > gamma_th"""
    samples = sinr_samples(user, bs_points, params, fading, mc, stream_key, d_min)
    return coverage_from_samples(samples, params.gamma_th)


def rate_at(
    user: Tuple[float, float],
    bs_points: np.ndarray,
    params: ChannelParams,
    fading: FadingModel,
    mc: McConfig,
    stream_key: Sequence[int] = (),
    d_min: float = DEFAULT_D_MIN,
) -> float:
    """Среднее log2(1 + SINR), бит/с/Гц; SINR ограничен SINR_CAP"""
    samples = sinr_samples(user, bs_points, params, fading, mc, stream_key, d_min)
    return rate_from_samples(samples)


def roe_user_indices() -> np.ndarray:
    """Индексы пикселей RoI, соответствующие сетке RoE 32×32 (построчно)"""
    span = np.arange(ROE_OFFSET, ROE_OFFSET + ROE_N)
    ii, jj = np.meshgrid(span, span, indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()])


@log_duration("simulate_sweep", level=logging.DEBUG)
def simulate_sweep(
    image: BsImage,
    spec: RoiSpec,
    params: ChannelParams,
    fading: FadingModel,
    mc: McConfig,
    gammas: Sequence[float] = (),
    workers: int = 1,
) -> Tuple[Dict[float, Manifold], Manifold]:
    """
    Многообразия покрытия для набора порогов и многообразие скорости
    по одним и тем же реализациям замираний

    Поток пикселя адресуется ключом (seed, row, col, пиксель): разные RoI
    одного набора получают независимые замирания.

    Returns:
        (словарь порог -> покрытие, скорость rate_raw)
    """
    if image.occupied_count == 0:
        raise DomainError("Пустое изображение: нет базовых станций")
    thresholds = list(gammas) or [params.gamma_th]
    if any(g <= 0 for g in thresholds):
        raise DomainError("Пороги SINR должны быть положительными")

    bs_points = pixel_centers(image.occupied_indices(), spec.side_km, image.grid_n)
    d_min = clamp_distance(spec.side_km, image.grid_n)
    users = roe_user_indices()

    coverage = np.zeros((len(thresholds), ROE_N * ROE_N))
    rate = np.zeros(ROE_N * ROE_N)

    def _simulate_row(row: int) -> None:
        for k in range(row * ROE_N, (row + 1) * ROE_N):
            i, j = users[k]
            user = pixel_centers(users[k], spec.side_km, image.grid_n)[0]
            samples = sinr_samples(
                (user[0], user[1]), bs_points, params, fading, mc,
                stream_key=(spec.row, spec.col, int(i) * GRID_N + int(j)), d_min=d_min,
            )
            for t, gamma in enumerate(thresholds):
                coverage[t, k] = coverage_from_samples(samples, gamma)
            rate[k] = rate_from_samples(samples)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            list(executor.map(_simulate_row, range(ROE_N)))
    else:
        for row in range(ROE_N):
            _simulate_row(row)

    sweep = {
        gamma: Manifold(coverage[t].reshape(ROE_N, ROE_N), kind="coverage")
        for t, gamma in enumerate(thresholds)
    }
    return sweep, Manifold(rate.reshape(ROE_N, ROE_N), kind="rate_raw")


def simulate_manifolds(
    image: BsImage,
    spec: RoiSpec,
    params: ChannelParams,
    fading: FadingModel,
    mc: McConfig,
    workers: int = 1,
) -> Tuple[Manifold, Manifold]:
    """Многообразия покрытия и скорости над RoE для одного RoI"""
    sweep, rate = simulate_sweep(image, spec, params, fading, mc, [params.gamma_th], workers=workers)
    return sweep[params.gamma_th], rate


def simulation_manifest(
    params: ChannelParams,
    fading: FadingModel,
    mc: McConfig,
    gammas_db: List[float],
    spec: RoiSpec,
) -> Dict[str, object]:
    """Параметры, необходимые для воспроизведения симуляции"""
    return {
        'alpha': params.alpha,
        'noise_ratio': params.noise_ratio,
        'gamma_th': params.gamma_th,
        'gammas_db': list(gammas_db),
        'gammas_linear': [db_to_linear(g) for g in gammas_db],
        'fading': fading.label,
        'seed': mc.seed,
        'n_draws': mc.n_draws,
        'd_min_km': clamp_distance(spec.side_km),
        'sinr_cap': SINR_CAP,
        'side_km': spec.side_km,
        'roi_id': spec.roi_id,
    }
