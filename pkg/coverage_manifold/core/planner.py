"""
Планировщик размещения новых БС: циклическая покоординатная максимизация
доли точек RoE, где предсказанное покрытие превышает порог
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..errors import ConfigurationError, DomainError
from ..utils.decorators import log_duration
from .geodata import GRID_N, BsImage, RoiSpec, pixel_centers
from .simcore import ChannelParams, FadingModel, Manifold, McConfig, simulate_manifolds, stream

logger = logging.getLogger(__name__)

Location = Tuple[int, int]
SWEEP_BATCH = 256
MEMO_CAPACITY = 4 * GRID_N * GRID_N
_PLAN_STREAM = 21


class Predictor(Protocol):
    """Чистая функция: изображение БС -> многообразие покрытия"""

    def __call__(self, image: BsImage) -> Manifold: ...


class PlanConfig(BaseModel):
    """Ограничения планирования: MaxBS, пороги покрытия CovTh и доля FracTh"""
    model_config = ConfigDict(frozen=True)

    max_bs: int = Field(default=4)
    cov_th: Union[float, Tuple[Tuple[float, ...], ...]] = 0.9
    frac_th: float = Field(default=0.95, ge=0.0, le=1.0)
    grid_n: int = GRID_N
    seed: int = Field(default=0, ge=0)

    @field_validator("max_bs")
    @classmethod
    def _positive_max_bs(cls, value: int) -> int:
        if value < 1:
            raise ConfigurationError(f"max_bs должен быть ≥ 1, получено {value}")
        return value

    @field_validator("cov_th")
    @classmethod
    def _thresholds_in_unit_range(cls, value):
        grid = np.asarray(value, dtype=np.float64)
        if not np.isfinite(grid).all() or (grid < 0).any() or (grid > 1).any():
            raise ConfigurationError("Пороги покрытия должны лежать в [0, 1]")
        if grid.ndim not in (0, 2):
            raise ConfigurationError(f"cov_th: скаляр или квадратная сетка, получено {grid.shape}")
        return value

    @classmethod
    def with_grid(cls, cov_th: Union[float, np.ndarray], **kwargs: Any) -> 'PlanConfig':
        """Создание конфигурации из скаляра или массива порогов"""
        if np.ndim(cov_th) == 0:
            return cls(cov_th=float(cov_th), **kwargs)
        return cls(cov_th=tuple(tuple(float(v) for v in row) for row in np.asarray(cov_th)), **kwargs)

    @property
    def roe_n(self) -> int:
        return self.grid_n // 2

    def threshold_grid(self) -> np.ndarray:
        """Пороги в виде сетки RoE; скаляр распространяется на все точки"""
        grid = np.asarray(self.cov_th, dtype=np.float64)
        if grid.ndim == 0:
            return np.full((self.roe_n, self.roe_n), float(grid))
        if grid.shape != (self.roe_n, self.roe_n):
            raise ConfigurationError(f"Сетка порогов {grid.shape} не совпадает с RoE {self.roe_n}×{self.roe_n}")
        return grid

    def echo(self) -> Dict[str, Any]:
        grid = np.asarray(self.cov_th, dtype=np.float64)
        return {
            'max_bs': self.max_bs,
            'cov_th': float(grid) if grid.ndim == 0 else grid.tolist(),
            'frac_th': self.frac_th,
            'grid_n': self.grid_n,
            'seed': self.seed,
        }


@dataclass
class CycleRecord:
    """Итог одного цикла: этап NumBS, номер цикла, лучшая доля цикла и MaxFrac после него"""
    stage: int
    cycle: int
    cycle_max_frac: float
    max_frac: float
    improved: bool
    predictor_calls: int


@dataclass
class PlanOutcome:
    """Результат планирования: решение или None, достигнутая доля и счетчики"""
    locations: Optional[List[Location]]
    achieved_frac: float
    cycles_used: int
    predictor_calls: int
    stages_run: int
    best_locations: List[Location] = field(default_factory=list)
    cycles: List[CycleRecord] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.locations is not None

    @property
    def result(self) -> str:
        return "solution" if self.found else "none"

    def max_frac_sequence(self) -> List[float]:
        """Значения MaxFrac после циклов с улучшением (строго возрастают)"""
        return [c.max_frac for c in self.cycles if c.improved]


class MemoizedPredictor:
    """
    LRU-кэш предсказаний по хэшу изображения; calls считает все запросы

    Емкости по умолчанию хватает на один проход цикла при MaxBS = 4 на сетке 64×64.
    """

    def __init__(self, predictor: Predictor, capacity: int = MEMO_CAPACITY):
        if capacity < 1:
            raise ConfigurationError(f"Емкость кэша должна быть ≥ 1, получено {capacity}")
        self.predictor = predictor
        self.capacity = capacity
        self.cache: "OrderedDict[str, Manifold]" = OrderedDict()
        self.calls = 0
        self.evaluations = 0

    def __call__(self, image: BsImage) -> Manifold:
        return self.predict_batch([image])[0]

    def predict_batch(self, images: Sequence[BsImage]) -> List[Manifold]:
        self.calls += len(images)
        keys = [image.digest() for image in images]
        found: Dict[str, Manifold] = {}
        missing: Dict[str, BsImage] = {}
        for key, image in zip(keys, images):
            if key in found or key in missing:
                continue
            if key in self.cache:
                self.cache.move_to_end(key)
                found[key] = self.cache[key]
            else:
                missing[key] = image
        if missing:
            batch = getattr(self.predictor, "predict_batch", None)
            pending = list(missing.values())
            results = batch(pending) if batch is not None else [self.predictor(image) for image in pending]
            self.evaluations += len(pending)
            for key, manifold in zip(missing, results):
                found[key] = manifold
                self._remember(key, manifold)
        return [found[key] for key in keys]

    def _remember(self, key: str, manifold: Manifold) -> None:
        self.cache[key] = manifold
        self.cache.move_to_end(key)
        while len(self.cache) > self.capacity:
            self.cache.popitem(last=False)


def frac_satisfied(manifold: Manifold, cov_th: Union[float, np.ndarray]) -> float:
    """Доля точек RoE, где значение строго больше порога"""
    values = manifold.values
    thresholds = np.asarray(cov_th, dtype=np.float64)
    if thresholds.ndim == 0:
        thresholds = np.full(values.shape, float(thresholds))
    if thresholds.shape != values.shape:
        raise DomainError(f"Форма порогов {thresholds.shape} не совпадает с многообразием {values.shape}")
    return float(np.count_nonzero(values > thresholds)) / values.size


def _as_memoized(predictor: Predictor) -> MemoizedPredictor:
    return predictor if isinstance(predictor, MemoizedPredictor) else MemoizedPredictor(predictor)


def cyclic_opt(
    old_image: BsImage,
    new_locs: Sequence[Location],
    predictor: Predictor,
    cov_th: Union[float, np.ndarray],
    best_frac: float = 0.0,
) -> Tuple[float, List[Location]]:
    """
    Один цикл: каждая новая БС по очереди перебирает все пиксели сетки
    (кроме занятых старыми и другими новыми БС) в построчном порядке

    Новое положение принимается только при строгом улучшении лучшей доли.
    """
    if not new_locs:
        raise DomainError("Нужна хотя бы одна новая БС")
    memo = _as_memoized(predictor)
    locations = [tuple(int(v) for v in loc) for loc in new_locs]
    occupied_old = old_image.pixels.astype(bool)

    for j in range(len(locations)):
        blocked = occupied_old.copy()
        for k, (i_k, j_k) in enumerate(locations):
            if k != j:
                blocked[i_k, j_k] = True
        candidates = [tuple(int(v) for v in loc) for loc in np.argwhere(~blocked)]
        others = [loc for k, loc in enumerate(locations) if k != j]
        base = old_image.with_pixels(others)

        for start in range(0, len(candidates), SWEEP_BATCH):
            chunk = candidates[start:start + SWEEP_BATCH]
            manifolds = memo.predict_batch([base.with_pixels([loc]) for loc in chunk])
            # Порядок принятия фиксирован: построчно, первое строгое улучшение
            for loc, manifold in zip(chunk, manifolds):
                frac = frac_satisfied(manifold, cov_th)
                if frac > best_frac:
                    best_frac = frac
                    locations[j] = loc
    return best_frac, locations


def _random_locations(old_image: BsImage, count: int, seed: int, stage: int) -> List[Location]:
    free = np.flatnonzero(old_image.pixels.reshape(-1) == 0)
    if len(free) < count:
        raise ConfigurationError(f"Свободных пикселей {len(free)} меньше числа новых БС {count}")
    chosen = stream((seed, _PLAN_STREAM, stage)).choice(free, size=count, replace=False)
    n = old_image.grid_n
    return [(int(k // n), int(k % n)) for k in chosen]


@log_duration("plan")
def plan(old_image: BsImage, predictor: Predictor, config: PlanConfig) -> PlanOutcome:
    """
    Размещение до max_bs новых БС

    MaxFrac не сбрасывается между этапами NumBS. После каждого цикла
    проверяется MaxFrac ≥ FracTh, затем условие строгого улучшения.
    """
    if old_image.grid_n != config.grid_n:
        raise ConfigurationError(f"Изображение {old_image.grid_n}×{old_image.grid_n}, а grid_n={config.grid_n}")
    thresholds = config.threshold_grid()
    memo = _as_memoized(predictor)
    calls_start = memo.calls

    max_frac = 0.0
    best: List[Location] = []
    cycles: List[CycleRecord] = []
    stages_run = 0

    for num_bs in range(1, config.max_bs + 1):
        stages_run = num_bs
        locations = _random_locations(old_image, num_bs, config.seed, num_bs)
        if not best:
            best = list(locations)
        cycle = 0
        while True:
            cycle += 1
            calls_before = memo.calls
            cycle_frac, cycle_locs = cyclic_opt(old_image, locations, memo, thresholds)
            improved = cycle_frac > max_frac
            if improved:
                max_frac = cycle_frac
                best = list(cycle_locs)
            locations = cycle_locs
            cycles.append(CycleRecord(
                stage=num_bs,
                cycle=cycle,
                cycle_max_frac=cycle_frac,
                max_frac=max_frac,
                improved=improved,
                predictor_calls=memo.calls - calls_before,
            ))
            logger.debug(f"Этап {num_bs}, цикл {cycle}: доля {cycle_frac:.4f}, MaxFrac {max_frac:.4f}")
            if max_frac >= config.frac_th:
                logger.info(f"✅ Решение найдено: {len(best)} новых БС, доля {max_frac:.4f}")
                return PlanOutcome(
                    locations=list(best),
                    achieved_frac=max_frac,
                    cycles_used=len(cycles),
                    predictor_calls=memo.calls - calls_start,
                    stages_run=stages_run,
                    best_locations=list(best),
                    cycles=cycles,
                )
            if not improved:
                break

    logger.info(f"❌ Решение не найдено за {stages_run} этапов, лучшая доля {max_frac:.4f}")
    return PlanOutcome(
        locations=None,
        achieved_frac=max_frac,
        cycles_used=len(cycles),
        predictor_calls=memo.calls - calls_start,
        stages_run=stages_run,
        best_locations=list(best),
        cycles=cycles,
    )


@dataclass
class DesignResult:
    """План вместе с многообразиями до и после размещения"""
    outcome: PlanOutcome
    before: Manifold
    after: Manifold
    config: PlanConfig
    spec: Optional[RoiSpec] = None

    def deployment(self) -> List[Dict[str, Any]]:
        """Пиксели новых БС и их координаты в км (если известен RoI)"""
        locations = self.outcome.locations or []
        rows: List[Dict[str, Any]] = []
        for i, j in locations:
            entry: Dict[str, Any] = {'pixel': [i, j]}
            if self.spec is not None:
                x, y = pixel_centers(np.array([[i, j]]), self.spec.side_km, self.spec.grid_n)[0]
                entry['km'] = [float(x), float(y)]
            rows.append(entry)
        return rows


def design_scenario(
    old_image: BsImage,
    predictor: Predictor,
    config: PlanConfig,
    spec: Optional[RoiSpec] = None,
) -> DesignResult:
    """Планирование и многообразия покрытия до и после добавления БС"""
    memo = _as_memoized(predictor)
    before = memo(old_image)
    outcome = plan(old_image, memo, config)
    placed = outcome.locations if outcome.found else outcome.best_locations
    after = memo(old_image.with_pixels(placed)) if placed else before
    return DesignResult(outcome=outcome, before=before, after=after, config=config, spec=spec)


class SimulatorPredictor:
    """Монте-Карло симулятор в роли предиктора (медленно, для проверки)"""

    def __init__(
        self,
        spec: RoiSpec,
        params: ChannelParams,
        fading: Optional[FadingModel] = None,
        mc: Optional[McConfig] = None,
        workers: int = 1,
    ):
        self.spec = spec
        self.params = params
        self.fading = fading or FadingModel()
        self.mc = mc or McConfig()
        self.workers = workers

    def __call__(self, image: BsImage) -> Manifold:
        coverage, _ = simulate_manifolds(image, self.spec, self.params, self.fading, self.mc, workers=self.workers)
        return coverage


def zoned_thresholds(
    high_zone: np.ndarray,
    high: float = 0.9,
    low: float = 0.8,
) -> np.ndarray:
    """Сетка порогов из двух зон: high внутри маски высокой нагрузки, low вне ее"""
    zone = np.asarray(high_zone, dtype=bool)
    if zone.ndim != 2 or zone.shape[0] != zone.shape[1]:
        raise ConfigurationError(f"Маска зон должна быть квадратной, получено {zone.shape}")
    if not (0.0 <= low <= 1.0 and 0.0 <= high <= 1.0):
        raise ConfigurationError(f"Пороги зон вне [0, 1]: high={high}, low={low}")
    return np.where(zone, high, low).astype(np.float64)


def rectangle_zone(roe_n: int, rows: Tuple[int, int], cols: Tuple[int, int]) -> np.ndarray:
    """Маска прямоугольной зоны [r0, r1) × [c0, c1) на сетке RoE"""
    zone = np.zeros((roe_n, roe_n), dtype=bool)
    zone[rows[0]:rows[1], cols[0]:cols[1]] = True
    return zone
