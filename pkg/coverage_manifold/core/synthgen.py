"""
Синтетические RoI: однородный PPP и кластерный (родитель–потомки) процессы
"""

import logging
from typing import List

import numpy as np
from scipy import stats

from ..errors import ConfigurationError, DomainError
from .geodata import MAX_OCCUPIED, MIN_OCCUPIED, Roi, RoiSpec, rasterize
from .simcore import stream

logger = logging.getLogger(__name__)

MIN_EXPECTED_COUNT = 5.0
MAX_EXPECTED_COUNT = 1000.0
MAX_ATTEMPTS = 10_000

_PPP_STREAM = 11
_CLUSTER_STREAM = 12


def synthetic_spec(side_km: float, index: int = 0) -> RoiSpec:
    """RoiSpec синтетического RoI в начале координат; index различает RoI в наборе"""
    return RoiSpec.at(0.0, 0.0, side_km, row=0, col=index)


def _check_expected(expected: float) -> None:
    if not MIN_EXPECTED_COUNT <= expected <= MAX_EXPECTED_COUNT:
        raise ConfigurationError(
            f"Ожидаемое число БС {expected:.2f} вне [{MIN_EXPECTED_COUNT:g}, {MAX_EXPECTED_COUNT:g}]: "
            f"фильтр {MIN_OCCUPIED}..{MAX_OCCUPIED} пикселей практически невыполним"
        )


def _inside(points: np.ndarray, side_km: float) -> np.ndarray:
    """Прижимает точки к [0, L): u·L может округлиться до L"""
    return np.minimum(points, np.nextafter(side_km, 0.0))


def sample_ppp_points(lam: float, side_km: float, rng: np.random.Generator) -> np.ndarray:
    """Одна реализация однородного PPP в квадрате L×L, форма (k, 2)"""
    count = rng.poisson(lam * side_km * side_km)
    return _inside(rng.random((count, 2)) * side_km, side_km)


def sample_cluster_points(
    parents: int,
    daughters_per_parent: float,
    spread_km: float,
    side_km: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Кластерный процесс: равномерные родители, Poisson(daughters_per_parent)
    потомков у каждого с гауссовым смещением, усеченным до квадрата
    """
    centers = rng.random((parents, 2)) * side_km
    counts = rng.poisson(daughters_per_parent, size=parents)
    anchors = np.repeat(centers, counts, axis=0)
    if spread_km == 0 or len(anchors) == 0:
        return _inside(anchors.reshape(-1, 2), side_km)
    # Изотропный гауссиан в прямоугольнике распадается на два независимых усеченных
    lower = (0.0 - anchors) / spread_km
    upper = (side_km - anchors) / spread_km
    points = stats.truncnorm.rvs(lower, upper, loc=anchors, scale=spread_km, random_state=rng)
    return _inside(np.clip(points, 0.0, side_km), side_km)


def _accept(points: np.ndarray, spec: RoiSpec):
    image = rasterize(spec, points)
    return image if MIN_OCCUPIED <= image.occupied_count <= MAX_OCCUPIED else None


def gen_ppp_roi(lam: float, side_km: float, seed: int, index: int = 0) -> Roi:
    """
    Синтетический RoI с однородным PPP плотности lam (БС/км²)

    Реализации, не прошедшие фильтр 21..399 занятых пикселей, отбрасываются
    и генерируются заново; число повторов сохраняется в roi.meta['resamples'].
    """
    if lam <= 0 or side_km <= 0:
        raise DomainError(f"Плотность и сторона должны быть положительными: λ={lam}, L={side_km}")
    expected = lam * side_km * side_km
    if expected < 1:
        raise DomainError(f"λ·L² = {expected:.3f} < 1")
    _check_expected(expected)

    spec = synthetic_spec(side_km, index)
    rng = stream((seed, _PPP_STREAM, index))
    for attempt in range(MAX_ATTEMPTS):
        points = sample_ppp_points(lam, side_km, rng)
        image = _accept(points, spec)
        if image is not None:
            if attempt:
                logger.debug(f"PPP RoI {spec.roi_id}: повторов генерации {attempt}")
            return Roi(
                spec=spec,
                bs_local=points,
                image=image,
                raw_count=len(points),
                synthetic=True,
                meta={'generator': 'ppp', 'lambda': lam, 'seed': seed, 'index': index, 'resamples': attempt},
            )
    raise ConfigurationError(f"Не удалось получить PPP RoI за {MAX_ATTEMPTS} попыток (λ={lam}, L={side_km})")


def gen_cluster_roi(
    parents: int,
    daughters_per_parent: float,
    spread_km: float,
    side_km: float,
    seed: int,
    index: int = 0,
) -> Roi:
    """Синтетический RoI с кластерной расстановкой БС"""
    if parents < 1 or daughters_per_parent <= 0 or spread_km < 0 or side_km <= 0:
        raise DomainError(
            f"Некорректные параметры кластеров: parents={parents}, daughters={daughters_per_parent}, "
            f"spread={spread_km}, L={side_km}"
        )
    _check_expected(parents * daughters_per_parent)

    spec = synthetic_spec(side_km, index)
    rng = stream((seed, _CLUSTER_STREAM, index))
    for attempt in range(MAX_ATTEMPTS):
        points = sample_cluster_points(parents, daughters_per_parent, spread_km, side_km, rng)
        image = _accept(points, spec)
        if image is not None:
            return Roi(
                spec=spec,
                bs_local=points,
                image=image,
                raw_count=len(points),
                synthetic=True,
                meta={
                    'generator': 'cluster',
                    'parents': parents,
                    'daughters_per_parent': daughters_per_parent,
                    'spread_km': spread_km,
                    'seed': seed,
                    'index': index,
                    'resamples': attempt,
                },
            )
    raise ConfigurationError(f"Не удалось получить кластерный RoI за {MAX_ATTEMPTS} попыток")


def gen_ppp_dataset(count: int, lam: float, side_km: float, seed: int) -> List[Roi]:
    """Набор из count независимых PPP RoI; RoI k использует поток (seed, k)"""
    rois = [gen_ppp_roi(lam, side_km, seed, index=k) for k in range(count)]
    resamples = sum(int(r.meta['resamples']) for r in rois)
    logger.info(f"Сгенерировано PPP RoI: {count} (λ={lam}, L={side_km} км), повторов: {resamples}")
    return rois


def gen_cluster_dataset(
    count: int,
    parents: int,
    daughters_per_parent: float,
    spread_km: float,
    side_km: float,
    seed: int,
) -> List[Roi]:
    """Набор из count независимых кластерных RoI"""
    rois = [
        gen_cluster_roi(parents, daughters_per_parent, spread_km, side_km, seed, index=k)
        for k in range(count)
    ]
    resamples = sum(int(r.meta['resamples']) for r in rois)
    logger.info(f"Сгенерировано кластерных RoI: {count}, повторов: {resamples}")
    return rois
