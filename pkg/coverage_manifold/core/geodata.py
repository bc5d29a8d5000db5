"""
Геоданные: разбор записей о базовых станциях, разбиение страны на RoI,
фильтрация и растеризация в бинарное изображение 64×64
"""

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import IO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import (
    ArtifactError,
    ConfigurationError,
    DomainError,
    OutOfBoundsError,
    UnsupportedRegionError,
)

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
GRID_N = 64
ROE_N = 32
ROE_OFFSET = (GRID_N - ROE_N) // 2
MIN_OCCUPIED = 21
MAX_OCCUPIED = 399


@dataclass(frozen=True)
class BsRecord:
    """Запись о базовой станции: широта и долгота в градусах"""
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise DomainError(f"Координаты должны быть конечными: ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise DomainError(f"Координаты вне допустимого диапазона: ({self.lat}, {self.lon})")


class ColumnMap(BaseModel):
    """Имена колонок широты и долготы во входном файле"""
    model_config = ConfigDict(frozen=True)

    lat: str = Field(default="lat", description="Колонка широты")
    lon: str = Field(default="lon", description="Колонка долготы")


@dataclass
class ParseResult:
    """Результат разбора файла вышек"""
    records: List[BsRecord]
    skipped: int


class RoiSpec(BaseModel):
    """Квадрат L×L на сфере с поправкой на широту (юго-западный угол в origin)"""
    model_config = ConfigDict(frozen=True)

    origin_lat: float = Field(ge=-90.0, lt=90.0)
    origin_lon: float = Field(ge=-180.0, le=180.0)
    side_km: float = Field(gt=0.0)
    delta_theta_deg: float
    delta_phi_deg: float
    grid_n: int = GRID_N
    row: int = Field(default=0, ge=0)
    col: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_extents(self) -> 'RoiSpec':
        if self.grid_n != GRID_N:
            raise ValueError(f"grid_n должен быть {GRID_N}")
        expected_theta, expected_phi = angular_extents(self.origin_lat, self.side_km)
        if not math.isclose(self.delta_theta_deg, expected_theta, rel_tol=1e-9):
            raise ValueError("delta_theta_deg не соответствует L/R")
        if not math.isclose(self.delta_phi_deg, expected_phi, rel_tol=1e-9):
            raise ValueError("delta_phi_deg не соответствует L/(R·cos θ)")
        return self

    @classmethod
    def at(cls, origin_lat: float, origin_lon: float, side_km: float, row: int = 0, col: int = 0) -> 'RoiSpec':
        """Создание RoI с угловыми размерами, вычисленными в origin_lat"""
        delta_theta, delta_phi = angular_extents(origin_lat, side_km)
        return cls(
            origin_lat=origin_lat,
            origin_lon=origin_lon,
            side_km=side_km,
            delta_theta_deg=delta_theta,
            delta_phi_deg=delta_phi,
            row=row,
            col=col,
        )

    @property
    def roi_id(self) -> str:
        return f"r{self.row:04d}c{self.col:04d}"

    @property
    def pixel_km(self) -> float:
        return self.side_km / self.grid_n

    @property
    def area_km2(self) -> float:
        return self.side_km * self.side_km


@dataclass(frozen=True, eq=False)
class BsImage:
    """Бинарная карта занятости пикселей базовыми станциями"""
    pixels: np.ndarray
    dedup_count: int = 0

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
            raise DomainError(f"Изображение должно быть квадратным, получено {pixels.shape}")
        if not np.isin(pixels, (0, 1)).all():
            raise DomainError("Изображение должно содержать только 0 и 1")
        frozen = pixels.astype(np.uint8, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(self, 'pixels', frozen)

    @classmethod
    def empty(cls, grid_n: int = GRID_N) -> 'BsImage':
        return cls(np.zeros((grid_n, grid_n), dtype=np.uint8))

    @classmethod
    def from_indices(cls, indices: Iterable[Tuple[int, int]], grid_n: int = GRID_N) -> 'BsImage':
        pixels = np.zeros((grid_n, grid_n), dtype=np.uint8)
        for i, j in indices:
            pixels[i, j] = 1
        return cls(pixels)

    @property
    def grid_n(self) -> int:
        return self.pixels.shape[0]

    @property
    def occupied_count(self) -> int:
        return int(self.pixels.sum())

    def occupied_indices(self) -> np.ndarray:
        """Индексы занятых пикселей в построчном порядке, форма (k, 2)"""
        return np.argwhere(self.pixels == 1)

    def with_pixels(self, indices: Iterable[Tuple[int, int]]) -> 'BsImage':
        """Новое изображение с дополнительно занятыми пикселями"""
        pixels = self.pixels.copy()
        for i, j in indices:
            pixels[i, j] = 1
        return BsImage(pixels)

    def digest(self) -> str:
        return hashlib.blake2b(self.pixels.tobytes(), digest_size=16).hexdigest()


@dataclass(eq=False)
class Roi:
    """Отфильтрованный RoI: спецификация, локальные координаты БС и изображение"""
    spec: RoiSpec
    bs_local: np.ndarray
    image: BsImage
    raw_count: int
    bs_geo: Optional[np.ndarray] = None
    synthetic: bool = False
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.bs_local = np.asarray(self.bs_local, dtype=np.float64).reshape(-1, 2)
        side = self.spec.side_km
        if self.bs_local.size and ((self.bs_local < 0).any() or (self.bs_local >= side).any()):
            raise OutOfBoundsError(f"Локальные координаты БС вне [0, {side})² в {self.spec.roi_id}")
        occupied = self.image.occupied_count
        if not MIN_OCCUPIED <= occupied <= MAX_OCCUPIED:
            raise DomainError(
                f"RoI {self.spec.roi_id}: занято {occupied} пикселей, допустимо {MIN_OCCUPIED}..{MAX_OCCUPIED}"
            )

    @property
    def roi_id(self) -> str:
        return self.spec.roi_id


@dataclass
class AssignResult:
    """RoI, прошедшие фильтр, и счетчики по корзинам фильтра"""
    rois: List[Roi]
    dropped_low: int = 0
    dropped_high: int = 0
    empty_cells: int = 0
    unassigned: int = 0
    dedup_total: int = 0

    @property
    def kept(self) -> int:
        return len(self.rois)

    def counts(self) -> Dict[str, int]:
        return {
            'kept': self.kept,
            'dropped_low': self.dropped_low,
            'dropped_high': self.dropped_high,
            'empty_cells': self.empty_cells,
            'unassigned_records': self.unassigned,
            'dedup_total': self.dedup_total,
        }


def angular_extents(lat_deg: float, side_km: float) -> Tuple[float, float]:
    """Угловые размеры квадрата L×L на широте lat_deg (сфера R=6371 км)"""
    delta_theta = math.degrees(side_km / EARTH_RADIUS_KM)
    cos_lat = math.cos(math.radians(lat_deg))
    if cos_lat <= 0.0:
        raise UnsupportedRegionError(f"Широта {lat_deg} слишком близка к полюсу")
    delta_phi = math.degrees(side_km / (EARTH_RADIUS_KM * cos_lat))
    return delta_theta, delta_phi


def _read_records_frame(source: Union[IO[bytes], IO[str], str]) -> Tuple[pd.DataFrame, int]:
    """
    CSV вышек как строки: быстрый C-движок, а при строках с лишними полями
    повторное чтение python-движком с подсчетом таких строк
    """
    content = None if isinstance(source, (str, PathLike)) else source.read()

    def reopen():
        if content is None:
            return source
        return io.BytesIO(content) if isinstance(content, bytes) else io.StringIO(content)

    try:
        return pd.read_csv(reopen(), dtype=str, engine="c", skip_blank_lines=True), 0
    except pd.errors.ParserError as e:
        logger.debug(f"C-движок отклонил поток ({e}); повтор с python-движком")

    bad_lines: List[List[str]] = []

    def _on_bad_line(fields: List[str]) -> None:
        bad_lines.append(fields)
        return None

    frame = pd.read_csv(reopen(), dtype=str, engine="python", on_bad_lines=_on_bad_line, skip_blank_lines=True)
    return frame, len(bad_lines)


def parse_bs_records(stream: Union[IO[bytes], IO[str], str], column_map: Optional[ColumnMap] = None) -> ParseResult:
    """
    Разбор CSV с заголовком (колонки в стиле OpenCellID)

    Args:
        stream: Поток байтов/текста или путь к файлу
        column_map: Имена колонок широты и долготы

    Returns:
        Записи и число пропущенных строк
    """
    column_map = column_map or ColumnMap()

    try:
        frame, malformed = _read_records_frame(stream)
    except pd.errors.EmptyDataError as e:
        raise ArtifactError(f"Пустой поток без заголовка: {e}") from e
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise ArtifactError(f"Не удалось прочитать поток вышек: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [c for c in (column_map.lat, column_map.lon) if c not in frame.columns]
    if missing:
        raise ConfigurationError(f"В файле нет колонок {missing}; найдены {list(frame.columns)}")

    lat = pd.to_numeric(frame[column_map.lat], errors="coerce").to_numpy(dtype=np.float64)
    lon = pd.to_numeric(frame[column_map.lon], errors="coerce").to_numpy(dtype=np.float64)
    valid = np.isfinite(lat) & np.isfinite(lon) & (np.abs(lat) <= 90.0) & (np.abs(lon) <= 180.0)

    records = [BsRecord(float(a), float(b)) for a, b in zip(lat[valid], lon[valid])]
    skipped = int((~valid).sum()) + malformed

    logger.info(f"Разобрано записей: {len(records)}, пропущено: {skipped}")
    return ParseResult(records=records, skipped=skipped)


def build_grid(bounds: Tuple[float, float, float, float], side_km: float) -> List[RoiSpec]:
    """
    Разбиение прямоугольника (south, west, north, east) на RoI построчно с юга

    Внутри одной строки все ячейки имеют одинаковые угловые размеры,
    вычисленные на южной широте строки.
    """
    south, west, north, east = (float(v) for v in bounds)
    if side_km <= 0 or not math.isfinite(side_km):
        raise ConfigurationError(f"side_km должен быть положительным, получено {side_km}")
    if side_km > 0.01 * EARTH_RADIUS_KM:
        raise ConfigurationError(f"side_km={side_km} не мал по сравнению с радиусом Земли")
    if not (-90.0 <= south < north <= 90.0):
        raise ConfigurationError(f"Вырожденные границы по широте: {south}..{north}")
    if not (-180.0 <= west <= 180.0 and -180.0 <= east <= 180.0):
        raise ConfigurationError(f"Долготы вне диапазона: {west}..{east}")
    if west > east:
        raise UnsupportedRegionError("Регионы, пересекающие антимеридиан, не поддерживаются")
    if west == east:
        raise ConfigurationError("Вырожденные границы по долготе")

    delta_theta, _ = angular_extents(0.0, side_km)
    n_rows = math.ceil((north - south) / delta_theta - 1e-12)

    grid: List[RoiSpec] = []
    for row in range(n_rows):
        lat0 = south + row * delta_theta
        _, delta_phi = angular_extents(lat0, side_km)
        n_cols = math.ceil((east - west) / delta_phi - 1e-12)
        for col in range(n_cols):
            grid.append(RoiSpec.at(lat0, west + col * delta_phi, side_km, row=row, col=col))

    logger.info(f"Построена сетка: {n_rows} строк, {len(grid)} RoI при L={side_km} км")
    return grid


def rasterize(spec: RoiSpec, bs_local: np.ndarray) -> BsImage:
    """Бинарное изображение 64×64: пиксель (i, j) занят, если floor(64·x/L)=i и floor(64·y/L)=j"""
    points = np.asarray(bs_local, dtype=np.float64).reshape(-1, 2)
    side = spec.side_km
    if points.size and ((points < 0).any() or (points >= side).any() or not np.isfinite(points).all()):
        raise OutOfBoundsError(f"БС вне [0, {side})² при растеризации {spec.roi_id}")

    # x < L, но 64·x/L может округлиться до 64
    indices = np.minimum(np.floor(spec.grid_n * points / side).astype(np.int64), spec.grid_n - 1)
    pixels = np.zeros((spec.grid_n, spec.grid_n), dtype=np.uint8)
    if len(indices):
        pixels[indices[:, 0], indices[:, 1]] = 1
    dedup = len(indices) - int(pixels.sum())
    return BsImage(pixels, dedup_count=dedup)


def pixel_center(i: int, j: int, spec: RoiSpec) -> Tuple[float, float]:
    """Центр пикселя (i, j) в локальных км"""
    if not (0 <= i < spec.grid_n and 0 <= j < spec.grid_n):
        raise OutOfBoundsError(f"Индекс пикселя ({i}, {j}) вне 0..{spec.grid_n - 1}")
    step = spec.pixel_km
    return ((i + 0.5) * step, (j + 0.5) * step)


def pixel_centers(indices: np.ndarray, side_km: float, grid_n: int = GRID_N) -> np.ndarray:
    """Векторная версия pixel_center для массива индексов формы (k, 2)"""
    indices = np.asarray(indices, dtype=np.float64).reshape(-1, 2)
    return (indices + 0.5) * (side_km / grid_n)


def assign_and_filter(records: Sequence[BsRecord], grid: Sequence[RoiSpec]) -> AssignResult:
    """
    Распределение записей по RoI сетки и фильтрация по числу занятых пикселей

    RoI с числом занятых пикселей ≤ 20 или ≥ 400 отбрасываются.
    """
    result = AssignResult(rois=[])
    if not grid:
        result.unassigned = len(records)
        return result

    lat = np.fromiter((r.lat for r in records), dtype=np.float64, count=len(records))
    lon = np.fromiter((r.lon for r in records), dtype=np.float64, count=len(records))

    index: Dict[Tuple[int, int], RoiSpec] = {(s.row, s.col): s for s in grid}
    # Для каждой строки: южная широта, долгота виртуальной колонки 0 и угловые размеры
    rows: Dict[int, Tuple[float, float, float, float]] = {}
    for s in grid:
        rows.setdefault(s.row, (s.origin_lat, s.origin_lon - s.col * s.delta_phi_deg, s.delta_theta_deg, s.delta_phi_deg))

    row_ids = np.array(sorted(rows), dtype=np.int64)
    row_lat0 = np.array([rows[r][0] for r in row_ids])
    row_west = np.array([rows[r][1] for r in row_ids])
    row_dtheta = np.array([rows[r][2] for r in row_ids])
    row_dphi = np.array([rows[r][3] for r in row_ids])

    pos = np.searchsorted(row_lat0, lat, side="right") - 1
    inside = pos >= 0
    pos_safe = np.clip(pos, 0, len(row_ids) - 1)
    inside &= lat < row_lat0[pos_safe] + row_dtheta[pos_safe]
    col = np.floor((lon - row_west[pos_safe]) / row_dphi[pos_safe]).astype(np.int64)
    inside &= col >= 0

    keys = np.full(len(records), -1, dtype=np.int64)
    cells: List[Tuple[int, int]] = []
    cell_of: Dict[Tuple[int, int], int] = {}
    for k in np.flatnonzero(inside):
        key = (int(row_ids[pos_safe[k]]), int(col[k]))
        if key not in index:
            continue
        if key not in cell_of:
            cell_of[key] = len(cells)
            cells.append(key)
        keys[k] = cell_of[key]

    result.unassigned = int((keys < 0).sum())
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    starts = np.searchsorted(sorted_keys, np.arange(len(cells)), side="left")
    ends = np.searchsorted(sorted_keys, np.arange(len(cells)), side="right")

    kept_by_key: Dict[Tuple[int, int], Roi] = {}
    for cell_idx, key in enumerate(cells):
        members = order[starts[cell_idx]:ends[cell_idx]]
        spec = index[key]
        local = to_local_km(lat[members], lon[members], spec)
        image = rasterize(spec, local)
        occupied = image.occupied_count
        result.dedup_total += image.dedup_count
        if occupied < MIN_OCCUPIED:
            result.dropped_low += 1
            continue
        if occupied > MAX_OCCUPIED:
            result.dropped_high += 1
            continue
        kept_by_key[key] = Roi(
            spec=spec,
            bs_local=local,
            image=image,
            raw_count=len(members),
            bs_geo=np.column_stack([lat[members], lon[members]]),
        )

    result.rois = [kept_by_key[k] for k in sorted(kept_by_key)]
    result.empty_cells = len(grid) - len(cells)
    logger.info(
        f"RoI: оставлено {result.kept}, мало БС {result.dropped_low}, "
        f"много БС {result.dropped_high}, пустых {result.empty_cells}"
    )
    return result


def to_local_km(lat: np.ndarray, lon: np.ndarray, spec: RoiSpec) -> np.ndarray:
    """Равнопромежуточная проекция относительно юго-западного угла RoI"""
    cos_lat = math.cos(math.radians(spec.origin_lat))
    x = EARTH_RADIUS_KM * cos_lat * np.radians(np.asarray(lon) - spec.origin_lon)
    y = EARTH_RADIUS_KM * np.radians(np.asarray(lat) - spec.origin_lat)
    # Точки на верхней границе после округления прижимаются внутрь
    upper = np.nextafter(spec.side_km, 0.0)
    return np.column_stack([np.clip(x, 0.0, upper), np.clip(y, 0.0, upper)])
