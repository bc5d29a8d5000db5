"""
Чтение и запись артефактов: PGM-изображения, каталоги RoI, CSV-многообразия,
JSON-манифесты, файлы планов и тепловые карты
"""

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from ..core.geodata import BsImage, Roi, RoiSpec
from ..core.simcore import Manifold, ManifoldKind
from ..errors import ArtifactError, DomainError

logger = logging.getLogger(__name__)

IMAGE_FILE = "image.pgm"
ROI_FILE = "roi.json"
INDEX_FILE = "index.json"
MANIFEST_FILE = "manifold.json"


def write_json(path: Path, document: Dict[str, Any]) -> Path:
    """JSON с сортировкой ключей, без меток времени: повторный запуск дает те же байты"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Не удалось записать {path}: {e}") from e
    return path


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ArtifactError(f"Файл не найден: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Не удалось прочитать JSON {path}: {e}") from e


def write_pgm(path: Path, pixels: np.ndarray, maxval: int = 255) -> Path:
    """Бинарный PGM (P5), 8 бит на пиксель"""
    data = np.asarray(pixels)
    if data.ndim != 2:
        raise DomainError(f"PGM ожидает двумерный массив, получено {data.shape}")
    if (data < 0).any() or (data > maxval).any():
        raise DomainError(f"Значения пикселей вне 0..{maxval}")
    height, width = data.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + data.astype(np.uint8).tobytes())
    except OSError as e:
        raise ArtifactError(f"Не удалось записать {path}: {e}") from e
    return path


def read_pgm(path: Path) -> np.ndarray:
    """Чтение бинарного PGM (P5) с 8-битными значениями"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ArtifactError(f"Не удалось прочитать {path}: {e}") from e
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ArtifactError(f"Обрезанный заголовок PGM: {path}")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ArtifactError(f"Неподдерживаемый формат {tokens[0]!r} в {path}, ожидается P5")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ArtifactError(f"Поддерживаются только 8-битные PGM, maxval={maxval}")
    body = raw[pos + 1:]
    if len(body) != width * height:
        raise ArtifactError(f"Размер данных PGM {len(body)} != {width}×{height}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def roi_document(roi: Roi) -> Dict[str, Any]:
    return {
        'roi_id': roi.roi_id,
        'spec': roi.spec.model_dump(),
        'raw_count': roi.raw_count,
        'occupied': roi.image.occupied_count,
        'dedup_count': roi.image.dedup_count,
        'synthetic': roi.synthetic,
        'bs_local_km': roi.bs_local.tolist(),
        'bs_geo': roi.bs_geo.tolist() if roi.bs_geo is not None else None,
        'meta': roi.meta,
    }


def write_roi(root: Path, roi: Roi) -> Path:
    """Каталог <root>/<roi_id>/ с image.pgm (maxval 1) и roi.json"""
    directory = Path(root) / roi.roi_id
    write_pgm(directory / IMAGE_FILE, roi.image.pixels, maxval=1)
    write_json(directory / ROI_FILE, roi_document(roi))
    return directory


def read_roi(directory: Path) -> Roi:
    directory = Path(directory)
    document = read_json(directory / ROI_FILE)
    pixels = read_pgm(directory / IMAGE_FILE)
    try:
        spec = RoiSpec(**document['spec'])
        bs_geo = document.get('bs_geo')
        return Roi(
            spec=spec,
            bs_local=np.asarray(document['bs_local_km'], dtype=np.float64).reshape(-1, 2),
            image=BsImage(pixels, dedup_count=int(document.get('dedup_count', 0))),
            raw_count=int(document['raw_count']),
            bs_geo=np.asarray(bs_geo, dtype=np.float64) if bs_geo is not None else None,
            synthetic=bool(document.get('synthetic', False)),
            meta=dict(document.get('meta', {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactError(f"Некорректный RoI в {directory}: {e}") from e


def list_roi_dirs(root: Path) -> List[Path]:
    """Каталоги RoI под root, отсортированные по имени"""
    root = Path(root)
    if (root / ROI_FILE).exists():
        return [root]
    if not root.is_dir():
        raise ArtifactError(f"Каталог RoI не найден: {root}")
    return sorted(p for p in root.iterdir() if (p / ROI_FILE).exists())


def read_rois(root: Path) -> List[Roi]:
    return [read_roi(d) for d in list_roi_dirs(root)]


def write_rois(root: Path, rois: Iterable[Roi], index: Dict[str, Any]) -> Path:
    """Записывает RoI и index.json со счетчиками фильтра"""
    root = Path(root)
    ids = [write_roi(root, roi).name for roi in rois]
    document = dict(index)
    document['rois'] = ids
    return write_json(root / INDEX_FILE, document)


def write_manifold_csv(path: Path, manifold: Manifold) -> Path:
    """CSV без заголовка: строка i - точки RoE (i, 0..31), формат %.17g"""
    path = Path(path)
    buffer = io.StringIO()
    np.savetxt(buffer, manifold.values, fmt="%.17g", delimiter=",")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buffer.getvalue(), encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Не удалось записать {path}: {e}") from e
    return path


def read_manifold_csv(path: Path, kind: ManifoldKind = "coverage") -> Manifold:
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, dtype=str)
    except FileNotFoundError as e:
        raise ArtifactError(f"Файл не найден: {path}") from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ArtifactError(f"Некорректный CSV многообразия {path}: {e}") from e
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    if np.isnan(values).any():
        raise ArtifactError(f"Некорректный CSV многообразия {path}: нечисловые или пропущенные значения")
    try:
        return Manifold(values, kind=kind)
    except DomainError as e:
        raise ArtifactError(f"Некорректное многообразие в {path}: {e}") from e


def read_threshold_csv(path: Path) -> np.ndarray:
    """Сетка порогов покрытия 32×32 из CSV"""
    return read_manifold_csv(path, kind="coverage").values.copy()


def manifold_kind_from_manifest(path: Path) -> ManifoldKind:
    """Вид многообразия по manifold.json рядом с CSV; по умолчанию по имени файла"""
    path = Path(path)
    sidecar = path.parent / MANIFEST_FILE
    if sidecar.exists():
        kinds = read_json(sidecar).get('files', {})
        if path.name in kinds:
            return kinds[path.name]
    return "rate_raw" if path.name.startswith("rate") else "coverage"


def coverage_file_name(gamma_db: float) -> str:
    return f"coverage_g{gamma_db:g}dB.csv"


def heatmap_levels(manifold: Manifold) -> Dict[str, Any]:
    """8-битные уровни floor(255·v/vmax + 0.5); vmax = 1, если значения не превышают 1"""
    values = manifold.values
    vmax = max(1.0, float(values.max()))
    levels = np.floor(255.0 * values / vmax + 0.5).astype(np.int64)
    return {'levels': np.clip(levels, 0, 255), 'vmin': 0.0, 'vmax': vmax}


def write_heatmap(manifold: Manifold, path: Path, png: Optional[Path] = None, source: str = "") -> Path:
    """PGM-тепловая карта, JSON со шкалой рядом и необязательный PNG"""
    path = Path(path)
    scaled = heatmap_levels(manifold)
    write_pgm(path, scaled['levels'], maxval=255)
    write_json(path.with_suffix(".json"), {
        'kind': manifold.kind,
        'shape': list(manifold.shape),
        'vmin': scaled['vmin'],
        'vmax': scaled['vmax'],
        'levels': 255,
        'rounding': 'floor(255*v/vmax + 0.5)',
        'source': source,
    })
    if png is not None:
        _write_png(manifold, Path(png), scaled['vmax'])
    return path


def _write_png(manifold: Manifold, path: Path, vmax: float) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figure, axis = plt.subplots(figsize=(4, 4))
    image = axis.imshow(manifold.values, cmap="viridis", vmin=0.0, vmax=vmax, origin="lower")
    figure.colorbar(image, ax=axis, fraction=0.046)
    axis.set_title(manifold.kind)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        figure.savefig(path, dpi=100, metadata={'Software': None})
    except OSError as e:
        raise ArtifactError(f"Не удалось записать {path}: {e}") from e
    finally:
        plt.close(figure)


def write_frame_csv(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise ArtifactError(f"Не удалось записать {path}: {e}") from e
    return path

