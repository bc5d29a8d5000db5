"""
Сериализация весов: один бинарный файл little-endian float32 и JSON-манифест
со спецификациями слоев, формами и смещениями в байтах
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..errors import ArtifactError
from .neuralnet import LayerSpec, Params

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "weights.bin"
MANIFEST_FILE = "model.json"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")


def pack_weights(specs: Sequence[LayerSpec], params: Sequence[Params]) -> Tuple[bytes, List[Dict[str, Any]]]:
    """Плоские тензоры подряд в порядке слоев; bias после weight"""
    chunks: List[bytes] = []
    entries: List[Dict[str, Any]] = []
    offset = 0
    for index, (spec, layer) in enumerate(zip(specs, params)):
        for name in sorted(layer, key=lambda n: (n != 'weight', n)):
            blob = np.ascontiguousarray(layer[name], dtype=_DTYPE).tobytes()
            entries.append({
                'layer': index,
                'name': name,
                'shape': list(layer[name].shape),
                'offset': offset,
                'nbytes': len(blob),
            })
            chunks.append(blob)
            offset += len(blob)
    return b"".join(chunks), entries


def unpack_weights(specs: Sequence[LayerSpec], blob: bytes, entries: Sequence[Dict[str, Any]]) -> List[Params]:
    params: List[Params] = [{} for _ in specs]
    for entry in entries:
        start, count = int(entry['offset']), int(entry['nbytes'])
        if start + count > len(blob):
            raise ArtifactError(f"Тензор {entry['layer']}.{entry['name']} выходит за пределы файла весов")
        values = np.frombuffer(blob, dtype=_DTYPE, count=count // _DTYPE.itemsize, offset=start)
        params[int(entry['layer'])][entry['name']] = values.astype(np.float64).reshape(entry['shape'])
    return params


def save_weights(
    directory: Path,
    specs: Sequence[LayerSpec],
    params: Sequence[Params],
    manifest: Dict[str, Any],
) -> Path:
    """Записывает weights.bin и model.json; возвращает путь к манифесту"""
    directory = Path(directory)
    blob, entries = pack_weights(specs, params)
    document = dict(manifest)
    document.update({
        'format_version': FORMAT_VERSION,
        'dtype': 'float32-le',
        'weights_file': WEIGHTS_FILE,
        'layers': [spec.model_dump(exclude_none=True) for spec in specs],
        'tensors': entries,
    })
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / WEIGHTS_FILE).write_bytes(blob)
        manifest_path = directory / MANIFEST_FILE
        manifest_path.write_text(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Не удалось сохранить веса в {directory}: {e}") from e
    logger.info(f"💾 Веса сохранены: {directory} ({len(blob)} байт)")
    return manifest_path


def load_weights(directory: Path) -> Tuple[List[LayerSpec], List[Params], Dict[str, Any]]:
    """Читает модель, записанную save_weights: (слои, параметры, манифест)"""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise ArtifactError(f"Модель не найдена: {manifest_path}")
    try:
        document = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob = (directory / document.get('weights_file', WEIGHTS_FILE)).read_bytes()
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"Не удалось прочитать модель {directory}: {e}") from e
    if document.get('format_version') != FORMAT_VERSION:
        raise ArtifactError(f"Неподдерживаемая версия формата модели: {document.get('format_version')}")
    try:
        specs = [LayerSpec(**layer) for layer in document['layers']]
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactError(f"Некорректное описание слоев в {manifest_path}: {e}") from e
    params = unpack_weights(specs, blob, document.get('tensors', []))
    return specs, params, document
