"""
Сверточный автоэнкодер: изображение БС 64×64 -> многообразие 32×32

Энкодер: 3 свертки + ReLU, полносвязная сеть со скрытым слоем -> латентный вектор.
Декодер: зеркальная полносвязная сеть, 3 транспонированные свертки
(ReLU после первых двух, sigmoid после последней) и центральная маска.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.geodata import BsImage
from ..core.simcore import Manifold, stream
from ..errors import ArtifactError, DomainError, TrainingDivergedError
from ..utils.decorators import log_duration
from .neuralnet import LayerSpec, Network, Params, Tape, l1_grad, sgd_step
from .weights_io import load_weights, save_weights

logger = logging.getLogger(__name__)

ENCODER_CHANNELS = (1, 8, 16, 32)
INIT_SCHEME = "glorot_uniform_f32"
Metric = Literal["coverage", "rate"]


class ArchConfig(BaseModel):
    """Архитектура: каналы сверток фиксированы, ширины полносвязных слоев настраиваются"""
    model_config = ConfigDict(frozen=True)

    grid_n: int = Field(default=64, ge=16)
    channels: Tuple[int, int, int, int] = ENCODER_CHANNELS
    ff_hidden: int = Field(default=512, ge=1)
    latent_dim: int = Field(default=128, ge=1)

    @model_validator(mode="after")
    def _check_arch(self) -> 'ArchConfig':
        if tuple(self.channels) != ENCODER_CHANNELS:
            raise ValueError(f"Каналы сверток фиксированы: {ENCODER_CHANNELS}")
        if self.grid_n % 8:
            raise ValueError(f"grid_n должен делиться на 8, получено {self.grid_n}")
        return self

    @property
    def bottleneck(self) -> int:
        return self.grid_n // 8

    @property
    def flat_dim(self) -> int:
        return ENCODER_CHANNELS[-1] * self.bottleneck * self.bottleneck

    @property
    def roe_n(self) -> int:
        return self.grid_n // 2


class TrainConfig(BaseModel):
    """Параметры обучения: SGD по среднему по батчу L1"""
    model_config = ConfigDict(frozen=True)

    lr: float = Field(default=1e-3, ge=0.0)
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=60, ge=1)
    seed: int = Field(default=0, ge=0)
    split_fraction: float = Field(default=0.7, gt=0.0, lt=1.0)
    metric: Metric = "coverage"


class Sample(NamedTuple):
    """Обучающий пример: изображение БС и истинное многообразие"""
    image: BsImage
    target: Manifold
    roi_id: str = ""


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    held_out_loss: Optional[float] = None


@dataclass(eq=False)
class ModelParams:
    """Обученная модель: архитектура, сеть, метрика и манифест обучения"""
    arch: ArchConfig
    network: Network
    metric: Metric = "coverage"
    rate_scale: Optional[float] = None
    manifest: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.metric == "rate" and self.rate_scale is not None and self.rate_scale <= 0:
            raise DomainError(f"rate_scale должен быть положительным, получено {self.rate_scale}")

    @property
    def output_kind(self) -> str:
        return "coverage" if self.metric == "coverage" else "rate_scaled"


@dataclass
class TrainResult:
    model: ModelParams
    history: List[EpochRecord]

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.epoch, r.train_loss, r.held_out_loss) for r in self.history],
            columns=['epoch', 'train_loss', 'held_out_loss'],
        )


@dataclass
class EvalReport:
    """Средняя сумма |X − Y| по тестовым RoI и потери по каждому RoI"""
    mean_loss: float
    losses: List[float]
    roi_ids: List[str]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({'roi_id': self.roi_ids, 'loss': self.losses})


@dataclass
class FitResult:
    train: TrainResult
    report: EvalReport
    train_ids: List[str]
    test_ids: List[str]

    @property
    def model(self) -> ModelParams:
        return self.train.model


def build_encoder(arch: ArchConfig) -> List[LayerSpec]:
    c0, c1, c2, c3 = ENCODER_CHANNELS
    return [
        LayerSpec.conv(c0, c1), LayerSpec(kind="relu"),
        LayerSpec.conv(c1, c2), LayerSpec(kind="relu"),
        LayerSpec.conv(c2, c3), LayerSpec(kind="relu"),
        LayerSpec(kind="flatten"),
        LayerSpec.affine(arch.flat_dim, arch.ff_hidden), LayerSpec(kind="relu"),
        LayerSpec.affine(arch.ff_hidden, arch.latent_dim),
    ]


def build_decoder(arch: ArchConfig) -> List[LayerSpec]:
    c0, c1, c2, c3 = ENCODER_CHANNELS
    side = arch.bottleneck
    return [
        LayerSpec.affine(arch.latent_dim, arch.ff_hidden), LayerSpec(kind="relu"),
        LayerSpec.affine(arch.ff_hidden, arch.flat_dim),
        LayerSpec(kind="unflatten", shape=(c3, side, side)),
        LayerSpec.conv_transpose(c3, c2), LayerSpec(kind="relu"),
        LayerSpec.conv_transpose(c2, c1), LayerSpec(kind="relu"),
        LayerSpec.conv_transpose(c1, c0), LayerSpec(kind="sigmoid"),
    ]


def build_cnnae(arch: ArchConfig) -> List[LayerSpec]:
    return build_encoder(arch) + build_decoder(arch)


def init_model(arch: ArchConfig, seed: int = 0, metric: Metric = "coverage") -> ModelParams:
    network = Network(build_cnnae(arch), seed=seed)
    return ModelParams(arch=arch, network=network, metric=metric, manifest={'seed': seed, 'init': INIT_SCHEME})


def mask(decoded: np.ndarray) -> np.ndarray:
    """Центральный квадрат: строки и столбцы n/4 .. 3n/4 − 1 по последним двум осям"""
    n = decoded.shape[-1]
    lo, hi = n // 4, 3 * n // 4
    return decoded[..., lo:hi, lo:hi]


def _image_batch(images: Sequence[BsImage], arch: ArchConfig) -> np.ndarray:
    batch = np.stack([np.asarray(image.pixels, dtype=np.float64) for image in images])
    if batch.shape[1:] != (arch.grid_n, arch.grid_n):
        raise DomainError(f"Изображения {batch.shape[1:]} не совпадают с архитектурой {arch.grid_n}×{arch.grid_n}")
    return batch[:, None, :, :]


def encode(model: ModelParams, images: np.ndarray) -> np.ndarray:
    depth = len(build_encoder(model.arch))
    return Network(model.network.specs[:depth], model.network.params[:depth]).forward(images)


def decode(model: ModelParams, latent: np.ndarray) -> np.ndarray:
    depth = len(build_encoder(model.arch))
    return Network(model.network.specs[depth:], model.network.params[depth:]).forward(latent)


def forward_batch(model: ModelParams, images: Sequence[BsImage], chunk: int = 64) -> List[Manifold]:
    """Выходы сети (до обратного масштабирования скорости) для набора изображений"""
    manifolds: List[Manifold] = []
    for start in range(0, len(images), chunk):
        decoded = model.network.forward(_image_batch(images[start:start + chunk], model.arch))
        for values in mask(decoded[:, 0]):
            manifolds.append(Manifold(values, kind=model.output_kind))
    return manifolds


def forward(model: ModelParams, image: BsImage) -> Manifold:
    return forward_batch(model, [image])[0]


def predict(model: ModelParams, image: BsImage) -> Manifold:
    """Многообразие в физических единицах: покрытие или скорость бит/с/Гц"""
    output = forward(model, image)
    if model.metric == "rate":
        return unscale_rate(output, _require_scale(model))
    return output


def l1_loss(x: Manifold, y: Manifold) -> float:
    """Σ|X − Y| по всем точкам RoE"""
    if x.kind != y.kind:
        raise DomainError(f"Разные виды многообразий: {x.kind} и {y.kind}")
    if x.shape != y.shape:
        raise DomainError(f"Разные формы многообразий: {x.shape} и {y.shape}")
    return float(np.abs(x.values - y.values).sum())


def loss_reduction(baseline_loss: float, nn_loss: float) -> float:
    """Относительное снижение потерь, %: (baseline − nn) / baseline · 100"""
    if baseline_loss <= 0:
        raise DomainError(f"Потери базовой модели должны быть положительными, получено {baseline_loss}")
    return (baseline_loss - nn_loss) / baseline_loss * 100.0


def split_dataset(items: Sequence[Any], split_fraction: float, seed: int) -> Tuple[List[Any], List[Any]]:
    """Перемешивание с seed; первые ⌈f·n⌉ в обучение, остальные в тест"""
    n = len(items)
    if n < 2:
        raise DomainError(f"Для разбиения нужно хотя бы 2 RoI, получено {n}")
    if not 0.0 < split_fraction < 1.0:
        raise DomainError(f"split_fraction должен лежать в (0, 1), получено {split_fraction}")
    # round убирает хвосты вида 7.000000000000001 перед ceil
    n_train = math.ceil(round(split_fraction * n, 9))
    if n_train >= n:
        raise DomainError(f"При n={n} и доле {split_fraction} тестовая часть пуста (нужно n ≥ 4)")
    order = stream((seed, 3)).permutation(n)
    return [items[k] for k in order[:n_train]], [items[k] for k in order[n_train:]]


def default_rate_scale(targets: Sequence[Manifold]) -> float:
    """Максимум скорости по обучающей выборке"""
    scale = max((float(m.values.max()) for m in targets), default=0.0)
    if scale <= 0:
        raise DomainError("Все обучающие скорости нулевые: масштаб не определен")
    return scale


def scale_rate(manifold: Manifold, rate_scale: float) -> Tuple[Manifold, int]:
    """rate_raw / rate_scale с отсечением на 1.0; возвращает число отсеченных точек"""
    if rate_scale <= 0:
        raise DomainError(f"rate_scale должен быть положительным, получено {rate_scale}")
    if manifold.kind != "rate_raw":
        raise DomainError(f"Ожидалось многообразие rate_raw, получено {manifold.kind}")
    scaled = manifold.values / rate_scale
    clipped = int(np.count_nonzero(scaled > 1.0))
    return Manifold(np.minimum(scaled, 1.0), kind="rate_scaled"), clipped


def unscale_rate(manifold: Manifold, rate_scale: float) -> Manifold:
    if rate_scale <= 0:
        raise DomainError(f"rate_scale должен быть положительным, получено {rate_scale}")
    if manifold.kind != "rate_scaled":
        raise DomainError(f"Ожидалось многообразие rate_scaled, получено {manifold.kind}")
    return Manifold(manifold.values * rate_scale, kind="rate_raw")


def _require_scale(model: ModelParams) -> float:
    if model.rate_scale is None:
        raise DomainError("У модели скорости не задан rate_scale")
    return model.rate_scale


def _as_samples(dataset: Sequence[Any]) -> List[Sample]:
    return [item if isinstance(item, Sample) else Sample(*item) for item in dataset]


def dataset_fingerprint(dataset: Sequence[Any]) -> str:
    digest = hashlib.blake2b(digest_size=16)
    for sample in _as_samples(dataset):
        digest.update(sample.image.pixels.tobytes())
        digest.update(np.ascontiguousarray(sample.target.values).tobytes())
    return digest.hexdigest()


def _training_kind(samples: Sequence[Sample], config: TrainConfig) -> str:
    kinds = {s.target.kind for s in samples}
    if len(kinds) != 1:
        raise DomainError(f"Многообразия разных видов в одном наборе: {sorted(kinds)}")
    kind = kinds.pop()
    expected = "coverage" if config.metric == "coverage" else "rate_scaled"
    if kind != expected:
        raise DomainError(f"Для метрики '{config.metric}' нужны многообразия '{expected}', получено '{kind}'")
    return kind


def _stack(samples: Sequence[Sample], arch: ArchConfig) -> Tuple[np.ndarray, np.ndarray]:
    images = _image_batch([s.image for s in samples], arch)
    targets = np.stack([s.target.values for s in samples])
    if targets.shape[1:] != (arch.roe_n, arch.roe_n):
        raise DomainError(f"Многообразия {targets.shape[1:]} не совпадают с RoE {arch.roe_n}×{arch.roe_n}")
    return images, targets


def _mean_loss(network: Network, images: np.ndarray, targets: np.ndarray, chunk: int = 64) -> float:
    losses: List[float] = []
    for start in range(0, len(images), chunk):
        predicted = mask(network.forward(images[start:start + chunk])[:, 0])
        losses.extend(np.abs(predicted - targets[start:start + chunk]).sum(axis=(1, 2)).tolist())
    return math.fsum(losses) / len(losses)


@log_duration("train")
def train(
    dataset: Sequence[Any],
    arch: ArchConfig,
    config: TrainConfig,
    held_out: Optional[Sequence[Any]] = None,
    initial_params: Optional[List[Params]] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """
    Минибатч-SGD на среднем по батчу суммарном L1

    Порядок примеров в эпохе, инициализация и суммирование градиентов
    детерминированы seed. В конце обучения веса округляются до float32.
    """
    samples = _as_samples(dataset)
    if not samples:
        raise DomainError("Пустой обучающий набор")
    _training_kind(samples, config)
    images, targets = _stack(samples, arch)
    held = None
    if held_out:
        held_samples = _as_samples(held_out)
        _training_kind(held_samples, config)
        held = _stack(held_samples, arch)

    specs = build_cnnae(arch)
    if initial_params is not None:
        network = Network(specs, [{k: v.copy() for k, v in layer.items()} for layer in initial_params])
    else:
        network = Network(specs, seed=config.seed)
    n = len(samples)
    lo, hi = arch.grid_n // 4, 3 * arch.grid_n // 4

    logger.info(
        f"🚀 Обучение: {n} примеров, {network.parameter_count} параметров, "
        f"эпох {config.epochs}, lr={config.lr}, batch={config.batch_size}"
    )
    history: List[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        order = stream((config.seed, 7, epoch)).permutation(n)
        epoch_losses: List[float] = []
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            tape = Tape()
            decoded = network.forward(images[idx], tape)
            predicted = mask(decoded[:, 0])
            per_sample = np.abs(predicted - targets[idx]).sum(axis=(1, 2))
            batch_loss = float(per_sample.mean())
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"Потери стали неконечными на эпохе {epoch}: уменьшите lr",
                    diagnostics={'epoch': epoch, 'batch': batch_index, 'lr': config.lr, 'loss': batch_loss},
                )
            grad = np.zeros_like(decoded)
            grad[:, 0, lo:hi, lo:hi] = l1_grad(predicted, targets[idx]) / len(idx)
            grads, _ = network.backward(tape, grad)
            network.params = sgd_step(network.params, grads, config.lr)
            if not all(np.isfinite(v).all() for layer in network.params for v in layer.values()):
                raise TrainingDivergedError(
                    f"Веса стали неконечными на эпохе {epoch}: уменьшите lr",
                    diagnostics={'epoch': epoch, 'batch': batch_index, 'lr': config.lr, 'loss': batch_loss},
                )
            epoch_losses.extend(per_sample.tolist())

        record = EpochRecord(
            epoch=epoch,
            train_loss=math.fsum(epoch_losses) / n,
            held_out_loss=_mean_loss(network, *held) if held is not None else None,
        )
        history.append(record)
        logger.debug(f"Эпоха {epoch}: train={record.train_loss:.4f}, held_out={record.held_out_loss}")
        if on_epoch is not None:
            on_epoch(record)

    network.params = [{k: v.astype(np.float32).astype(np.float64) for k, v in layer.items()} for layer in network.params]
    model = ModelParams(
        arch=arch,
        network=network,
        metric=config.metric,
        manifest={
            'seed': config.seed,
            'init': INIT_SCHEME if initial_params is None else 'provided',
            'lr': config.lr,
            'epochs': config.epochs,
            'batch_size': config.batch_size,
            'train_size': n,
            'dataset_fingerprint': dataset_fingerprint(samples),
        },
    )
    logger.info(f"✅ Обучение завершено: финальная потеря {history[-1].train_loss:.4f}")
    return TrainResult(model=model, history=history)


def evaluate(model: ModelParams, test_set: Sequence[Any]) -> EvalReport:
    """
    Потери на тестовом наборе без обновления весов

    Для модели скорости цели rate_raw сравниваются с восстановленной скоростью
    в бит/с/Гц, цели rate_scaled - с выходом сети.
    """
    samples = _as_samples(test_set)
    if not samples:
        raise DomainError("Пустой тестовый набор")
    outputs = forward_batch(model, [s.image for s in samples])
    losses: List[float] = []
    for sample, output in zip(samples, outputs):
        if sample.target.kind == "rate_raw" and model.metric == "rate":
            output = unscale_rate(output, _require_scale(model))
        losses.append(l1_loss(output, sample.target))
    return EvalReport(
        mean_loss=math.fsum(losses) / len(losses),
        losses=losses,
        roi_ids=[s.roi_id for s in samples],
    )


def fit_and_evaluate(
    dataset: Sequence[Any],
    arch: ArchConfig,
    config: TrainConfig,
    rate_scale: Optional[float] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> FitResult:
    """Разбиение 70/30, обучение на обучающей части и оценка на тестовой"""
    samples = _as_samples(dataset)
    train_part, test_part = split_dataset(samples, config.split_fraction, config.seed)

    clipped_train = 0
    if config.metric == "rate":
        rate_scale = rate_scale or default_rate_scale([s.target for s in train_part])
        scaled_train, scaled_test = [], []
        for s in train_part:
            scaled, clipped = scale_rate(s.target, rate_scale)
            clipped_train += clipped
            scaled_train.append(Sample(s.image, scaled, s.roi_id))
        for s in test_part:
            scaled_test.append(Sample(s.image, scale_rate(s.target, rate_scale)[0], s.roi_id))
        logger.info(f"Масштаб скорости {rate_scale:.4f} бит/с/Гц, отсечено точек в обучении: {clipped_train}")
        result = train(scaled_train, arch, config, held_out=scaled_test, on_epoch=on_epoch)
        result.model.rate_scale = rate_scale
    else:
        result = train(train_part, arch, config, held_out=test_part, on_epoch=on_epoch)

    result.model.manifest.update({
        'split_fraction': config.split_fraction,
        'split_seed': config.seed,
        'test_size': len(test_part),
        'rate_scale': rate_scale if config.metric == "rate" else None,
        'rate_clipped_train': clipped_train,
    })
    report = evaluate(result.model, test_part)
    logger.info(f"📊 Тестовая потеря: {report.mean_loss:.4f} на {len(test_part)} RoI")
    return FitResult(
        train=result,
        report=report,
        train_ids=[s.roi_id for s in train_part],
        test_ids=[s.roi_id for s in test_part],
    )


class CnnAePredictor:
    """Предиктор покрытия для планировщика на основе обученной модели"""

    def __init__(self, model: ModelParams):
        if model.metric != "coverage":
            raise DomainError("Планировщику нужна модель покрытия")
        self.model = model

    def __call__(self, image: BsImage) -> Manifold:
        return forward(self.model, image)

    def predict_batch(self, images: Sequence[BsImage]) -> List[Manifold]:
        return forward_batch(self.model, list(images))


def save_model(model: ModelParams, directory: Path) -> Path:
    """Сохраняет веса и манифест (архитектура, метрика, rate_scale, параметры обучения)"""
    manifest = {
        'arch': model.arch.model_dump(),
        'metric': model.metric,
        'rate_scale': model.rate_scale,
        'train': model.manifest,
    }
    return save_weights(Path(directory), model.network.specs, model.network.params, manifest)


def load_model(directory: Path) -> ModelParams:
    specs, params, document = load_weights(Path(directory))
    try:
        arch = ArchConfig(**document['arch'])
        metric = document['metric']
    except (KeyError, TypeError, ValueError) as e:
        raise ArtifactError(f"Некорректный манифест модели в {directory}: {e}") from e
    if specs != build_cnnae(arch):
        raise ArtifactError(f"Слои модели в {directory} не соответствуют архитектуре")
    model = ModelParams(
        arch=arch,
        network=Network(specs, params),
        metric=metric,
        rate_scale=document.get('rate_scale'),
        manifest=document.get('train', {}),
    )
    logger.info(f"📦 Модель загружена: {directory} ({metric})")
    return model
