"""
Минимальное ядро нейросети: свертки, транспонированные свертки, полносвязные
слои, активации, ручной обратный проход, SGD и проверка градиентов

Тензоры - массивы numpy float64 с ведущей размерностью батча N:
(N, C, H, W) для сверточных слоев и (N, D) для полносвязных.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import special

from ..errors import DomainError
from ..core.simcore import stream

logger = logging.getLogger(__name__)

KERNEL = 3
STRIDE = 2
PADDING = 1
OUTPUT_PADDING = 1

Params = Dict[str, np.ndarray]
LayerKind = Literal["conv", "conv_transpose", "affine", "relu", "sigmoid", "flatten", "unflatten"]


class LayerSpec(BaseModel):
    """Описание слоя; гиперпараметры сверток фиксированы (ядро 3, шаг 2, отступ 1)"""
    model_config = ConfigDict(frozen=True)

    kind: LayerKind
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    in_dim: Optional[int] = None
    out_dim: Optional[int] = None
    shape: Optional[Tuple[int, int, int]] = None

    @model_validator(mode="after")
    def _check_fields(self) -> 'LayerSpec':
        if self.kind in ("conv", "conv_transpose"):
            if not (self.in_channels and self.out_channels) or self.in_channels < 1 or self.out_channels < 1:
                raise ValueError(f"Слою {self.kind} нужны in_channels и out_channels ≥ 1")
        if self.kind == "affine":
            if not (self.in_dim and self.out_dim) or self.in_dim < 1 or self.out_dim < 1:
                raise ValueError("Слою affine нужны in_dim и out_dim ≥ 1")
        if self.kind == "unflatten" and (self.shape is None or min(self.shape) < 1):
            raise ValueError("Слою unflatten нужна форма (C, H, W)")
        return self

    @classmethod
    def conv(cls, in_channels: int, out_channels: int) -> 'LayerSpec':
        return cls(kind="conv", in_channels=in_channels, out_channels=out_channels)

    @classmethod
    def conv_transpose(cls, in_channels: int, out_channels: int) -> 'LayerSpec':
        return cls(kind="conv_transpose", in_channels=in_channels, out_channels=out_channels)

    @classmethod
    def affine(cls, in_dim: int, out_dim: int) -> 'LayerSpec':
        return cls(kind="affine", in_dim=in_dim, out_dim=out_dim)

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "conv_transpose", "affine")

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Формы весов: conv (Co, Ci, 3, 3), conv_transpose (Ci, Co, 3, 3), affine (out, in)"""
        if self.kind == "conv":
            return {'weight': (self.out_channels, self.in_channels, KERNEL, KERNEL), 'bias': (self.out_channels,)}
        if self.kind == "conv_transpose":
            return {'weight': (self.in_channels, self.out_channels, KERNEL, KERNEL), 'bias': (self.out_channels,)}
        if self.kind == "affine":
            return {'weight': (self.out_dim, self.in_dim), 'bias': (self.out_dim,)}
        return {}

    def fans(self) -> Tuple[int, int]:
        if self.kind in ("conv", "conv_transpose"):
            area = KERNEL * KERNEL
            return self.in_channels * area, self.out_channels * area
        if self.kind == "affine":
            return self.in_dim, self.out_dim
        return 0, 0


def conv_output_size(size: int) -> int:
    return (size + 2 * PADDING - KERNEL) // STRIDE + 1


def _check_4d(x: np.ndarray, channels: int, label: str) -> None:
    if x.ndim != 4 or x.shape[1] != channels:
        raise DomainError(f"{label}: ожидался тензор (N, {channels}, H, W), получено {x.shape}")


def _im2col(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Окна 3×3 с шагом 2 по дополненному нулями входу: (N, C, 3, 3, Ho, Wo)"""
    n, c = x.shape[:2]
    padded = np.pad(x, ((0, 0), (0, 0), (PADDING, PADDING), (PADDING, PADDING)))
    cols = np.empty((n, c, KERNEL, KERNEL, out_h, out_w))
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            cols[:, :, ki, kj] = padded[:, :, ki:ki + STRIDE * out_h:STRIDE, kj:kj + STRIDE * out_w:STRIDE]
    return cols


def _col2im(cols: np.ndarray, height: int, width: int) -> np.ndarray:
    """Сопряженная к _im2col операция: суммирует окна обратно в (N, C, H, W)"""
    n, c, _, _, out_h, out_w = cols.shape
    padded = np.zeros((n, c, height + 2 * PADDING, width + 2 * PADDING))
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            padded[:, :, ki:ki + STRIDE * out_h:STRIDE, kj:kj + STRIDE * out_w:STRIDE] += cols[:, :, ki, kj]
    return padded[:, :, PADDING:PADDING + height, PADDING:PADDING + width]


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Взаимная корреляция 3×3, шаг 2, отступ 1: (N, Ci, H, W) -> (N, Co, ⌊(H−1)/2⌋+1, …)"""
    out_channels, in_channels = weight.shape[:2]
    _check_4d(x, in_channels, "conv")
    if bias.shape != (out_channels,):
        raise DomainError(f"conv: форма смещения {bias.shape} не совпадает с ({out_channels},)")
    height, width = x.shape[2:]
    if height < KERNEL or width < KERNEL:
        raise DomainError(f"conv: вход {height}×{width} меньше ядра {KERNEL}×{KERNEL}")
    out_h, out_w = conv_output_size(height), conv_output_size(width)
    cols = _im2col(x, out_h, out_w)
    out = np.tensordot(cols, weight, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    return out + bias[None, :, None, None], cols


def conv2d_backward(
    grad: np.ndarray, cols: np.ndarray, weight: np.ndarray, input_hw: Tuple[int, int]
) -> Tuple[np.ndarray, Params]:
    grad_weight = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 4, 5]))
    grad_bias = grad.sum(axis=(0, 2, 3))
    grad_cols = np.tensordot(grad, weight, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    grad_input = _col2im(grad_cols, *input_hw)
    return grad_input, {'weight': grad_weight, 'bias': grad_bias}


def conv_transpose2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, None]:
    """
    Транспонированная свертка 3×3, шаг 2, отступ 1, output_padding 1:
    (N, Ci, H, W) -> (N, Co, 2H, 2W)

    С весом формы (Ci, Co, 3, 3) это сопряженный оператор к conv2d с тем же весом.
    """
    in_channels, out_channels = weight.shape[:2]
    _check_4d(x, in_channels, "conv_transpose")
    if bias.shape != (out_channels,):
        raise DomainError(f"conv_transpose: форма смещения {bias.shape} не совпадает с ({out_channels},)")
    height, width = x.shape[2:]
    out_h = (height - 1) * STRIDE - 2 * PADDING + KERNEL + OUTPUT_PADDING
    out_w = (width - 1) * STRIDE - 2 * PADDING + KERNEL + OUTPUT_PADDING
    cols = np.tensordot(x, weight, axes=([1], [0])).transpose(0, 3, 4, 5, 1, 2)
    out = _col2im(cols, out_h, out_w)
    return out + bias[None, :, None, None], None


def conv_transpose2d_backward(grad: np.ndarray, x: np.ndarray, weight: np.ndarray) -> Tuple[np.ndarray, Params]:
    height, width = x.shape[2:]
    grad_cols = _im2col(grad, height, width)
    grad_input = np.tensordot(grad_cols, weight, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    grad_weight = np.tensordot(x, grad_cols, axes=([0, 2, 3], [0, 4, 5]))
    grad_bias = grad.sum(axis=(0, 2, 3))
    return grad_input, {'weight': grad_weight, 'bias': grad_bias}


def affine_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """y = W·x + b для каждой строки батча (N, D_in) -> (N, D_out)"""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DomainError(f"affine: вход {x.shape} не согласован с весом {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DomainError(f"affine: форма смещения {bias.shape} не совпадает с ({weight.shape[0]},)")
    return x @ weight.T + bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid_forward(x: np.ndarray) -> np.ndarray:
    return special.expit(x)


def l1_grad(prediction: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Субградиент Σ|P − T| по P: sign(P − T), в точках равенства 0"""
    return np.sign(prediction - target)


# Прямой проход: (spec, params, x) -> (выход, кэш для обратного прохода)
def _forward_conv(spec: LayerSpec, params: Params, x: np.ndarray):
    out, cols = conv2d_forward(x, params['weight'], params['bias'])
    return out, (cols, x.shape[2:])


def _forward_conv_transpose(spec: LayerSpec, params: Params, x: np.ndarray):
    out, _ = conv_transpose2d_forward(x, params['weight'], params['bias'])
    return out, x


def _forward_affine(spec: LayerSpec, params: Params, x: np.ndarray):
    return affine_forward(x, params['weight'], params['bias']), x


def _forward_relu(spec: LayerSpec, params: Params, x: np.ndarray):
    return relu_forward(x), x > 0


def _forward_sigmoid(spec: LayerSpec, params: Params, x: np.ndarray):
    out = sigmoid_forward(x)
    return out, out


def _forward_flatten(spec: LayerSpec, params: Params, x: np.ndarray):
    return x.reshape(x.shape[0], -1), x.shape


def _forward_unflatten(spec: LayerSpec, params: Params, x: np.ndarray):
    expected = int(np.prod(spec.shape))
    if x.ndim != 2 or x.shape[1] != expected:
        raise DomainError(f"unflatten: вход {x.shape} не согласован с формой {spec.shape}")
    return x.reshape(x.shape[0], *spec.shape), x.shape


# Обратный проход: (spec, params, cache, grad) -> (градиент по входу, градиенты параметров)
def _backward_conv(spec: LayerSpec, params: Params, cache, grad: np.ndarray):
    cols, input_hw = cache
    return conv2d_backward(grad, cols, params['weight'], input_hw)


def _backward_conv_transpose(spec: LayerSpec, params: Params, cache, grad: np.ndarray):
    return conv_transpose2d_backward(grad, cache, params['weight'])


def _backward_affine(spec: LayerSpec, params: Params, cache, grad: np.ndarray):
    x = cache
    return grad @ params['weight'], {'weight': grad.T @ x, 'bias': grad.sum(axis=0)}


def _backward_relu(spec: LayerSpec, params: Params, cache, grad: np.ndarray):
    return grad * cache, {}


def _backward_sigmoid(spec: LayerSpec, params: Params, cache, grad: np.ndarray):
    return grad * cache * (1.0 - cache), {}


def _backward_reshape(spec: LayerSpec, params: Params, cache, grad: np.ndarray):
    return grad.reshape(cache), {}


_FORWARD: Dict[str, Callable] = {
    'conv': _forward_conv,
    'conv_transpose': _forward_conv_transpose,
    'affine': _forward_affine,
    'relu': _forward_relu,
    'sigmoid': _forward_sigmoid,
    'flatten': _forward_flatten,
    'unflatten': _forward_unflatten,
}

_BACKWARD: Dict[str, Callable] = {
    'conv': _backward_conv,
    'conv_transpose': _backward_conv_transpose,
    'affine': _backward_affine,
    'relu': _backward_relu,
    'sigmoid': _backward_sigmoid,
    'flatten': _backward_reshape,
    'unflatten': _backward_reshape,
}


@dataclass
class Tape:
    """Запись прямого прохода: кэши слоев и форма выхода"""
    caches: List[object] = field(default_factory=list)
    output_shape: Optional[Tuple[int, ...]] = None


def glorot_uniform(specs: Sequence[LayerSpec], seed: int) -> List[Params]:
    """
    Инициализация U(±√(6/(fan_in+fan_out))), нулевые смещения

    Веса округлены до float32: сериализация их не меняет.
    """
    params: List[Params] = []
    for index, spec in enumerate(specs):
        layer: Params = {}
        if spec.has_params:
            shapes = spec.param_shapes()
            fan_in, fan_out = spec.fans()
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            rng = stream((seed, index))
            weight = rng.uniform(-bound, bound, size=shapes['weight'])
            layer['weight'] = weight.astype(np.float32).astype(np.float64)
            layer['bias'] = np.zeros(shapes['bias'])
        params.append(layer)
    return params


class Network:
    """Последовательная сеть из LayerSpec с явной лентой для обратного прохода"""

    def __init__(self, specs: Sequence[LayerSpec], params: Optional[List[Params]] = None, seed: int = 0):
        self.specs = list(specs)
        self.params = params if params is not None else glorot_uniform(self.specs, seed)
        self._validate()

    def _validate(self) -> None:
        if len(self.params) != len(self.specs):
            raise DomainError(f"Число наборов параметров {len(self.params)} != числу слоев {len(self.specs)}")
        for index, (spec, layer) in enumerate(zip(self.specs, self.params)):
            expected = spec.param_shapes()
            actual = {name: tuple(value.shape) for name, value in layer.items()}
            if actual != expected:
                raise DomainError(f"Слой {index} ({spec.kind}): формы {actual}, ожидались {expected}")

    @property
    def parameter_count(self) -> int:
        return sum(int(value.size) for layer in self.params for value in layer.values())

    def forward(self, x: np.ndarray, tape: Optional[Tape] = None) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for spec, layer in zip(self.specs, self.params):
            out, cache = _FORWARD[spec.kind](spec, layer, out)
            if tape is not None:
                tape.caches.append(cache)
        if tape is not None:
            tape.output_shape = out.shape
        return out

    def backward(self, tape: Tape, grad_out: np.ndarray) -> Tuple[List[Params], np.ndarray]:
        """Градиенты параметров всех слоев и градиент по входу"""
        if len(tape.caches) != len(self.specs):
            raise DomainError(f"Лента содержит {len(tape.caches)} записей, слоев {len(self.specs)}")
        grad = np.asarray(grad_out, dtype=np.float64)
        if tape.output_shape is not None and grad.shape != tape.output_shape:
            raise DomainError(f"Форма градиента {grad.shape} не совпадает с выходом {tape.output_shape}")
        grads: List[Params] = [{} for _ in self.specs]
        for index in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[index]
            grad, layer_grads = _BACKWARD[spec.kind](spec, self.params[index], tape.caches[index], grad)
            grads[index] = layer_grads
        return grads, grad

    def copy(self) -> 'Network':
        return Network(self.specs, [{k: v.copy() for k, v in layer.items()} for layer in self.params])


def sgd_step(params: List[Params], grads: List[Params], lr: float) -> List[Params]:
    """p ← p − lr·g поэлементно; возвращает новые массивы"""
    if lr < 0:
        raise DomainError(f"Шаг обучения не может быть отрицательным: {lr}")
    if len(params) != len(grads):
        raise DomainError(f"Число слоев параметров {len(params)} и градиентов {len(grads)} различается")
    updated: List[Params] = []
    for index, (layer, layer_grads) in enumerate(zip(params, grads)):
        if set(layer) != set(layer_grads):
            raise DomainError(f"Слой {index}: наборы параметров и градиентов различаются")
        new_layer: Params = {}
        for name, value in layer.items():
            grad = layer_grads[name]
            if grad.shape != value.shape:
                raise DomainError(f"Слой {index}.{name}: форма градиента {grad.shape} != {value.shape}")
            new_layer[name] = value - lr * grad
        updated.append(new_layer)
    return updated


class GradientCheckReport(BaseModel):
    """Максимальная относительная ошибка градиента по каждому тензору"""
    tolerance: float
    step: float
    errors: Dict[str, float]
    failures: List[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # max|a − n| / max(max|a|, max|n|) по всему тензору
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max()) / scale


def check_gradients(
    network: Network,
    x: np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    seed: int = 0,
    max_entries: Optional[int] = None,
) -> GradientCheckReport:
    """
    Сравнение аналитических градиентов с центральными разностями

    Скалярная функция потерь - Σ r ⊙ f(x) со случайными весами r. Для больших
    тензоров можно проверять случайное подмножество из max_entries элементов.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    out = network.forward(x, tape)
    projection = stream((seed, 99)).standard_normal(out.shape)
    grads, grad_input = network.backward(tape, projection)

    def loss(inputs: np.ndarray) -> float:
        return float((network.forward(inputs) * projection).sum())

    def numeric_for(array: np.ndarray, positions: np.ndarray, evaluate: Callable[[], float]) -> np.ndarray:
        flat = array.reshape(-1)
        values = np.empty(len(positions))
        for k, pos in enumerate(positions):
            original = flat[pos]
            flat[pos] = original + step
            plus = evaluate()
            flat[pos] = original - step
            minus = evaluate()
            flat[pos] = original
            values[k] = (plus - minus) / (2.0 * step)
        return values

    def positions_for(size: int, salt: int) -> np.ndarray:
        if max_entries is None or size <= max_entries:
            return np.arange(size)
        return np.sort(stream((seed, 100, salt)).choice(size, size=max_entries, replace=False))

    errors: Dict[str, float] = {}
    for index, (spec, layer) in enumerate(zip(network.specs, network.params)):
        for name, value in layer.items():
            positions = positions_for(value.size, index * 2 + (name == 'bias'))
            numeric = numeric_for(value, positions, lambda: loss(x))
            analytic = grads[index][name].reshape(-1)[positions]
            errors[f"{index}:{spec.kind}.{name}"] = _relative_error(analytic, numeric)

    shifted = x.copy()
    positions = positions_for(shifted.size, 2 * len(network.specs))
    numeric = numeric_for(shifted, positions, lambda: loss(shifted))
    errors['input'] = _relative_error(grad_input.reshape(-1)[positions], numeric)

    failures = [name for name, error in errors.items() if not error < tolerance]
    if failures:
        logger.warning(f"❌ Проверка градиентов не пройдена: {failures}")
    else:
        logger.debug(f"Проверка градиентов пройдена, макс. ошибка {max(errors.values()):.2e}")
    return GradientCheckReport(tolerance=tolerance, step=step, errors=errors, failures=failures)
