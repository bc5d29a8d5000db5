"""
Базовые модели стохастической геометрии: средние покрытие и скорость для PPP,
оценка плотности БС и модель с наилучшей константой
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from ..errors import DomainError, NumericalError
from .geodata import ROE_N, BsImage, RoiSpec
from .simcore import SINR_CAP, ChannelParams, Manifold, ManifoldKind

logger = logging.getLogger(__name__)

QUAD_ABS_TOL = 1e-8
PPP_FADING = "rayleigh"


def estimate_density(bs_count: int, area_km2: float) -> float:
    """Оценка плотности λ̂ = число БС / площадь (БС/км²)"""
    if area_km2 <= 0:
        raise DomainError(f"Площадь должна быть положительной, получено {area_km2}")
    if bs_count < 1:
        raise DomainError(f"Нужна хотя бы одна БС, получено {bs_count}")
    return bs_count / area_km2


def _integrate(func: Callable[[float], float], lower: float, upper: float, label: str, tol: float) -> float:
    """Адаптивная квадратура Гаусса–Кронрода (QUADPACK) с диагностикой сбоев"""
    result = integrate.quad(func, lower, upper, epsabs=tol, epsrel=1e-10, limit=200, full_output=1)
    if len(result) == 4:
        value, abserr, info, message = result
        raise NumericalError(
            f"Квадратура '{label}' не сошлась: {message}",
            diagnostics={
                'label': label,
                'lower': lower,
                'upper': upper,
                'value': value,
                'abserr': abserr,
                'neval': info.get('neval'),
                'last': info.get('last'),
            },
        )
    value, abserr, _ = result
    return float(value)


def _rho(gamma_th: float, alpha: float, tol: float) -> float:
    """ρ(γ, α) = γ^{2/α} ∫_{γ^{-2/α}}^∞ du / (1 + u^{α/2})"""
    if gamma_th <= 0:
        return 0.0
    half_alpha = alpha / 2.0
    lower = gamma_th ** (-2.0 / alpha)

    def integrand(u: float) -> float:
        return 1.0 / (1.0 + u ** half_alpha)

    return gamma_th ** (2.0 / alpha) * _integrate(integrand, lower, np.inf, "rho", tol)


def _check_ppp_args(lam: float, alpha: float) -> None:
    if lam <= 0:
        raise DomainError(f"Плотность должна быть положительной, получено {lam}")
    if alpha <= 2:
        raise DomainError(f"Показатель затухания должен быть > 2, получено {alpha}")


def _ppp_coverage(lam: float, alpha: float, gamma_th: float, noise_ratio: float, tol: float) -> float:
    if gamma_th <= 0:
        return 1.0
    rho = _rho(gamma_th, alpha, tol)
    half_alpha = alpha / 2.0
    # Замена s = πλv убирает λ из экспоненты интерференции
    scale = math.pi * lam

    if noise_ratio == 0:
        def integrand(s: float) -> float:
            return math.exp(-s * (1.0 + rho))
    else:
        def integrand(s: float) -> float:
            return math.exp(-s * (1.0 + rho) - gamma_th * noise_ratio * (s / scale) ** half_alpha)

    value = _integrate(integrand, 0.0, np.inf, "coverage", tol)
    return min(max(value, 0.0), 1.0)


def ppp_coverage(lam: float, alpha: float, gamma_th: float, noise_ratio: float = 0.0, tol: float = QUAD_ABS_TOL) -> float:
    """
    Средняя вероятность покрытия типичного пользователя в PPP-сети
    с Rayleigh-замираниями и подключением к ближайшей БС

    Без шума сводится к 1 / (1 + ρ(γ, α)) и не зависит от λ.
    """
    _check_ppp_args(lam, alpha)
    if gamma_th <= 0:
        raise DomainError(f"Порог SINR должен быть положительным, получено {gamma_th}")
    if noise_ratio < 0:
        raise DomainError(f"noise_ratio не может быть отрицательным, получено {noise_ratio}")
    return _ppp_coverage(lam, alpha, gamma_th, noise_ratio, tol)


def ppp_rate(lam: float, alpha: float, noise_ratio: float = 0.0, tol: float = QUAD_ABS_TOL) -> float:
    """
    Средняя эргодическая скорость в PPP-сети (бит/с/Гц):
    ∫₀^∞ P(SINR > 2^t − 1) dt
    """
    _check_ppp_args(lam, alpha)
    if noise_ratio < 0:
        raise DomainError(f"noise_ratio не может быть отрицательным, получено {noise_ratio}")

    def integrand(t: float) -> float:
        return _ppp_coverage(lam, alpha, math.expm1(t * math.log(2.0)), noise_ratio, tol)

    return _integrate(integrand, 0.0, np.inf, "rate", max(tol * 100, 1e-7))


def _ppp_conditional_draws(
    lam: float,
    alpha: float,
    noise_ratio: float,
    n_networks: int,
    seed: int,
    radius_km: Optional[float],
) -> np.ndarray:
    """
    Реализации PPP в круге вокруг типичного пользователя в начале координат

    Для каждой реализации возвращает a = (I + σ²/P)·r₀^α, где r₀ - расстояние
    до ближайшей БС, I - интерференция с Rayleigh-замираниями. Замирание
    обслуживающей БС интегрируется аналитически.
    """
    if n_networks < 1:
        raise DomainError("Нужна хотя бы одна реализация сети")
    rng = np.random.default_rng(seed)
    radius = radius_km or math.sqrt(1000.0 / (math.pi * lam))
    mean_count = lam * math.pi * radius * radius

    ratios = np.full(n_networks, np.inf)
    for k in range(n_networks):
        count = rng.poisson(mean_count)
        if count == 0:
            continue
        distances = radius * np.sqrt(rng.random(count))
        gains = rng.standard_exponential(count)
        serving = int(np.argmin(distances))
        path = distances ** (-alpha)
        interference = float((gains * path).sum() - gains[serving] * path[serving])
        ratios[k] = (max(interference, 0.0) + noise_ratio) / path[serving]
    return ratios


def ppp_coverage_monte_carlo(
    lam: float,
    alpha: float,
    gamma_th: float,
    noise_ratio: float = 0.0,
    n_networks: int = 10_000,
    seed: int = 0,
    radius_km: Optional[float] = None,
) -> float:
    """Независимая Монте-Карло оценка покрытия PPP-сети (проверочный оракул)"""
    _check_ppp_args(lam, alpha)
    ratios = _ppp_conditional_draws(lam, alpha, noise_ratio, n_networks, seed, radius_km)
    # P(h₀ > γ·a) = exp(−γ·a) для h₀ ~ Exp(1); пустая сеть -> покрытия нет
    return float(np.exp(-gamma_th * ratios).mean())


def ppp_rate_monte_carlo(
    lam: float,
    alpha: float,
    noise_ratio: float = 0.0,
    n_networks: int = 10_000,
    seed: int = 0,
    radius_km: Optional[float] = None,
) -> float:
    """Независимая Монте-Карло оценка скорости PPP-сети (проверочный оракул)"""
    _check_ppp_args(lam, alpha)
    ratios = _ppp_conditional_draws(lam, alpha, noise_ratio, n_networks, seed, radius_km)
    rates = np.zeros_like(ratios)
    finite = np.isfinite(ratios)
    a = ratios[finite]
    with np.errstate(over="ignore", invalid="ignore"):
        # E[ln(1 + h/a)] = e^a·E1(a); при больших a используется асимптотика 1/a
        conditional = np.where(a < 700.0, np.exp(np.minimum(a, 700.0)) * special.exp1(np.maximum(a, 1e-300)), 1.0 / a)
    conditional = np.where(a > 0, conditional, math.log(1.0 + SINR_CAP))
    rates[finite] = conditional / math.log(2.0)
    return float(rates.mean())


def best_fit_value(ground_truth: Manifold) -> float:
    """Эмпирическое пространственное среднее многообразия"""
    values = ground_truth.values.ravel()
    return math.fsum(values) / values.size


def constant_manifold(value: float, kind: ManifoldKind = "coverage", size: int = ROE_N) -> Manifold:
    """Многообразие, во всех точках равное value"""
    if not math.isfinite(value):
        raise DomainError(f"Значение должно быть конечным, получено {value}")
    if kind in ("coverage", "rate_scaled") and not 0.0 <= value <= 1.0:
        raise DomainError(f"Значение {value} вне [0, 1] для многообразия '{kind}'")
    if kind == "rate_raw" and value < 0:
        raise DomainError(f"Скорость не может быть отрицательной: {value}")
    return Manifold(np.full((size, size), float(value)), kind=kind)


@lru_cache(maxsize=4096)
def _cached_baseline(kind: str, lam: float, alpha: float, gamma_th: float, noise_ratio: float) -> float:
    if kind == "coverage":
        return ppp_coverage(lam, alpha, gamma_th, noise_ratio)
    return ppp_rate(lam, alpha, noise_ratio)


def ppp_baseline_value(image: BsImage, spec: RoiSpec, params: ChannelParams, kind: ManifoldKind = "coverage") -> float:
    """Среднее значение PPP-модели для RoI при λ̂ = занятые пиксели / площадь"""
    lam = estimate_density(image.occupied_count, spec.area_km2)
    # Без шума результат не зависит от λ
    lam_key = lam if params.noise_ratio > 0 else 1.0
    metric = "coverage" if kind == "coverage" else "rate"
    return _cached_baseline(metric, lam_key, params.alpha, params.gamma_th, params.noise_ratio)


def ppp_baseline_manifold(image: BsImage, spec: RoiSpec, params: ChannelParams, kind: ManifoldKind = "coverage") -> Manifold:
    """Постоянное многообразие PPP-модели для RoI (замирания Rayleigh)"""
    value = ppp_baseline_value(image, spec, params, kind)
    return constant_manifold(value, kind="coverage" if kind == "coverage" else "rate_raw")
