"""
Общие фикстуры тестов
"""

import numpy as np
import pytest

from coverage_manifold.core.geodata import GRID_N, BsImage, Roi, RoiSpec, pixel_centers
from coverage_manifold.core.simcore import ChannelParams, FadingModel, Manifold, McConfig
from coverage_manifold.models.cnnae import ArchConfig, Sample


@pytest.fixture
def spec10() -> RoiSpec:
    """RoI 10×10 км на экваторе"""
    return RoiSpec.at(0.0, 0.0, 10.0)


@pytest.fixture
def channel() -> ChannelParams:
    return ChannelParams(alpha=4.0, noise_ratio=0.0, gamma_th=1.0)


@pytest.fixture
def rayleigh() -> FadingModel:
    return FadingModel()


@pytest.fixture
def small_mc() -> McConfig:
    return McConfig(n_draws=200, seed=7)


@pytest.fixture
def scattered_image() -> BsImage:
    """30 занятых пикселей, разбросанных по всей сетке 64×64"""
    rng = np.random.default_rng(2024)
    flat = rng.choice(GRID_N * GRID_N, size=30, replace=False)
    return BsImage.from_indices((int(k // GRID_N), int(k % GRID_N)) for k in flat)


@pytest.fixture
def scattered_roi(spec10, scattered_image) -> Roi:
    points = pixel_centers(scattered_image.occupied_indices(), spec10.side_km)
    return Roi(spec=spec10, bs_local=points, image=scattered_image, raw_count=len(points))


@pytest.fixture
def toy_arch() -> ArchConfig:
    """Уменьшенный автоэнкодер 16×16 -> 8×8"""
    return ArchConfig(grid_n=16, ff_hidden=8, latent_dim=4)


def make_toy_samples(count: int, seed: int = 0, grid_n: int = 16, kind: str = "coverage"):
    """Случайные бинарные изображения и гладкие цели на сетке RoE grid_n/2"""
    rng = np.random.default_rng(seed)
    roe = grid_n // 2
    samples = []
    for k in range(count):
        pixels = (rng.random((grid_n, grid_n)) < 0.2).astype(np.uint8)
        base = rng.uniform(0.2, 0.8)
        values = np.clip(base + 0.1 * rng.standard_normal((roe, roe)), 0.0, 1.0)
        if kind == "rate_raw":
            values = values * 4.0
        samples.append(Sample(BsImage(pixels), Manifold(values, kind=kind), f"toy{k:03d}"))
    return samples


@pytest.fixture
def toy_samples():
    return make_toy_samples(6)


@pytest.fixture
def toy_sample_factory():
    return make_toy_samples
