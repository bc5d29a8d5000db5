import math

import numpy as np
import pytest

from coverage_manifold.core import simcore
from coverage_manifold.core.geodata import BsImage, RoiSpec
from coverage_manifold.core.simcore import ChannelParams, FadingModel, Manifold, McConfig
from coverage_manifold.errors import ConfigurationError, DomainError


def _binomial_bound(p: float, n: int, sigmas: float = 3.0) -> float:
    return sigmas * math.sqrt(p * (1 - p) / n)


class TestFading:
    def test_rayleigh_mean(self):
        draws = simcore.sample_fading(FadingModel(), 1_000_000, (1, 2))
        assert abs(draws.mean() - 1.0) < 0.004

    def test_nakagami_mean(self):
        draws = simcore.sample_fading(FadingModel(kind="nakagami", m=3), 1_000_000, (1, 3))
        assert abs(draws.mean() - 3.0) < 0.006

    @pytest.mark.parametrize("m", [1, 2, 3, 5])
    def test_nakagami_shapes_parse(self, m):
        model = FadingModel.parse(f"nakagami:{m}")
        assert model.m == m
        assert model.label == f"nakagami:{m}"

    def test_same_key_same_draws(self):
        a = simcore.sample_fading(FadingModel(), 1000, (42, 7))
        b = simcore.sample_fading(FadingModel(), 1000, (42, 7))
        np.testing.assert_array_equal(a, b)
        c = simcore.sample_fading(FadingModel(), 1000, (42, 8))
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("text", ["gauss", "nakagami:0", "nakagami:x", ""])
    def test_invalid_spec(self, text):
        with pytest.raises(ConfigurationError):
            FadingModel.parse(text)

    def test_count_must_be_positive(self):
        with pytest.raises(DomainError):
            simcore.sample_fading(FadingModel(), 0, (1,))


class TestChannelParams:
    def test_db_conversion(self):
        assert ChannelParams.from_db(alpha=4.0, gamma_db=0.0).gamma_th == 1.0
        assert ChannelParams.from_db(alpha=4.0, gamma_db=10.0).gamma_th == pytest.approx(10.0)

    @pytest.mark.parametrize("kwargs", [{'alpha': 2.0}, {'noise_ratio': -1.0}, {'gamma_th': 0.0}])
    def test_invariants(self, kwargs):
        with pytest.raises(ValueError):
            ChannelParams(**kwargs)


class TestSinr:
    def test_single_bs_with_noise(self):
        params = ChannelParams(alpha=4.0, noise_ratio=0.5, gamma_th=1.0)
        value = simcore.sinr((0.0, 0.0), np.array([[2.0, 0.0]]), [1.5], params)
        assert value == pytest.approx(1.5 * 2.0 ** -4 / 0.5)

    def test_equidistant_tie_serves_lowest_index(self, channel):
        value = simcore.sinr((0.0, 0.0), np.array([[1.0, 0.0], [-1.0, 0.0]]), [2.0, 0.5], channel)
        assert value == pytest.approx(4.0)

    def test_single_bs_without_noise_is_infinite(self, channel):
        assert simcore.sinr((0.0, 0.0), np.array([[1.0, 1.0]]), [1.0], channel) == math.inf

    def test_bs_at_user_position_is_clamped(self, channel):
        points = np.array([[0.0, 0.0], [0.0, 0.0]])
        value = simcore.sinr((0.0, 0.0), points, [1.0, 1.0], channel)
        assert value == pytest.approx(1.0)

    def test_rate_with_coincident_bs_is_finite(self, channel, rayleigh):
        value = simcore.rate_at((0.0, 0.0), np.array([[0.0, 0.0], [0.0, 0.0]]), channel, rayleigh, McConfig(n_draws=500))
        assert math.isfinite(value) and value >= 0.0

    @pytest.mark.parametrize("d_min", [0.0, -1.0])
    def test_clamp_must_be_positive(self, channel, d_min):
        with pytest.raises(DomainError):
            simcore.sinr((0.0, 0.0), np.array([[1.0, 0.0]]), [1.0], channel, d_min=d_min)

    def test_default_clamp_is_half_pixel_of_default_roi(self):
        assert simcore.DEFAULT_D_MIN == pytest.approx(10.0 / 128)

    def test_empty_bs_set(self, channel):
        with pytest.raises(DomainError):
            simcore.sinr((0.0, 0.0), np.empty((0, 2)), [], channel)

    def test_scale_invariance_without_noise(self, channel):
        points = np.array([[1.0, 0.5], [-2.0, 1.0], [0.3, -3.0]])
        gains = [0.7, 1.9, 0.4]
        base = simcore.sinr((0.1, 0.2), points, gains, channel)
        scaled = simcore.sinr((0.1 * 3.5, 0.2 * 3.5), points * 3.5, gains, channel)
        assert scaled == pytest.approx(base, rel=1e-12)


class TestCoverageAndRate:
    N = 100_000

    def test_equidistant_two_bs(self, channel, rayleigh):
        mc = McConfig(n_draws=self.N, seed=1)
        value = simcore.coverage_at((0.0, 0.0), np.array([[1.0, 0.0], [-1.0, 0.0]]), channel, rayleigh, mc)
        assert abs(value - 0.5) <= _binomial_bound(0.5, self.N)

    def test_half_distance_ratio(self, channel, rayleigh):
        mc = McConfig(n_draws=self.N, seed=2)
        value = simcore.coverage_at((0.0, 0.0), np.array([[1.0, 0.0], [-2.0, 0.0]]), channel, rayleigh, mc)
        expected = 16.0 / 17.0
        assert abs(value - expected) <= _binomial_bound(expected, self.N)

    @pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
    def test_single_bs_noise(self, rayleigh, gamma):
        q, d = 0.1, 1.0
        params = ChannelParams(alpha=4.0, noise_ratio=q, gamma_th=gamma)
        mc = McConfig(n_draws=self.N, seed=3)
        value = simcore.coverage_at((0.0, 0.0), np.array([[d, 0.0]]), params, rayleigh, mc)
        expected = math.exp(-gamma * q * d ** 4)
        assert abs(value - expected) <= _binomial_bound(expected, self.N)

    def test_equidistant_rate(self, channel, rayleigh):
        mc = McConfig(n_draws=self.N, seed=4)
        value = simcore.rate_at((0.0, 0.0), np.array([[1.0, 0.0], [-1.0, 0.0]]), channel, rayleigh, mc)
        assert abs(value - math.log2(math.e)) < 0.02

    def test_rate_of_fixed_samples(self):
        assert simcore.rate_from_samples(np.zeros(10)) == 0.0
        assert simcore.rate_from_samples(np.ones(10)) == 1.0
        assert simcore.rate_from_samples(np.array([math.inf])) == pytest.approx(math.log2(1 + simcore.SINR_CAP))

    def test_coverage_monotone_in_threshold(self, rayleigh):
        params = ChannelParams(alpha=3.5)
        samples = simcore.sinr_samples(
            (0.2, 0.1), np.array([[1.0, 0.0], [-1.5, 0.3], [0.4, 2.0]]), params, rayleigh, McConfig(n_draws=5000)
        )
        values = [simcore.coverage_from_samples(samples, g) for g in np.logspace(-3, 3, 25)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[0] > 0.99
        assert values[-1] < 0.05

    def test_coverage_spread_matches_binomial(self, channel, rayleigh):
        points = np.array([[1.0, 0.0], [-1.0, 0.0]])
        n = 400
        estimates = [
            simcore.coverage_at((0.0, 0.0), points, channel, rayleigh, McConfig(n_draws=n, seed=seed))
            for seed in range(200)
        ]
        spread = float(np.std(estimates))
        assert 0.5 * math.sqrt(0.25 / n) < spread < 1.5 * math.sqrt(0.25 / n)


class TestSimulateManifolds:
    def test_roe_indexing(self):
        users = simcore.roe_user_indices()
        assert tuple(users[0]) == (16, 16)
        assert tuple(users[-1]) == (47, 47)
        assert len(users) == 1024

    def test_single_pixel_matches_closed_form(self, spec10, rayleigh):
        image = BsImage.from_indices([(32, 32)])
        params = ChannelParams(alpha=4.0, noise_ratio=1e-3, gamma_th=1.0)
        mc = McConfig(n_draws=2000, seed=11)
        coverage, rate = simcore.simulate_manifolds(image, spec10, params, rayleigh, mc)
        assert coverage.shape == (32, 32)
        assert coverage.kind == "coverage" and rate.kind == "rate_raw"

        users = simcore.roe_user_indices().astype(float)
        bs = (np.array([32, 32]) + 0.5) * spec10.pixel_km
        d = np.hypot(*((users + 0.5) * spec10.pixel_km - bs).T)
        d = np.maximum(d, spec10.side_km / 128)
        expected = np.exp(-params.gamma_th * params.noise_ratio * d ** 4).reshape(32, 32)
        bound = 5 * np.sqrt(expected * (1 - expected) / mc.n_draws) + 5.0 / mc.n_draws
        assert (np.abs(coverage.values - expected) <= bound).all()

    def test_symmetric_layout(self, spec10, channel, rayleigh):
        image = BsImage.from_indices([(16, 16), (16, 47), (47, 16), (47, 47)])
        coverage, rate = simcore.simulate_manifolds(image, spec10, channel, rayleigh, McConfig(n_draws=2000, seed=5))
        for values in (coverage.values, rate.values / rate.values.max()):
            assert np.abs(values - np.flip(values, axis=0)).mean() < 0.03
            assert np.abs(values - np.flip(values, axis=1)).mean() < 0.03

    def test_deterministic_and_schedule_independent(self, spec10, channel, rayleigh, small_mc, scattered_image):
        serial = simcore.simulate_manifolds(scattered_image, spec10, channel, rayleigh, small_mc, workers=1)
        again = simcore.simulate_manifolds(scattered_image, spec10, channel, rayleigh, small_mc, workers=1)
        parallel = simcore.simulate_manifolds(scattered_image, spec10, channel, rayleigh, small_mc, workers=4)
        for a, b, c in zip(serial, again, parallel):
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.values, c.values)

    def test_rois_use_independent_streams(self, channel, rayleigh, small_mc, scattered_image):
        first = RoiSpec.at(0.0, 0.0, 10.0, row=0, col=1)
        second = RoiSpec.at(0.0, 0.0, 10.0, row=0, col=2)
        a, _ = simcore.simulate_manifolds(scattered_image, first, channel, rayleigh, small_mc)
        b, _ = simcore.simulate_manifolds(scattered_image, second, channel, rayleigh, small_mc)
        again, _ = simcore.simulate_manifolds(scattered_image, first, channel, rayleigh, small_mc)
        assert not np.array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.values, again.values)

    def test_sweep_shares_draws(self, spec10, channel, rayleigh, small_mc, scattered_image):
        gammas = [simcore.db_to_linear(g) for g in (-5.0, 0.0, 5.0)]
        sweep, rate = simcore.simulate_sweep(scattered_image, spec10, channel, rayleigh, small_mc, gammas)
        low, mid, high = (sweep[g].values for g in gammas)
        assert (low >= mid).all() and (mid >= high).all()
        single, single_rate = simcore.simulate_manifolds(scattered_image, spec10, channel, rayleigh, small_mc)
        np.testing.assert_array_equal(single.values, mid)
        np.testing.assert_array_equal(single_rate.values, rate.values)

    def test_empty_image(self, spec10, channel, rayleigh, small_mc):
        with pytest.raises(DomainError):
            simcore.simulate_manifolds(BsImage.empty(), spec10, channel, rayleigh, small_mc)

    def test_manifest_records_reproduction_parameters(self, spec10, channel, rayleigh, small_mc):
        manifest = simcore.simulation_manifest(channel, rayleigh, small_mc, [0.0], spec10)
        assert manifest['seed'] == 7 and manifest['n_draws'] == 200
        assert manifest['fading'] == "rayleigh"
        assert manifest['gammas_linear'] == [1.0]
        assert manifest['d_min_km'] == pytest.approx(10.0 / 128)


class TestManifold:
    def test_coverage_range(self):
        with pytest.raises(DomainError):
            Manifold(np.full((32, 32), 1.5), kind="coverage")

    def test_rate_raw_may_exceed_one(self):
        assert Manifold(np.full((32, 32), 3.0), kind="rate_raw").mean() == 3.0

    def test_non_finite(self):
        values = np.zeros((32, 32))
        values[0, 0] = np.nan
        with pytest.raises(DomainError):
            Manifold(values)

    def test_values_are_read_only(self):
        manifold = Manifold(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            manifold.values[0, 0] = 1.0


@pytest.mark.slow
@pytest.mark.parametrize("gamma_db", [-5.0, 0.0, 5.0])
def test_ppp_ensemble_matches_stochastic_geometry(gamma_db, rayleigh):
    from coverage_manifold.core import sgmodels, synthgen
    from coverage_manifold.core.geodata import pixel_centers

    params = ChannelParams.from_db(alpha=4.0, gamma_db=gamma_db)
    rois = synthgen.gen_ppp_dataset(500, 1.0, 10.0, seed=77)
    user = ((32 + 0.5) * 10.0 / 64, (32 + 0.5) * 10.0 / 64)
    values = [
        simcore.coverage_at(
            user,
            pixel_centers(roi.image.occupied_indices(), roi.spec.side_km),
            params,
            rayleigh,
            McConfig(n_draws=1000, seed=k),
            d_min=roi.spec.side_km / 128,
        )
        for k, roi in enumerate(rois)
    ]
    assert float(np.mean(values)) == pytest.approx(sgmodels.ppp_coverage(1.0, 4.0, params.gamma_th), abs=0.03)
