import numpy as np
import pytest
from scipy import stats

from coverage_manifold.core import synthgen
from coverage_manifold.core.geodata import MAX_OCCUPIED, MIN_OCCUPIED
from coverage_manifold.core.simcore import stream
from coverage_manifold.errors import ConfigurationError, DomainError


class TestPpp:
    def test_count_is_poisson(self):
        rng = stream((123, 1))
        counts = np.array([len(synthgen.sample_ppp_points(1.0, 10.0, rng)) for _ in range(10_000)])
        assert abs(counts.mean() - 100.0) < 3 * np.sqrt(100.0 / len(counts))
        assert abs(counts.var() - 100.0) < 5.0

    def test_points_inside_square(self):
        points = synthgen.sample_ppp_points(2.0, 5.0, stream((1, 2)))
        assert points.shape[1] == 2
        assert (points >= 0).all() and (points < 5.0).all()

    def test_roi_passes_filter(self):
        roi = synthgen.gen_ppp_roi(1.0, 10.0, seed=4)
        assert MIN_OCCUPIED <= roi.image.occupied_count <= MAX_OCCUPIED
        assert roi.synthetic is True
        assert roi.meta['generator'] == "ppp"
        assert roi.meta['resamples'] >= 0

    def test_same_seed_same_roi(self):
        a = synthgen.gen_ppp_roi(1.0, 10.0, seed=8, index=3)
        b = synthgen.gen_ppp_roi(1.0, 10.0, seed=8, index=3)
        np.testing.assert_array_equal(a.bs_local, b.bs_local)
        assert a.roi_id == b.roi_id == "r0000c0003"

    def test_sparse_density_resamples_until_filter_passes(self):
        roi = synthgen.gen_ppp_roi(0.2, 10.0, seed=1)
        assert roi.image.occupied_count >= MIN_OCCUPIED
        assert roi.raw_count >= roi.image.occupied_count

    def test_unsatisfiable_density(self):
        with pytest.raises(ConfigurationError):
            synthgen.gen_ppp_roi(0.02, 10.0, seed=0)
        with pytest.raises(ConfigurationError):
            synthgen.gen_ppp_roi(20.0, 10.0, seed=0)

    def test_density_below_one_point(self):
        with pytest.raises(DomainError):
            synthgen.gen_ppp_roi(0.001, 10.0, seed=0)

    def test_dataset_has_distinct_rois(self):
        rois = synthgen.gen_ppp_dataset(5, 1.0, 10.0, seed=2)
        assert len({r.roi_id for r in rois}) == 5
        assert len({r.image.digest() for r in rois}) == 5


class TestCluster:
    def test_zero_spread_collapses_onto_parents(self):
        roi = synthgen.gen_cluster_roi(30, 4.0, 0.0, 10.0, seed=6)
        assert len(np.unique(roi.bs_local, axis=0)) <= 30
        assert roi.raw_count > roi.image.occupied_count

    def test_wide_spread_approaches_uniform(self):
        rng = stream((9, 1))
        cluster = np.concatenate([synthgen.sample_cluster_points(20, 10.0, 1000.0, 10.0, rng) for _ in range(25)])
        uniform = np.concatenate([synthgen.sample_ppp_points(2.0, 10.0, rng) for _ in range(25)])
        for axis in (0, 1):
            assert stats.ks_2samp(cluster[:, axis], uniform[:, axis]).pvalue > 1e-3
            assert stats.kstest(cluster[:, axis], "uniform", args=(0.0, 10.0)).pvalue > 1e-3

    def test_tight_spread_is_not_uniform(self):
        rng = stream((9, 2))
        cluster = np.concatenate([synthgen.sample_cluster_points(5, 20.0, 0.1, 10.0, rng) for _ in range(5)])
        assert stats.kstest(cluster[:, 0], "uniform", args=(0.0, 10.0)).pvalue < 1e-3

    def test_daughters_stay_inside(self):
        points = synthgen.sample_cluster_points(10, 10.0, 3.0, 10.0, stream((3, 3)))
        assert (points >= 0).all() and (points < 10.0).all()

    def test_deterministic(self):
        a = synthgen.gen_cluster_roi(10, 10.0, 0.5, 10.0, seed=12)
        b = synthgen.gen_cluster_roi(10, 10.0, 0.5, 10.0, seed=12)
        np.testing.assert_array_equal(a.bs_local, b.bs_local)
        assert a.meta == b.meta

    def test_invalid_parameters(self):
        with pytest.raises(DomainError):
            synthgen.gen_cluster_roi(0, 10.0, 0.5, 10.0, seed=0)
        with pytest.raises(ConfigurationError):
            synthgen.gen_cluster_roi(1, 2.0, 0.5, 10.0, seed=0)
