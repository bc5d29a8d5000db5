import numpy as np
import pytest

from coverage_manifold.core import planner
from coverage_manifold.core.geodata import BsImage
from coverage_manifold.core.planner import MemoizedPredictor, PlanConfig
from coverage_manifold.core.simcore import ChannelParams, Manifold, McConfig
from coverage_manifold.errors import DomainError


def _roe_offsets(image: BsImage):
    n = image.grid_n
    return np.arange(n // 4, n // 4 + n // 2)


def constant_predictor(value: float):
    def predict(image: BsImage) -> Manifold:
        roe = image.grid_n // 2
        return Manifold(np.full((roe, roe), value))
    return predict


def chebyshev_predictor(radius: int):
    """Покрытие 1 в пределах радиуса Чебышева от любой БС, иначе 0"""
    def predict(image: BsImage) -> Manifold:
        span = _roe_offsets(image)
        bs = image.occupied_indices()
        if len(bs) == 0:
            return Manifold(np.zeros((len(span), len(span))))
        di = np.abs(span[:, None] - bs[:, 0][None, :])
        dj = np.abs(span[:, None] - bs[:, 1][None, :])
        cheb = np.maximum(di[:, None, :], dj[None, :, :]).min(axis=2)
        return Manifold((cheb <= radius).astype(np.float64))
    return predict


def ratio_predictor(image: BsImage) -> Manifold:
    """Покрытие двухстанционной формулы 1/(1 + (r1/r2)^4) по двум ближайшим БС"""
    span = _roe_offsets(image).astype(np.float64)
    bs = image.occupied_indices().astype(np.float64)
    if len(bs) < 2:
        return Manifold(np.ones((len(span), len(span))))
    d = np.hypot(span[:, None, None] - bs[:, 0], span[None, :, None] - bs[:, 1])
    d = np.sort(np.maximum(d, 0.5), axis=2)
    return Manifold(1.0 / (1.0 + (d[..., 0] / d[..., 1]) ** 4))


def _old_image(grid_n: int = 16, count: int = 6, seed: int = 0) -> BsImage:
    rng = np.random.default_rng(seed)
    flat = rng.choice(grid_n * grid_n, size=count, replace=False)
    return BsImage.from_indices([(int(k // grid_n), int(k % grid_n)) for k in flat], grid_n=grid_n)


def _brute_force(old: BsImage, predictor, cov_th: float):
    """Перебор всех допустимых одиночных размещений в построчном порядке"""
    candidates = [tuple(int(v) for v in loc) for loc in np.argwhere(old.pixels == 0)]
    fracs = [planner.frac_satisfied(predictor(old.with_pixels([loc])), cov_th) for loc in candidates]
    best = int(np.argmax(fracs))
    return fracs[best], candidates[best]


class TestFracSatisfied:
    def test_all_above(self):
        assert planner.frac_satisfied(Manifold(np.ones((32, 32))), 0.9) == 1.0

    def test_half_above(self):
        values = np.full((32, 32), 0.5)
        values[:16] = 0.95
        assert planner.frac_satisfied(Manifold(values), 0.9) == 0.5

    def test_equal_is_not_satisfied(self):
        assert planner.frac_satisfied(Manifold(np.full((32, 32), 0.9)), 0.9) == 0.0

    def test_threshold_grid(self):
        thresholds = np.full((32, 32), 0.5)
        thresholds[0] = 0.99
        assert planner.frac_satisfied(Manifold(np.full((32, 32), 0.6)), thresholds) == 31 / 32

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            planner.frac_satisfied(Manifold(np.ones((32, 32))), np.ones((8, 8)))


class TestPlanConfig:
    def test_max_bs_zero(self):
        with pytest.raises(ValueError):
            PlanConfig(max_bs=0)

    @pytest.mark.parametrize("kwargs", [{'frac_th': 1.5}, {'cov_th': 1.2}])
    def test_ranges(self, kwargs):
        with pytest.raises(ValueError):
            PlanConfig(**kwargs)

    def test_scalar_broadcast(self):
        grid = PlanConfig(cov_th=0.9).threshold_grid()
        assert grid.shape == (32, 32) and (grid == 0.9).all()

    def test_grid_round_trips_through_echo(self):
        thresholds = planner.zoned_thresholds(planner.rectangle_zone(32, (0, 16), (0, 32)))
        config = PlanConfig.with_grid(thresholds, max_bs=2, frac_th=0.95)
        echoed = PlanConfig.with_grid(np.array(config.echo()['cov_th']), max_bs=2, frac_th=0.95)
        assert echoed == config
        np.testing.assert_array_equal(config.threshold_grid(), thresholds)


class TestZones:
    def test_two_level_map(self):
        zone = planner.rectangle_zone(32, (8, 24), (8, 24))
        thresholds = planner.zoned_thresholds(zone)
        assert thresholds[16, 16] == 0.9
        assert thresholds[0, 0] == 0.8
        assert (thresholds == 0.9).sum() == 16 * 16


class TestCyclicOpt:
    def test_constant_one_takes_first_pixel(self):
        old = BsImage.from_indices([(0, 0)], grid_n=16)
        frac, locations = planner.cyclic_opt(old, [(5, 5)], constant_predictor(1.0), 0.9)
        assert frac == 1.0
        assert locations == [(0, 1)]

    def test_constant_zero_keeps_initial(self):
        old = BsImage.from_indices([(0, 0)], grid_n=16)
        frac, locations = planner.cyclic_opt(old, [(5, 5)], constant_predictor(0.0), 0.9)
        assert frac == 0.0
        assert locations == [(5, 5)]

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_single_bs_equals_brute_force(self, seed):
        old = _old_image(seed=seed)
        start = tuple(int(v) for v in np.argwhere(old.pixels == 0)[-1])
        frac, locations = planner.cyclic_opt(old, [start], ratio_predictor, 0.8)
        expected_frac, expected_loc = _brute_force(old, ratio_predictor, 0.8)
        assert expected_frac > 0
        assert frac == expected_frac
        assert locations == [expected_loc]

    def test_sweep_skips_occupied_pixels(self):
        old = BsImage.from_indices([(0, 0), (3, 7), (8, 8), (12, 2)], grid_n=16)
        seen = []

        def recording(image):
            seen.append(image.occupied_count)
            return ratio_predictor(image)

        planner.cyclic_opt(old, [(15, 15), (15, 14)], recording, 0.8)
        assert set(seen) == {old.occupied_count + 2}

    def test_requires_locations(self):
        with pytest.raises(DomainError):
            planner.cyclic_opt(_old_image(), [], ratio_predictor, 0.8)


class TestPlan:
    def test_zero_fraction_is_solved_after_first_cycle(self):
        outcome = planner.plan(_old_image(), constant_predictor(0.0), PlanConfig(grid_n=16, frac_th=0.0, max_bs=3))
        assert outcome.found
        assert outcome.result == "solution"
        assert outcome.cycles_used == 1
        assert outcome.stages_run == 1
        assert len(outcome.locations) == 1

    def test_unreachable_threshold_runs_all_stages(self):
        config = PlanConfig(grid_n=16, cov_th=1.0, frac_th=0.5, max_bs=3)
        outcome = planner.plan(_old_image(), constant_predictor(1.0), config)
        assert not outcome.found
        assert outcome.result == "none"
        assert outcome.stages_run == 3
        assert outcome.achieved_frac == 0.0

    def test_calls_per_cycle_match_admissible_pixels(self):
        old = _old_image()
        config = PlanConfig(grid_n=16, cov_th=0.95, frac_th=1.0, max_bs=3, seed=4)
        outcome = planner.plan(old, ratio_predictor, config)
        free = 16 * 16 - old.occupied_count
        assert outcome.cycles
        for record in outcome.cycles:
            assert record.predictor_calls == record.stage * (free - (record.stage - 1))
        assert outcome.predictor_calls == sum(r.predictor_calls for r in outcome.cycles)
        assert outcome.predictor_calls <= config.max_bs * outcome.cycles_used * config.max_bs * 16 * 16

    def test_max_frac_strictly_increasing_and_stage_monotone(self):
        config = PlanConfig(grid_n=16, cov_th=0.97, frac_th=1.0, max_bs=3, seed=1)
        outcome = planner.plan(_old_image(seed=5), ratio_predictor, config)
        sequence = outcome.max_frac_sequence()
        assert all(a < b for a, b in zip(sequence, sequence[1:]))
        for stage in range(1, outcome.stages_run + 1):
            fracs = [r.cycle_max_frac for r in outcome.cycles if r.stage == stage]
            assert all(a <= b for a, b in zip(fracs, fracs[1:]))

    def test_same_seed_same_outcome(self):
        config = PlanConfig(grid_n=16, cov_th=0.97, frac_th=1.0, max_bs=2, seed=9)
        first = planner.plan(_old_image(), ratio_predictor, config)
        second = planner.plan(_old_image(), ratio_predictor, config)
        assert first.locations == second.locations
        assert first.best_locations == second.best_locations
        assert first.achieved_frac == second.achieved_frac
        assert first.predictor_calls == second.predictor_calls
        assert first.max_frac_sequence() == second.max_frac_sequence()

    def test_stub_first_stage_is_seed_independent(self):
        # единственная БС перебирает всю сетку: первый максимум 5×5 = 25 точек в (6, 6)
        old = BsImage.empty(16)
        for seed in (0, 7):
            config = PlanConfig(grid_n=16, cov_th=0.9, frac_th=1.0, max_bs=1, seed=seed)
            outcome = planner.plan(old, chebyshev_predictor(2), config)
            assert not outcome.found
            assert outcome.achieved_frac == 25 / 64
            assert outcome.best_locations == [(6, 6)]
            assert [r.cycle_max_frac for r in outcome.cycles] == [25 / 64, 25 / 64]

    def test_stub_tiling_from_near_solution(self):
        # остальные три БС закрывают все, кроме угла 3×3; первая переходит в (4, 4)
        old = BsImage.empty(16)
        start = [(6, 6), (6, 9), (9, 6), (9, 9)]
        frac, locations = planner.cyclic_opt(old, start, chebyshev_predictor(2), 0.9)
        assert frac == 1.0
        assert locations == [(4, 4), (6, 9), (9, 6), (9, 9)]
        after = chebyshev_predictor(2)(old.with_pixels(locations))
        assert (after.values == 1.0).all()

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            planner.plan(_old_image(grid_n=16), ratio_predictor, PlanConfig(grid_n=64))


class TestMemoizedPredictor:
    def test_counts_requests_and_evaluations(self):
        memo = MemoizedPredictor(ratio_predictor)
        old = _old_image()
        memo(old)
        memo(old)
        memo.predict_batch([old, old.with_pixels([(15, 15)])])
        assert memo.calls == 4
        assert memo.evaluations == 2

    def test_uses_batch_interface(self):
        class Batched:
            def __init__(self):
                self.batches = []

            def __call__(self, image):
                raise AssertionError("ожидался пакетный вызов")

            def predict_batch(self, images):
                self.batches.append(len(images))
                return [ratio_predictor(image) for image in images]

        inner = Batched()
        memo = MemoizedPredictor(inner)
        old = _old_image()
        memo.predict_batch([old, old, old.with_pixels([(1, 1)])])
        assert inner.batches == [2]

    def test_cache_is_bounded(self):
        memo = MemoizedPredictor(ratio_predictor, capacity=8)
        images = [BsImage.empty(16).with_pixels([(15, j)]) for j in range(16)]
        memo.predict_batch(images)
        assert len(memo.cache) == 8
        assert memo.evaluations == 16
        memo(images[-1])
        assert memo.evaluations == 16
        memo(images[0])
        assert memo.evaluations == 17
        assert len(memo.cache) <= 8

    def test_bounded_cache_keeps_plan_outcome(self):
        config = PlanConfig(grid_n=16, cov_th=0.97, frac_th=1.0, max_bs=3, seed=2)
        unbounded = planner.plan(_old_image(), ratio_predictor, config)
        memo = MemoizedPredictor(ratio_predictor, capacity=16)
        bounded = planner.plan(_old_image(), memo, config)
        assert len(memo.cache) <= 16
        assert bounded.best_locations == unbounded.best_locations
        assert bounded.achieved_frac == unbounded.achieved_frac
        assert bounded.predictor_calls == unbounded.predictor_calls

    def test_default_capacity_covers_one_sweep(self):
        assert planner.MEMO_CAPACITY == 4 * 64 * 64
        with pytest.raises(ValueError):
            MemoizedPredictor(ratio_predictor, capacity=0)


class TestDesignScenario:
    def test_before_after_and_deployment(self, spec10, scattered_image):
        config = PlanConfig(cov_th=0.9, frac_th=0.0, max_bs=2)
        design = planner.design_scenario(scattered_image, ratio_predictor, config, spec=spec10)
        assert design.outcome.found
        np.testing.assert_array_equal(design.before.values, ratio_predictor(scattered_image).values)
        placed = scattered_image.with_pixels(design.outcome.locations)
        np.testing.assert_array_equal(design.after.values, ratio_predictor(placed).values)
        (entry,) = design.deployment()
        i, j = entry['pixel']
        assert entry['km'] == pytest.approx([(i + 0.5) * 10 / 64, (j + 0.5) * 10 / 64])

    def test_none_outcome_reports_best_effort(self):
        config = PlanConfig(grid_n=16, cov_th=1.0, frac_th=0.5, max_bs=1)
        design = planner.design_scenario(_old_image(), constant_predictor(1.0), config)
        assert not design.outcome.found
        assert design.deployment() == []


@pytest.mark.slow
class TestPlannerAcceptance:
    def test_stub_tiling_on_full_grid(self):
        # MaxFrac переносится между этапами: исход зависит от случайного старта
        old = BsImage.empty()
        config = PlanConfig(cov_th=0.9, frac_th=1.0, max_bs=4, seed=3)
        outcome = planner.plan(old, chebyshev_predictor(8), config)
        assert outcome.found
        assert outcome.achieved_frac == 1.0
        assert len(outcome.locations) == 4
        after = chebyshev_predictor(8)(old.with_pixels(outcome.locations))
        assert (after.values == 1.0).all()

    def test_stub_tiling_can_stall_on_carried_max_frac(self):
        config = PlanConfig(cov_th=0.9, frac_th=1.0, max_bs=4, seed=0)
        outcome = planner.plan(BsImage.empty(), chebyshev_predictor(8), config)
        assert not outcome.found
        assert 0.9 < outcome.achieved_frac < 1.0
        assert outcome.stages_run == 4

    def test_simulator_single_bs_equals_brute_force(self):
        from coverage_manifold.core import synthgen

        roi = synthgen.gen_ppp_roi(0.3, 10.0, seed=21)
        predictor = MemoizedPredictor(planner.SimulatorPredictor(
            roi.spec, ChannelParams(alpha=4.0), mc=McConfig(n_draws=200, seed=3),
        ))
        start = tuple(int(v) for v in np.argwhere(roi.image.pixels == 0)[0])
        frac, locations = planner.cyclic_opt(roi.image, [start], predictor, 0.5)
        expected_frac, expected_loc = _brute_force(roi.image, predictor, 0.5)
        assert frac == expected_frac
        assert locations == [expected_loc]
