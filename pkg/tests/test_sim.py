import numpy as np
import pytest

from amylin_mpc import sim
from amylin_mpc.controller import MpcConfig, Policy
from amylin_mpc.mdd import MddConfig
from amylin_mpc.model import ModelParams
from amylin_mpc.sim import (BASAL_MULTIPLIERS, COHORT_SCALED, TABLE3_ARMS, Scenario,
                            SimulationError, aggregate, arm_config, default_meal_schedule,
                            generate_cohort, run_arms, run_scenario)

P = ModelParams()


class TestScenario:
    def test_meal_outside_duration(self):
        with pytest.raises(ValueError, match="meal 1"):
            Scenario(meals=[(60, 20), (1500, 30)], duration_days=1.0)

    def test_negative_carbs(self):
        with pytest.raises(ValueError, match="meal 0"):
            Scenario(meals=[(60, -5)])

    def test_duration(self):
        with pytest.raises(ValueError):
            Scenario(duration_days=0.0)
        assert Scenario(duration_days=1.0).n_steps == 288

    def test_with_policy(self):
        s = Scenario().with_policy("basal_pram", 6.0)
        assert s.mpc.policy is Policy.BASAL_PRAM and s.mpc.basal_multiplier == 6.0


class TestRun:
    def test_no_meals_stays_in_range(self):
        trace, summary = run_scenario(Scenario(duration_days=3.0))
        assert summary.pct_tir == 100.0
        assert not trace.detection.any()
        assert np.max(np.abs(trace.cgm - 110.0)) < 1.0

    def test_trace_shape_and_monotone_time(self):
        trace, _ = run_scenario(Scenario(meals=[(100, 40)], duration_days=0.5))
        cols = trace.columns()
        assert list(cols) == list(sim.TRACE_COLUMNS)
        assert all(len(v) == 144 for v in cols.values())
        assert np.all(np.diff(trace.time) > 0)
        for name in ("insulin_u", "pram_mcg", "insulin_bolus_u", "pram_bolus_mcg"):
            assert np.all(cols[name] >= 0)
        assert trace.meal_g.sum() == 40.0

    def test_single_meal_pram_lowers_peak(self):
        meals = [(120, 50.0)]
        tr_io, _ = run_scenario(Scenario(meals=meals, duration_days=0.5))
        tr_fra, _ = run_scenario(Scenario(meals=meals, duration_days=0.5).with_policy(
            "fixed_ratio_aware"))
        assert tr_fra.cgm.max() < tr_io.cgm.max()

    def test_deterministic(self):
        scn = Scenario(meals=[(200, 60.0)], duration_days=1.0, cgm_noise_sd=5.0, seed=4)
        a, _ = run_scenario(scn)
        b, _ = run_scenario(scn)
        for k, v in a.columns().items():
            assert np.array_equal(v, b.columns()[k])

    def test_noise_depends_on_seed(self):
        base = Scenario(duration_days=0.25, cgm_noise_sd=5.0)
        a, _ = run_scenario(base)
        b, _ = run_scenario(Scenario(duration_days=0.25, cgm_noise_sd=5.0, seed=1))
        assert not np.array_equal(a.cgm, b.cgm)

    def test_insulin_accounting(self):
        scn = Scenario(meals=[(200, 70.0)], duration_days=1.0)
        trace, summary = run_scenario(scn)
        assert trace.insulin_bolus_u.sum() > 0
        # insulin_u is the step total: quantized rate part plus bolus
        assert summary.total_daily_insulin == pytest.approx(trace.insulin_u.sum())
        rate_part = trace.insulin_u - trace.insulin_bolus_u
        q = scn.mpc.insulin_quantum
        assert np.allclose(rate_part / q, np.round(rate_part / q), atol=1e-6)

    @pytest.mark.parametrize("policy", ["fixed_ratio_aware", "fixed_ratio_unaware"])
    def test_fixed_ratio_every_step(self, policy):
        scn = Scenario(meals=[(200, 70.0), (700, 40.0)], duration_days=1.0).with_policy(policy)
        trace, _ = run_scenario(scn)
        gap = np.abs(np.cumsum(trace.pram_mcg) - 6.0 * np.cumsum(trace.insulin_u))
        assert gap.max() <= scn.mpc.pram_quantum + 1e-9

    def test_failure_reports_step(self, monkeypatch):
        calls = {"n": 0}
        real = sim._rk4

        def flaky(*args):
            calls["n"] += 1
            if calls["n"] > 5 * 7:
                return [float("nan")] * 10
            return real(*args)
        monkeypatch.setattr(sim, "_rk4", flaky)
        with pytest.raises(SimulationError) as info:
            run_scenario(Scenario(duration_days=0.5))
        assert info.value.step == 7

    def test_mdd_disabled(self):
        trace, s = run_scenario(Scenario(meals=[(100, 80.0)], duration_days=0.5,
                                         mdd=MddConfig(enabled=False)))
        assert not trace.detection.any() and s.mdd_units_per_day == 0.0


class TestCohort:
    def test_ranges(self):
        cohort = generate_cohort(20, seed=3)
        for p in cohort:
            for name in COHORT_SCALED:
                f = getattr(p, name) / getattr(P, name)
                assert 0.75 - 1e-12 <= f <= 1.33 + 1e-12
            assert 50.0 <= p.weight <= 100.0

    def test_deterministic(self):
        assert generate_cohort(5, seed=8) == generate_cohort(5, seed=8)
        assert generate_cohort(5, seed=8) != generate_cohort(5, seed=9)

    def test_empty(self):
        with pytest.raises(ValueError):
            generate_cohort(0)


class TestMeals:
    def test_three_per_day(self):
        meals = default_meal_schedule(3.0, seed=2)
        assert len(meals) == 9
        assert all(0 <= t < 3 * 1440 for t, _ in meals)
        assert all(30 <= c <= 90 for _, c in meals)

    def test_scale(self):
        small = default_meal_schedule(2.0, seed=5)
        big = default_meal_schedule(2.0, seed=5, scale=2.0)
        assert [t for t, _ in small] == [t for t, _ in big]
        assert sum(c for _, c in big) > 1.9 * sum(c for _, c in small)
        with pytest.raises(ValueError):
            default_meal_schedule(1.0, scale=0.0)

    def test_partial_day(self):
        assert all(t < 720 for t, _ in default_meal_schedule(0.5, seed=1))


class TestArms:
    def test_arm_config(self):
        base = MpcConfig()
        assert arm_config("basal_4", base).basal_multiplier == 4.0
        assert arm_config("independent", base).policy is Policy.INDEPENDENT

    def test_single_patient_all_arms(self):
        cohort = generate_cohort(1, seed=0)
        res = run_arms(cohort, [default_meal_schedule(3.0, seed=1)], 3.0)
        expected = list(TABLE3_ARMS) + [f"basal_{m}" for m in BASAL_MULTIPLIERS]
        assert list(res) == expected
        for arm in expected:
            agg = aggregate(res[arm]["summaries"])
            assert all(sd == 0.0 for _, sd in agg.values())
            assert res[arm]["failures"] == 0

    def test_threads_do_not_change_results(self):
        cohort = generate_cohort(2, seed=1)
        meals = [default_meal_schedule(1.0, seed=i) for i in range(2)]
        arms = ["insulin_only", "fixed_ratio_aware"]
        one = run_arms(cohort, meals, 1.0, arms=arms, threads=1)
        two = run_arms(cohort, meals, 1.0, arms=arms, threads=2)
        for arm in arms:
            assert one[arm]["summaries"] == two[arm]["summaries"]

    def test_failures_excluded(self, monkeypatch):
        real = sim.run_scenario

        def failing(scn):
            if scn.patient.weight == cohort[1].weight:
                raise SimulationError(3, RuntimeError("boom"))
            return real(scn)
        cohort = generate_cohort(3, seed=2)
        monkeypatch.setattr(sim, "run_scenario", failing)
        res = run_arms(cohort, [[]] * 3, 0.25, arms=["insulin_only"])
        assert res["insulin_only"]["failures"] == 1
        assert len(res["insulin_only"]["summaries"]) == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            run_arms([], [], 1.0)
        with pytest.raises(ValueError):
            run_arms(generate_cohort(2), [[]], 1.0)

    def test_aggregate_empty(self):
        agg = aggregate([])
        assert all(np.isnan(m) for m, _ in agg.values())
