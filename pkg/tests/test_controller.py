import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amylin_mpc import controller as ctl_mod
from amylin_mpc.controller import (DoseCommand, MpcConfig, MpcController, Policy,
                                   _Quantizer, basal_pram_rate, mpc_step,
                                   reference_trajectory)
from amylin_mpc.model import (M1, Q1, Q2, QP1, QP2, QP3, ModelParams, basal_for_target,
                              insulin_from_model, pram_to_model, steady_state)
from amylin_mpc.sim import Scenario, run_scenario

P = ModelParams()
CFG = MpcConfig()


def rest_state(params=P, target=110.0, pram=0.0):
    u = basal_for_target(params, target)
    return steady_state(params, u, pram_to_model(pram, params.weight)).to_array()


def no_insulin_state(glucose):
    x = np.zeros(10)
    x[Q1] = glucose * P.vd_g
    x[Q2] = x[Q1] * P.k21 / P.k12
    return x


class TestReference:
    def test_line_midpoint(self):
        r = reference_trajectory(180.0, CFG.with_(target=110.0, np=60))
        assert r[29] == pytest.approx(145.0, abs=1e-12)
        assert r[-1] == pytest.approx(110.0, abs=1e-12)

    def test_at_target(self):
        assert np.all(reference_trajectory(110.0, CFG) == 110.0)

    def test_below_target(self):
        r = reference_trajectory(80.0, CFG.with_(ref_tau=60.0, ts=5.0))
        assert r[11] == pytest.approx(98.963616764856730352, abs=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            reference_trajectory(0.0, CFG)

    @given(st.floats(20, 600))
    def test_moves_toward_target(self, g):
        r = reference_trajectory(g, CFG)
        assert len(r) == CFG.np
        assert np.all(np.abs(r - CFG.target) <= abs(g - CFG.target) + 1e-9)


class TestConfig:
    @pytest.mark.parametrize("change", [dict(np=0), dict(nc=0), dict(q_weight=-1.0),
                                        dict(u_max_ins=0.0), dict(ref_tau=0.0),
                                        dict(linearization="cubic")])
    def test_invalid(self, change):
        with pytest.raises(ValueError):
            MpcConfig(**change)

    def test_awareness_follows_policy(self):
        assert not CFG.with_(policy=Policy.FIXED_RATIO_UNAWARE).aware
        assert CFG.with_(policy=Policy.FIXED_RATIO_AWARE).aware
        assert not CFG.with_(policy=Policy.FIXED_RATIO_AWARE, pram_aware=False).aware

    def test_policy_from_string(self):
        assert MpcConfig(policy="independent").policy is Policy.INDEPENDENT


class TestBasalPram:
    def test_product(self):
        assert basal_pram_rate(1.5, 6) == 9.0

    def test_zeros(self):
        assert basal_pram_rate(1.5, 0) == 0.0
        assert basal_pram_rate(0.0, 6) == 0.0

    def test_nonstandard_warns(self):
        with pytest.warns(UserWarning):
            assert basal_pram_rate(1.0, 5) == 5.0

    def test_negative(self):
        with pytest.raises(ValueError):
            basal_pram_rate(-1.0, 2)


class TestQuantizer:
    def test_carry(self):
        q = _Quantizer(0.05)
        out = [q(0.03) for _ in range(10)]
        assert sum(out) == pytest.approx(0.3)
        assert all(round(v / 0.05, 9) == round(v / 0.05) for v in out)

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=50))
    def test_total_within_one_quantum(self, amounts):
        q = _Quantizer(0.5)
        delivered = sum(q(a) for a in amounts)
        assert 0.0 <= sum(amounts) - delivered < 0.5 + 1e-9


class TestStep:
    def test_rest_returns_basal(self):
        cmd = mpc_step(rest_state(), CFG, P)
        basal = insulin_from_model(basal_for_target(P, CFG.target), P.weight)
        assert cmd.insulin_rate == pytest.approx(basal, rel=1e-6)
        assert not cmd.fallback

    def test_high_glucose_raises_insulin(self):
        cmd = mpc_step(no_insulin_state(250.0), CFG, P)
        assert cmd.insulin_rate > insulin_from_model(basal_for_target(P, CFG.target),
                                                     P.weight)

    def test_low_glucose_reduces_insulin(self):
        x = rest_state()
        x[Q1] = 70.0 * P.vd_g
        x[Q2] = x[Q1] * P.k21 / P.k12
        basal = insulin_from_model(basal_for_target(P, CFG.target), P.weight)
        assert mpc_step(x, CFG, P).insulin_rate < basal

    def test_fixed_ratio_bolus(self):
        ctl = MpcController(P, CFG.with_(policy=Policy.FIXED_RATIO_AWARE))
        x = rest_state()
        cmd = ctl.step(x, insulin_bolus=2.5)
        assert cmd.insulin_bolus == pytest.approx(2.5)
        assert cmd.pram_bolus == pytest.approx(15.0)

    def test_insulin_only_has_no_pram(self):
        x = rest_state()
        x[Q1] = 220.0 * P.vd_g
        cmd = MpcController(P, CFG).step(x, insulin_bolus=1.0)
        assert cmd.pram_rate == 0.0 and cmd.pram_bolus == 0.0

    def test_independent_delivers_both(self):
        x = no_insulin_state(250.0)
        x[M1] = 60.0  # pramlintide only acts through the gut
        cmd = mpc_step(x, CFG.with_(policy=Policy.INDEPENDENT, r_weight_pram=0.01), P)
        assert cmd.insulin_rate > 0 and cmd.pram_rate > 0

    def test_basal_pram_uses_trailing_average(self):
        cfg = CFG.with_(policy=Policy.BASAL_PRAM, basal_multiplier=6.0)
        ctl = MpcController(P, cfg, declared_basal=1.5)
        assert ctl.avg_insulin_rate == pytest.approx(1.5)
        assert ctl.basal_pram() == pytest.approx(9.0)

    def test_unaware_equals_aware_without_pram(self):
        x = rest_state()
        x[Q1] = 190.0 * P.vd_g
        a = mpc_step(x, CFG.with_(pram_aware=True), P)
        b = mpc_step(x, CFG.with_(pram_aware=False), P)
        assert a == b

    def test_unaware_ignores_pram_states(self):
        x = rest_state()
        x[Q1] = 190.0 * P.vd_g
        y = x.copy()
        y[[QP1, QP2, QP3]] = (500.0, 300.0, 200.0)
        cfg = CFG.with_(policy=Policy.FIXED_RATIO_UNAWARE)
        assert mpc_step(x, cfg, P) == mpc_step(y, cfg, P)

    def test_fallback_on_solver_failure(self, monkeypatch):
        def boom(*a, **k):
            raise np.linalg.LinAlgError("singular")
        monkeypatch.setattr(ctl_mod, "lsq_linear", boom)
        ctl = MpcController(P, CFG)
        cmd = ctl.step(rest_state())
        assert cmd.fallback
        assert cmd.insulin_rate == pytest.approx(ctl.u_basal, abs=CFG.insulin_quantum * 12)

    def test_invalid_state_falls_back(self):
        x = rest_state()
        x[Q1] = math.nan
        assert MpcController(P, CFG).step(x).fallback

    @settings(max_examples=25, deadline=None)
    @given(st.floats(40, 400), st.floats(0, 5), st.sampled_from(list(Policy)))
    def test_caps_respected(self, g, bolus, policy):
        cfg = CFG.with_(policy=policy, basal_multiplier=10.0, u_max_ins=4.0,
                        u_max_pram=24.0)
        x = rest_state()
        x[Q1] = g * P.vd_g
        cmd = MpcController(P, cfg).step(x, insulin_bolus=bolus)
        assert 0.0 <= cmd.insulin_rate <= 4.0 + 1e-9
        assert 0.0 <= cmd.pram_rate <= 24.0 + 1e-9
        assert cmd.insulin_bolus >= 0.0 and cmd.pram_bolus >= 0.0


def test_dose_amounts():
    cmd = DoseCommand(insulin_rate=1.2, pram_rate=6.0, insulin_bolus=0.5, pram_bolus=3.0)
    assert cmd.insulin_amount(5.0) == pytest.approx(0.6)
    assert cmd.pram_amount(5.0) == pytest.approx(3.5)


def test_fixed_ratio_totals_over_a_run():
    scn = Scenario(meals=[(120, 60.0), (600, 45.0)], duration_days=1.0,
                   mpc=MpcConfig(policy=Policy.FIXED_RATIO_AWARE))
    trace, _ = run_scenario(scn)
    ins, pram = trace.insulin_u.sum(), trace.pram_mcg.sum()
    assert abs(pram - 6.0 * ins) <= scn.mpc.pram_quantum
    # every step as well, after quantization
    cum = np.abs(np.cumsum(trace.pram_mcg) - 6.0 * np.cumsum(trace.insulin_u))
    assert cum.max() <= scn.mpc.pram_quantum + 1e-9


def test_tracking_improves_with_q_weight():
    # no-meal day from equilibrium; the residual error comes from dose quantization
    errs = []
    for q in (0.5, 1.0, 4.0):
        trace, _ = run_scenario(Scenario(duration_days=1.0, mpc=MpcConfig(q_weight=q)))
        errs.append(float(np.mean(np.abs(trace.cgm - 110.0))))
    assert errs[0] >= errs[1] >= errs[2]
