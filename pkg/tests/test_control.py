"""Controller tests: PD law, hop execution, mismatch studies, sweeps."""

from dataclasses import replace

import numpy as np
import pytest

from granhop.control import (
    LOG_COLUMNS,
    AnalyticPlant,
    PdGains,
    error_percent,
    execute_hop,
    execute_multi_hop,
    impact_sweep,
    pd_feedback,
    tune_gains,
)
from granhop.gait import plan_hop
from granhop.hopper import HopperParams

P = HopperParams()


@pytest.fixture(scope="module")
def plan02():
    return plan_hop(-0.2, P)


# ---------------------------------------------------------------------------
# pd_feedback / error_percent
# ---------------------------------------------------------------------------

def test_pd_feedback_zero_error():
    assert pd_feedback((0.2, 0.1), (0.2, 0.1), PdGains()) == 0.0


def test_pd_feedback_hand_product():
    """kp=500, position error 0.01 m: 5 N."""
    g = PdGains(kp_stance=500.0, kd_stance=0.0)
    assert pd_feedback((0.21, 0.0), (0.20, 0.0), g) == pytest.approx(5.0)


def test_pd_feedback_linear_in_gains():
    g1 = PdGains(kp_stance=100.0, kd_stance=10.0)
    g2 = PdGains(kp_stance=200.0, kd_stance=20.0)
    d, a = (0.25, -0.1), (0.23, 0.05)
    assert pd_feedback(d, a, g2) == pytest.approx(2 * pd_feedback(d, a, g1))


def test_gains_must_be_nonnegative():
    with pytest.raises(ValueError):
        PdGains(kp_stance=-1.0)


def test_tune_gains_matches_shipped_defaults_roughly():
    g = tune_gains(P)
    d = PdGains()
    assert g.kp_stance == pytest.approx(d.kp_stance, rel=0.2)
    assert g.kd_stance == pytest.approx(d.kd_stance, rel=0.5)
    assert g.kd_leg == pytest.approx(d.kd_leg, rel=0.5)


def test_error_percent_values():
    assert error_percent(0.25, 0.25) == 0.0
    assert error_percent(0.26, 0.25) == pytest.approx(4.0)
    assert error_percent(0.24, 0.25) == pytest.approx(-4.0)


def test_error_percent_formula_antisymmetry():
    # swapping the numerator difference flips the sign, per the formula
    a, d = 0.26, 0.25
    assert error_percent(a, d) == pytest.approx(-((d - a) / d * 100.0))


def test_error_percent_guards_zero():
    with pytest.raises(ZeroDivisionError):
        error_percent(0.1, 0.0)


# ---------------------------------------------------------------------------
# execute_hop
# ---------------------------------------------------------------------------

def test_exact_model_ff_only_near_zero_error(plan02):
    plant = AnalyticPlant(P)
    plant.reset(plan02.initial)
    out = execute_hop(plan02, plant, PdGains(), "ff_only")
    assert abs(out.eta) < 0.1
    assert not out.failed


def test_zero_gains_fb_equals_ff_tick_for_tick(plan02):
    zero = PdGains(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    plant = AnalyticPlant(replace(P, k_g=700.0))
    plant.reset(plan02.initial)
    a = execute_hop(plan02, plant, zero, "ff_only")
    plant.reset(plan02.initial)
    b = execute_hop(plan02, plant, zero, "ff_plus_fb")
    assert np.array_equal(a.log, b.log)


def test_command_saturation_invariant(plan02):
    gains = PdGains(kp_stance=5000.0, kd_stance=500.0)
    plant = AnalyticPlant(replace(P, k_g=800.0))
    plant.reset(plan02.initial)
    out = execute_hop(plan02, plant, gains, "ff_plus_fb", u_bounds=50.0)
    u = out.log[:, LOG_COLUMNS.index("U")]
    assert np.abs(u).max() <= 50.0 + 1e-12


def test_mismatch_feedback_improves(plan02):
    for pert in (0.8, 1.2):
        plant = AnalyticPlant(replace(P, k_g=P.k_g * pert))
        plant.reset(plan02.initial)
        off = execute_hop(plan02, plant, PdGains(), "ff_only")
        plant.reset(plan02.initial)
        on = execute_hop(plan02, plant, PdGains(), "ff_plus_fb")
        assert abs(on.eta) < abs(off.eta)


def test_failed_outcome_carries_partial_log(plan02):
    # a plant with a quarter of the stiffness lets the foot sink until the
    # stroke limit trips under feedforward-only drive at a hard impact
    plan = plan_hop(-4.0, P)
    plant = AnalyticPlant(replace(P, k_g=P.k_g * 0.25))
    plant.reset(plan.initial)
    out = execute_hop(plan, plant, PdGains(), "ff_only")
    if out.failed:
        assert len(out.log) >= 1
        assert out.failure


# ---------------------------------------------------------------------------
# execute_multi_hop
# ---------------------------------------------------------------------------

def test_multi_hop_single_equals_execute_hop(plan02):
    plant = AnalyticPlant(P)
    plant.reset(plan02.initial)
    multi = execute_multi_hop(plan02, plant, PdGains(), 1, "ff_plus_fb",
                              sync="period")
    plant.reset(plan02.initial)
    single = execute_hop(plan02, plant, PdGains(), "ff_plus_fb")
    assert len(multi) == 1
    assert multi[0].eta == pytest.approx(single.eta, abs=1e-12)


def test_multi_hop_exact_model_periodicity(plan02):
    plant = AnalyticPlant(P)
    plant.reset(plan02.initial)
    outs = execute_multi_hop(plan02, plant, PdGains(), 5, "ff_plus_fb")
    assert len(outs) == 5
    err = abs(outs[-1].terminal_q_com - outs[-1].desired_q_com)
    assert err < 1e-3


def test_multi_hop_feedback_beats_open_loop_under_mismatch(plan02):
    plant = AnalyticPlant(replace(P, k_g=P.k_g * 1.2))
    plant.reset(plan02.initial)
    fb = execute_multi_hop(plan02, plant, PdGains(), 5, "ff_plus_fb")
    plant.reset(plan02.initial)
    ff = execute_multi_hop(plan02, plant, PdGains(), 5, "ff_only")
    fb_final = abs(fb[-1].eta)
    ff_final = abs(ff[-1].eta)  # possibly fewer hops if it crashed
    assert len(fb) == 5 and not fb[-1].failed
    assert ff_final > fb_final or any(o.failed for o in ff)


def test_multi_hop_rejects_bad_args(plan02):
    plant = AnalyticPlant(P)
    plant.reset(plan02.initial)
    with pytest.raises(ValueError):
        execute_multi_hop(plan02, plant, PdGains(), 0)
    with pytest.raises(ValueError):
        execute_multi_hop(plan02, plant, PdGains(), 1, sync="banana")


# ---------------------------------------------------------------------------
# impact_sweep
# ---------------------------------------------------------------------------

def test_impact_sweep_deterministic_plant_zero_std():
    plant = AnalyticPlant(P)
    report = impact_sweep(plant, [-0.2, -0.5], trials=2, gains=PdGains(),
                          params=P)
    for (v, mode), (em, es, vm, vs) in report["summary"].items():
        assert es == pytest.approx(0.0, abs=1e-12)
        assert vs == pytest.approx(0.0, abs=1e-12)


def test_impact_sweep_bookkeeping():
    plant = AnalyticPlant(P)
    velocities = [0.0, -0.2, -0.5, -1.0, -2.0, -4.0]
    report = impact_sweep(plant, velocities, trials=3, gains=PdGains(),
                          params=P, modes=("ff_plus_fb",))
    assert len(report["rows"]) == 18  # 6 velocities x 3 trials, one mode
    assert len(report["summary"]) == 6


def test_impact_sweep_rejects_positive_velocity():
    plant = AnalyticPlant(P)
    with pytest.raises(ValueError):
        impact_sweep(plant, [0.2], 1, PdGains())
