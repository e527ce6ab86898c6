"""Tests for the hybrid monopod plant: phases, closed forms, integration."""

import math

import numpy as np
import pytest

from granhop.ground import Phase
from granhop.hopper import (
    HopperParams,
    HopperState,
    StrokeViolation,
    classify_phase,
    closed_form_stance,
    com_state,
    integrate,
    scale_for_foot,
    stance_accel,
    stance_series,
)

P = HopperParams()


def yielding(q_b, q_f, v_b, v_f, t=0.0):
    return HopperState(q_b, q_f, v_b, v_f, t, Phase.YIELDING)


# ---------------------------------------------------------------------------
# stance_accel
# ---------------------------------------------------------------------------

def test_stance_accel_free_masses_at_surface():
    a_b, a_f = stance_accel(yielding(0.25, 0.0, -0.2, -0.2), 0.0, P)
    assert a_b == pytest.approx(-9.81)
    assert a_f == pytest.approx(-9.81)


def test_stance_accel_body_hover():
    a_b, _ = stance_accel(yielding(0.25, 0.0, 0, 0), P.m_b * P.g, P)
    assert a_b == pytest.approx(0.0, abs=1e-12)


def test_stance_accel_spring_on_foot():
    """Hand calc: f_g = 625*0.01 = 6.25 N, a_f = 6.25/0.25 - 9.81 = 15.19."""
    _, a_f = stance_accel(yielding(0.25, -0.01, 0, 0), 0.0, P)
    assert a_f == pytest.approx(15.19, abs=1e-10)


def test_stance_accel_static_foot_constrained():
    s = HopperState(0.25, -0.03, 0.0, 0.0, 0.0, Phase.STATIC)
    a_b, a_f = stance_accel(s, 1.0, P)
    assert a_f == 0.0


def test_stance_accel_rejects_flight():
    s = HopperState(0.30, 0.05, 0, 0, 0.0, Phase.FLIGHT)
    with pytest.raises(ValueError):
        stance_accel(s, 0.0, P)


# ---------------------------------------------------------------------------
# classify_phase
# ---------------------------------------------------------------------------

def test_classify_above_surface_is_flight():
    s = HopperState(0.30, +0.05, 0, 0)
    assert classify_phase(s, 0.0, P) is Phase.FLIGHT


def test_classify_moving_foot_is_yielding():
    s = HopperState(0.25, -0.03, 0, -0.2)
    assert classify_phase(s, 0.0, P) is Phase.YIELDING


def test_classify_static_inside_clamp():
    """u + m_f g = 2.4525 N sits inside [0, 625*0.03 = 18.75]."""
    s = HopperState(0.25, -0.03, 0.0, 0.0)
    assert classify_phase(s, 0.0, P) is Phase.STATIC


def test_classify_static_excluded_outside_clamp():
    s = HopperState(0.25, -0.001, 0.0, 0.0)
    # required force 0 + m_f g = 2.45 exceeds 625*0.001 = 0.625
    assert classify_phase(s, 0.0, P) is Phase.YIELDING
    # strong pull-up cannot be held either (required < 0)
    s2 = HopperState(0.25, -0.03, 0.0, 0.0)
    assert classify_phase(s2, -10.0, P) is Phase.YIELDING


def test_classify_total_and_exclusive():
    rng = np.random.default_rng(11)
    seen = set()
    for k in range(10_000):
        # every fifth sample parks the foot inside the velocity deadband so
        # the static branch is actually reachable by the sampler
        v_f = rng.normal(0.0, 3e-5) if k % 5 == 0 else rng.uniform(-5, 5)
        u = rng.uniform(-2, 15) if k % 5 == 0 else rng.uniform(-200, 200)
        s = HopperState(
            q_b=rng.uniform(-0.1, 0.6), q_f=rng.uniform(-0.3, 0.3),
            v_b=rng.uniform(-5, 5), v_f=v_f,
        )
        phase = classify_phase(s, u, P)
        assert phase in (Phase.FLIGHT, Phase.YIELDING, Phase.STATIC)
        seen.add(phase)
    assert seen == {Phase.FLIGHT, Phase.YIELDING, Phase.STATIC}


# ---------------------------------------------------------------------------
# closed-form stance
# ---------------------------------------------------------------------------

def test_closed_form_unforced_foot_matches_oscillator():
    """Textbook forced oscillator: q_f(t) = -(m_f g / k_g)(1 - cos w t)."""
    s0 = yielding(0.25, 0.0, 0.0, 0.0)
    w = P.omega
    sag = P.m_f * P.g / P.k_g
    for t in (0.01, 0.05, 0.13, 0.29):
        s = closed_form_stance((0, 0, 0, 0, 0), s0, P, t)
        assert s.q_f == pytest.approx(-sag * (1 - math.cos(w * t)), abs=1e-12)


def test_closed_form_unforced_body_ballistic():
    s0 = yielding(0.25, 0.0, -0.2, -0.2)
    t = 0.17
    s = closed_form_stance((0, 0, 0, 0, 0), s0, P, t)
    assert s.q_b == pytest.approx(0.25 - 0.2 * t - 0.5 * P.g * t * t, abs=1e-12)


def test_closed_form_identity_at_zero():
    s0 = yielding(0.23, -0.01, 0.4, -0.5)
    s = closed_form_stance((3.0, -2.0, 10.0, 5.0, -1.0), s0, P, 0.0)
    assert (s.q_b, s.q_f, s.v_b, s.v_f) == (s0.q_b, s0.q_f, s0.v_b, s0.v_f)


def sample_yielding_controls(rng, s0, n, T=0.3):
    """Random quartic controls whose closed-form stance stays in yielding
    (foot below the surface, stroke inside bounds) for the whole window."""
    out = []
    tt = np.linspace(0.0, T, 601)
    scale = np.array([15.0, 80.0, 250.0, 600.0, 1000.0])
    while len(out) < n:
        coeffs = rng.uniform(-1, 1, 5) * scale
        q_b, v_b, q_f, v_f = stance_series(coeffs, s0, P, tt)
        interior = tt > 0.01  # the foot starts exactly at the surface
        if q_f[interior].max() < -1e-4 and q_f.max() <= 0.0 and (
            (q_b - q_f).min() > 1e-3
        ) and ((q_b - q_f).max() < P.stroke_max - 1e-3):
            out.append(coeffs)
    return out


def test_closed_form_vs_rk4_random_controls():
    """Cross-oracle agreement between the analytic solution and RK4."""
    rng = np.random.default_rng(3)
    s0 = yielding(0.25, 0.0, -0.2, -0.2)
    worst = 0.0
    for coeffs in sample_yielding_controls(rng, s0, 20):
        cf = closed_form_stance(coeffs, s0, P, 0.3)
        u = lambda t, c=coeffs: c[0] + c[1]*t + c[2]*t**2 + c[3]*t**3 + c[4]*t**4
        traj = integrate(s0, u, P, dt=1e-4, t_end=0.3)
        end = traj.final_state()
        err = max(abs(end.q_b - cf.q_b), abs(end.q_f - cf.q_f))
        worst = max(worst, err)
    assert worst < 1e-6


# ---------------------------------------------------------------------------
# integrate
# ---------------------------------------------------------------------------

def test_integrate_flight_touchdown_speed():
    """Ballistics: drop from apex h gives touchdown speed sqrt(2 g h)."""
    h = 0.10
    s0 = HopperState(0.25 + h, h, 0.0, 0.0, 0.0, Phase.FLIGHT)
    traj = integrate(s0, lambda t: 0.0, P, dt=1e-4, t_end=0.16)
    td = [t for t, name in traj.events if name == "touchdown"]
    assert td, "no touchdown detected"
    k = np.searchsorted(traj.t, td[0])
    v = traj.v_f[min(k, len(traj.t) - 1)]
    assert abs(v) == pytest.approx(math.sqrt(2 * P.g * h), rel=1e-6)


def test_integrate_flight_com_parabola_any_control():
    """Internal force cancels: flight CoM is an exact parabola."""
    rng = np.random.default_rng(5)
    coeffs = rng.uniform(-8, 8, 5)
    u = lambda t: coeffs @ np.array([1, t, t**2, t**3, t**4])
    s0 = HopperState(0.60, 0.30, 0.1, 0.1, 0.0, Phase.FLIGHT)
    traj = integrate(s0, u, P, dt=1e-4, t_end=0.06)
    q0, v0 = com_state(s0, P)
    expected = q0 + v0 * traj.t - 0.5 * P.g * traj.t**2
    resid = np.abs(traj.q_com() - expected).max()
    assert resid < 1e-9 * max(1.0, abs(q0))


def test_integrate_energy_conserved_unforced_yielding():
    """With u = 0 the stance is a lossless oscillator plus ballistic body."""
    s0 = yielding(0.25, 0.0, 0.0, -0.3)
    traj = integrate(s0, lambda t: 0.0, P, dt=1e-4, t_end=0.1)

    def energy(k):
        ke = 0.5 * P.m_b * traj.v_b[k] ** 2 + 0.5 * P.m_f * traj.v_f[k] ** 2
        pe = P.g * (P.m_b * traj.q_b[k] + P.m_f * traj.q_f[k])
        spring = 0.5 * P.k_g * min(traj.q_f[k], 0.0) ** 2
        return ke + pe + spring

    e = [energy(k) for k in range(0, len(traj.t), 50)]
    assert max(e) - min(e) < 1e-8


def test_integrate_stroke_violation_raises():
    s0 = yielding(0.25, 0.0, -0.2, -0.2)
    with pytest.raises(StrokeViolation):
        integrate(s0, lambda t: 4000.0, P, dt=1e-4, t_end=0.5)


def test_integrate_respects_initial_phase_at_knife_edge():
    """At v_f = 0 with the holding force on the admissible boundary, the
    declared phase decides: yielding lets the spring drive the foot out."""
    u_hold = -P.m_f * P.g
    s0 = yielding(0.25, -0.01, 0.0, 0.0)
    traj = integrate(s0, lambda t: u_hold, P, dt=1e-4, t_end=0.02)
    assert traj.q_f[-1] > s0.q_f  # the foot moved up
    s0_static = HopperState(0.25, -0.01, 0.0, 0.0, 0.0, Phase.STATIC)
    traj2 = integrate(s0_static, lambda t: u_hold, P, dt=1e-4, t_end=0.02)
    assert traj2.q_f[-1] == pytest.approx(s0_static.q_f, abs=1e-12)


def test_integrate_static_releases_when_clamp_breaks():
    s0 = HopperState(0.25, -0.005, 0.0, 0.0, 0.0, Phase.STATIC)
    # ramp the pull-up force; once u + m_f g < 0 the ground cannot hold
    u = lambda t: -80.0 * t
    traj = integrate(s0, u, P, dt=1e-4, t_end=0.1)
    names = [n for _, n in traj.events]
    assert "static_release" in names
    assert traj.v_f[-1] != 0.0


# ---------------------------------------------------------------------------
# com_state / scale_for_foot
# ---------------------------------------------------------------------------

def test_com_state_weighted_average():
    """Hand calc: (1.25*0.25 + 0.25*0)/1.5 = 0.2083333."""
    q, v = com_state(yielding(0.25, 0.0, -0.2, -0.2), P)
    assert q == pytest.approx(0.2083333333, abs=1e-9)
    assert v == pytest.approx(-0.2)


def test_com_state_equal_masses_midpoint():
    params = HopperParams(m_b=1.0, m_f=1.0)
    q, v = com_state(yielding(0.4, -0.02, 1.0, -1.0), params)
    assert q == pytest.approx(0.19)
    assert v == pytest.approx(0.0)


def test_scale_for_foot_identity():
    scaled = scale_for_foot(P, 5.0)
    assert scaled.m_b == pytest.approx(P.m_b)
    assert scaled.m_f == pytest.approx(P.m_f)
    assert scaled.k_g == pytest.approx(P.k_g)


def test_scale_for_foot_unit_side():
    """Ratio arithmetic: total mass 1.5/25 = 0.06 kg, k_g = 25 N/m."""
    scaled = scale_for_foot(P, 1.0)
    assert scaled.total_mass == pytest.approx(0.06, rel=1e-12)
    assert scaled.m_b / scaled.m_f == pytest.approx(5.0, rel=1e-12)
    assert scaled.k_g == pytest.approx(25.0, rel=1e-12)


@pytest.mark.parametrize("side", [1.0, 2.0, 3.0, 5.0, 7.5])
def test_scale_for_foot_mass_area_invariant(side):
    scaled = scale_for_foot(P, side)
    base_ratio = P.total_mass / P.foot_area
    assert scaled.total_mass / scaled.foot_area == pytest.approx(
        base_ratio, rel=1e-12
    )
