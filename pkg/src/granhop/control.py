"""Feedforward plus feedback execution of hop plans.

A 1 kHz zero-order-hold loop reads the plant's center of mass, interpolates
the plan's reference, and commands the actuator force.  During stance the
feedback is a PD on the CoM error; during flight a PD on the leg drives the
body-foot velocity difference to zero and the separation back to its
touchdown value.  Both corrections act through the internal leg force only,
so the flight-phase CoM stays ballistic regardless of feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .gait import HopPlan
from .ground import Phase
from .hopper import (
    HopperParams,
    HopperState,
    StrokeViolation,
    com_state,
    integrate,
)

__all__ = [
    "PdGains",
    "HopOutcome",
    "AnalyticPlant",
    "DemPlant",
    "pd_feedback",
    "tune_gains",
    "execute_hop",
    "execute_multi_hop",
    "error_percent",
    "impact_sweep",
    "LOG_COLUMNS",
]

LOG_COLUMNS = (
    "t", "hop_index", "phase", "U_ff", "U_fb", "U",
    "q_com", "v_com", "q_com_d", "v_com_d",
)


@dataclass(frozen=True)
class PdGains:
    kp_stance: float = 400.0  # N/m
    kd_stance: float = 40.0  # N*s/m
    kp_flight: float = 50.0  # N/m
    kd_flight: float = 5.0  # N*s/m
    kp_leg: float = 1000.0  # N/m, stance leg-extension servo
    kd_leg: float = 30.0  # N*s/m, stance leg-rate damping

    def __post_init__(self) -> None:
        for name in ("kp_stance", "kd_stance", "kp_flight", "kd_flight",
                     "kp_leg", "kd_leg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def tune_gains(
    params: HopperParams,
    freq_fraction: float = 1.0 / 3.0,
    zeta: float = 0.8,
) -> PdGains:
    """Critical-damping-style heuristic behind the default gains.

    The stance loop controls the CoM through the ground spring, so its
    bandwidth is placed a factor below the foot's contact resonance; the
    flight loop acts on the body-foot separation through the reduced mass.
    The transfer from leg force to CoM is w^2 / (M s^2 (s^2 + w^2)) -- four
    poles, no zeros -- so a CoM PD alone always destabilizes the lossless
    contact resonance; kd_leg adds collocated damping of the actuator's own
    extension-rate error, which is passive and pulls that mode into the
    left half plane.  The shipped defaults are these values rounded to
    friendly numbers.
    """
    total = params.total_mass
    w_c = params.omega * freq_fraction
    kp_s = total * w_c * w_c
    kd_s = 2.0 * zeta * math.sqrt(kp_s * total)
    m_red = 1.0 / (1.0 / params.m_b + 1.0 / params.m_f)
    kp_f = m_red * w_c * w_c
    kd_f = 2.0 * zeta * math.sqrt(kp_f * m_red)
    kp_leg = 1.6 * params.k_g
    kd_leg = 2.6 * math.sqrt(params.k_g * m_red)
    return PdGains(kp_stance=kp_s, kd_stance=kd_s, kp_flight=kp_f,
                   kd_flight=kd_f, kp_leg=kp_leg, kd_leg=kd_leg)


def pd_feedback(
    desired: tuple[float, float],
    actual: tuple[float, float],
    gains: PdGains,
) -> float:
    """Stance feedback force: kp*(q_d - q) + kd*(v_d - v)."""
    return gains.kp_stance * (desired[0] - actual[0]) + gains.kd_stance * (
        desired[1] - actual[1]
    )


def error_percent(actual_q: float, desired_q: float) -> float:
    """Signed terminal CoM position error as a percentage of the target."""
    if desired_q == 0.0:
        raise ZeroDivisionError("desired CoM position is zero")
    return (actual_q - desired_q) / desired_q * 100.0


@dataclass
class HopOutcome:
    hop_index: int
    terminal_q_com: float
    terminal_v_com: float
    desired_q_com: float
    desired_v_com: float
    eta: float  # % position error
    err_vel: float  # m/s, terminal velocity error
    duration: float
    failed: bool = False
    failure: str = ""
    log: np.ndarray = field(default=None, repr=False)


class AnalyticPlant:
    """Closed-form hopper integrated with the event-detecting RK4 stepper.

    ``params`` may differ from the plan's model (ground-stiffness mismatch
    studies).  One plant instance is owned by one controller run.
    """

    def __init__(self, params: HopperParams, substep: float = 1e-4):
        self.params = params
        self.substep = substep
        self._state: HopperState | None = None

    def reset(self, state: HopperState) -> None:
        self._state = state

    def reset_for_run(self, plan: HopPlan, trial: int, seed: int = 0) -> None:
        self.reset(plan.initial)

    @property
    def state(self) -> HopperState:
        if self._state is None:
            raise RuntimeError("plant not reset")
        return self._state

    def advance(self, u: float, dt: float) -> HopperState:
        traj = integrate(
            self._state, lambda t: u, self.params,
            dt=self.substep, t_end=dt,
        )
        self._state = traj.final_state()
        return self._state


class DemPlant:
    """Hopper with the foot force-coupled to a DEM bed.

    The foot is the world's plate in dynamic-z mode: particle contacts,
    actuator force, and gravity integrate its vertical motion at the DEM
    rate, while the body runs the exact constant-force update per tick.
    Heights are measured from the settled surface captured at reset.
    """

    def __init__(self, world, params: HopperParams):
        if world.intruder is None or not world.intruder.dynamic_z:
            raise ValueError("world needs a dynamic-z plate as the foot")
        self.world = world
        self.params = params
        self.z_surface = 0.0
        self._q_b = 0.0
        self._v_b = 0.0
        self._t = 0.0

    def reset(self, state: HopperState) -> None:
        from .dem.world import surface_height

        self.z_surface = surface_height(self.world)
        plate = self.world.intruder
        drop = plate.center[2] - plate.lowest_point_z()
        plate.center = np.array([
            self.world.domain[0] / 2.0, self.world.domain[1] / 2.0,
            self.z_surface + state.q_f + drop,
        ])
        plate.velocity = np.array([0.0, 0.0, state.v_f])
        self._q_b = state.q_b
        self._v_b = state.v_b
        self._t = state.t

    def reset_for_run(self, plan, trial: int, seed: int = 0) -> None:
        self.reset(plan.initial)

    @property
    def state(self) -> HopperState:
        plate = self.world.intruder
        q_f = plate.lowest_point_z() - self.z_surface
        v_f = float(plate.velocity[2])
        phase = Phase.FLIGHT if q_f > 0 else Phase.YIELDING
        return HopperState(
            q_b=self._q_b, q_f=q_f, v_b=self._v_b, v_f=v_f,
            t=self._t, phase=phase,
        )

    def advance(self, u: float, dt: float) -> HopperState:
        from .dem.world import run

        plate = self.world.intruder
        plate.external_force_z = -u - self.params.m_f * self.params.g
        n_sub = max(1, int(round(dt / self.world.dt)))
        run(self.world, n_sub)
        a_b = u / self.params.m_b - self.params.g
        self._q_b += self._v_b * dt + 0.5 * a_b * dt * dt
        self._v_b += a_b * dt
        self._t += dt
        s = self.state
        s.validate(self.params)
        return s


def _tick_command(plan, plant_state, t, h, gains, mode, params, u_bounds):
    """One controller tick: feedforward plus phase-gated feedback.

    The feedforward is sampled at the tick midpoint (trapezoid-equivalent
    for the zero-order hold).  Stance feedback is the CoM PD plus damping
    on the leg-rate deviation from the plan; flight feedback is a PD on the
    leg pulling the separation back to its touchdown value.
    """
    u_ff = plan.u_ff(min(t + 0.5 * h, plan.period))
    u_fb = 0.0
    if mode == "ff_plus_fb":
        q_com, v_com = com_state(plant_state, params)
        in_stance = plant_state.q_f < 0.0 or (
            plant_state.q_f <= 0.0 and plant_state.v_f < 0.0
        )
        sep_rate = plant_state.v_b - plant_state.v_f
        if in_stance:
            q_d, v_d = plan.reference_at(t)
            sep_d, rate_d = plan.leg_at(t)
            sep = plant_state.q_b - plant_state.q_f
            if t < plan.T_s:
                u_fb = pd_feedback((q_d, v_d), (q_com, v_com), gains)
                u_fb += gains.kp_leg * (sep_d - sep) + gains.kd_leg * (
                    rate_d - sep_rate
                )
            else:
                # push-off window: what matters now is the CoM state the
                # ballistic flight will propagate, so feed back the
                # predicted terminal error (dq + dv * time-to-go); plain
                # position feedback here would re-inject the energy the
                # mismatch already added
                t_rem = max(plan.period - t, 0.0)
                u_fb = 2.0 * gains.kp_stance * (
                    (q_d - q_com) + t_rem * (v_d - v_com)
                )
                u_fb += gains.kd_leg * (rate_d - sep_rate)
        else:
            sep_ref = plan.initial_separation()
            sep = plant_state.q_b - plant_state.q_f
            u_fb = gains.kp_flight * (sep_ref - sep) + gains.kd_flight * (0.0 - sep_rate)
    u = min(max(u_ff + u_fb, -u_bounds), u_bounds)
    return u_ff, u_fb, u


def _run_one_hop(
    plan: HopPlan,
    plant,
    gains: PdGains,
    mode: str,
    hop_index: int,
    params: HopperParams,
    u_bounds: float,
    tick: float,
    sync: str,
) -> HopOutcome:
    if mode not in ("ff_only", "ff_plus_fb"):
        raise ValueError(f"mode must be ff_only or ff_plus_fb, got {mode!r}")
    rows = []
    t = 0.0
    seen_flight = False
    t_max = plan.period + 0.5 * max(plan.flight.t_free, tick)
    failed = False
    failure = ""
    at_period = None  # CoM snapshot at the reference end
    while True:
        s = plant.state
        h = min(tick, t_max - t)
        if h <= 1e-12:
            break
        u_ff, u_fb, u = _tick_command(plan, s, t, h, gains, mode, params, u_bounds)
        q_com, v_com = com_state(s, params)
        q_d, v_d = plan.reference_at(min(t, plan.period))
        rows.append((t, hop_index, {Phase.FLIGHT: 0, Phase.YIELDING: 1,
                                    Phase.STATIC: 2}[s.phase],
                     u_ff, u_fb, u, q_com, v_com, q_d, v_d))
        if t < plan.period - 1e-12 and t + h > plan.period:
            h = plan.period - t  # land one tick exactly on the reference end
        try:
            s_new = plant.advance(u, h)
        except (StrokeViolation, RuntimeError) as exc:
            failed = True
            failure = str(exc)
            break
        t += h
        if at_period is None and t >= plan.period - 1e-12:
            at_period = com_state(s_new, params)
        if sync == "touchdown":
            # arm only once the planned push is underway: the stance foot
            # can graze the surface mid-hop (double intrusion) and must not
            # retrigger the hop clock
            if s_new.q_f > 0.0 and t > plan.T_s + 0.5 * plan.flight.t_push:
                seen_flight = True
            if seen_flight and s_new.q_f <= 0.0:
                break
            if t >= t_max - 1e-12:
                break
        else:
            if t >= plan.period - 1e-12:
                break

    # the hop's error is judged where the reference ends, even when the
    # sync boundary runs past it waiting for the next touchdown
    if at_period is None:
        at_period = com_state(plant.state, params)
    q_com, v_com = at_period
    q_d, v_d = plan.reference_at(plan.period)
    log = np.array(rows)
    return HopOutcome(
        hop_index=hop_index,
        terminal_q_com=q_com,
        terminal_v_com=v_com,
        desired_q_com=q_d,
        desired_v_com=v_d,
        eta=error_percent(q_com, q_d),
        err_vel=v_com - v_d,
        duration=t,
        failed=failed,
        failure=failure,
        log=log,
    )


def execute_hop(
    plan: HopPlan,
    plant,
    gains: PdGains,
    mode: str = "ff_plus_fb",
    u_bounds: float = 200.0,
    tick: float = 1e-3,
) -> HopOutcome:
    """Run one hop at 1 kHz; the hop ends at the plan period."""
    return _run_one_hop(
        plan, plant, gains, mode, 0, plan.params, u_bounds, tick, sync="period"
    )


def execute_multi_hop(
    plan: HopPlan,
    plant,
    gains: PdGains,
    n_hops: int,
    mode: str = "ff_plus_fb",
    u_bounds: float = 200.0,
    tick: float = 1e-3,
    sync: str = "touchdown",
) -> list[HopOutcome]:
    """Repeat the single-hop reference n_hops times.

    With ``sync="touchdown"`` (default) each hop's reference clock restarts
    when the plant's foot actually strikes the surface, absorbing timing
    drift from model mismatch; ``sync="period"`` re-triggers on the fixed
    plan period instead.  For plans with no free-flight segment the
    touchdown mode degenerates to the period clock.
    """
    if n_hops < 1:
        raise ValueError("n_hops must be at least 1")
    if sync not in ("touchdown", "period"):
        raise ValueError(f"sync must be touchdown or period, got {sync!r}")
    use_sync = sync if plan.flight.t_free > 2e-3 else "period"
    outcomes = []
    for k in range(n_hops):
        out = _run_one_hop(
            plan, plant, gains, mode, k, plan.params, u_bounds, tick,
            sync=use_sync,
        )
        outcomes.append(out)
        if out.failed:
            break
    return outcomes


def impact_sweep(
    plant,
    velocities,
    trials: int,
    gains: PdGains,
    params: HopperParams | None = None,
    modes: tuple[str, ...] = ("ff_only", "ff_plus_fb"),
    u_bounds: float = 200.0,
    base_seed: int = 0,
) -> dict:
    """Per-velocity, per-mode error statistics over repeated trials.

    Returns {"rows": [(V0, mode, trial, eta_pos, err_vel)], "summary":
    {(V0, mode): (mean_eta, std_eta, mean_ev, std_ev)}}.  The plant must
    expose ``reset_for_run(plan, trial, seed)``; deterministic plants yield
    zero standard deviations.
    """
    if any(v > 0 for v in velocities):
        raise ValueError("impact velocities must be nonpositive")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    from .gait import plan_hop

    params = params or HopperParams()
    rows = []
    for V0 in velocities:
        plan = plan_hop(V0, params)
        for mode in modes:
            for trial in range(trials):
                plant.reset_for_run(plan, trial, seed=base_seed + trial)
                out = execute_hop(plan, plant, gains, mode, u_bounds=u_bounds)
                rows.append((V0, mode, trial, out.eta, out.err_vel))
    summary = {}
    for V0 in velocities:
        for mode in modes:
            sel = [(e, ev) for v, m, _, e, ev in rows if v == V0 and m == mode]
            etas = np.array([x[0] for x in sel])
            evs = np.array([x[1] for x in sel])
            summary[(V0, mode)] = (
                float(etas.mean()), float(etas.std()),
                float(evs.mean()), float(evs.std()),
            )
    return {"rows": rows, "summary": summary}
