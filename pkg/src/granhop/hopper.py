"""Hybrid two-mass vertical monopod plant.

Body (mass m_b at height q_b) and flat foot (mass m_f at height q_f) are
joined by a linear force actuator u; u > 0 pushes the masses apart.  Heights
are measured from the undisturbed ground surface.  Three phases: flight,
yielding stance (one-sided ground spring), and static stance (foot held by a
constraint force inside the admissible set).

Stance dynamics are linear, so trajectories under polynomial controls have a
closed form: the body integrates the polynomial directly and the foot is a
driven harmonic oscillator at omega = sqrt(k_g / m_f) solved by undetermined
coefficients.  A fixed-step RK4 integrator with bisection event location
provides the independent numeric route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .ground import GroundParams, Phase, derive_kg, ground_force

__all__ = [
    "HopperParams",
    "HopperState",
    "Trajectory",
    "StrokeViolation",
    "stance_accel",
    "classify_phase",
    "closed_form_stance",
    "integrate",
    "com_state",
    "scale_for_foot",
    "VELOCITY_DEADBAND",
]

# static-stance velocity deadband; makes the stationary-foot event detectable
VELOCITY_DEADBAND = 1e-4  # m/s

PHASE_CODE = {Phase.FLIGHT: 0, Phase.YIELDING: 1, Phase.STATIC: 2}


class StrokeViolation(RuntimeError):
    """Body-foot separation left the actuator's admissible stroke range."""


@dataclass(frozen=True)
class HopperParams:
    m_b: float = 1.25  # kg
    m_f: float = 0.25  # kg
    foot_area: float = 25.0  # cm^2
    stroke_max: float = 0.5  # m
    g: float = 9.81  # m/s^2
    k_g: float = 625.0  # N/m

    def __post_init__(self) -> None:
        for name in ("m_b", "m_f", "foot_area", "stroke_max", "g", "k_g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def total_mass(self) -> float:
        return self.m_b + self.m_f

    @property
    def omega(self) -> float:
        """Natural frequency of the foot on the ground spring."""
        return math.sqrt(self.k_g / self.m_f)

    def ground(self) -> GroundParams:
        return GroundParams(
            alpha_z_vertical=self.k_g / (self.foot_area * 100.0),
            foot_area=self.foot_area,
        )


@dataclass(frozen=True)
class HopperState:
    q_b: float
    q_f: float
    v_b: float
    v_f: float
    t: float = 0.0
    phase: Phase = Phase.FLIGHT

    def stroke(self) -> float:
        return self.q_b - self.q_f

    def validate(self, params: HopperParams) -> None:
        if not 0.0 < self.stroke() < params.stroke_max:
            raise StrokeViolation(
                f"stroke {self.stroke():.4f} m outside (0, {params.stroke_max}) at t={self.t:.4f}"
            )


def com_state(state: HopperState, params: HopperParams) -> tuple[float, float]:
    """Mass-weighted center-of-mass position and velocity."""
    total = params.total_mass
    q = (params.m_b * state.q_b + params.m_f * state.q_f) / total
    v = (params.m_b * state.v_b + params.m_f * state.v_f) / total
    return q, v


def classify_phase(state: HopperState, u: float, params: HopperParams) -> Phase:
    """Instantaneous phase of a state under control u.

    Flight above the surface (or at it, not descending); yielding stance
    below the surface with the foot moving; static stance when the foot is
    stationary within the deadband and the force needed to hold it,
    ``u + m_f * g``, lies inside the admissible set [0, -k_g * q_f].
    """
    for v in (state.q_b, state.q_f, state.v_b, state.v_f, u):
        if not math.isfinite(v):
            raise ValueError("non-finite state or control")
    if state.q_f > 0.0:
        return Phase.FLIGHT
    if state.q_f == 0.0:
        return Phase.YIELDING if state.v_f < 0.0 else Phase.FLIGHT
    if abs(state.v_f) > VELOCITY_DEADBAND:
        return Phase.YIELDING
    required = u + params.m_f * params.g
    if 0.0 <= required <= -params.k_g * state.q_f:
        return Phase.STATIC
    return Phase.YIELDING


def stance_accel(
    state: HopperState, u: float, params: HopperParams
) -> tuple[float, float]:
    """Body and foot accelerations in stance.

    Body: u / m_b - g.  Foot: (f_g - u) / m_f - g with the one-sided ground
    spring; zero by constraint in static stance.
    """
    if state.phase is Phase.FLIGHT:
        raise ValueError("stance_accel called in flight phase")
    a_b = u / params.m_b - params.g
    if state.phase is Phase.STATIC:
        return a_b, 0.0
    f_g = ground_force(min(state.q_f, 0.0), Phase.YIELDING, params.ground())
    a_f = (f_g - u) / params.m_f - params.g
    return a_b, a_f


# ---------------------------------------------------------------------------
# closed-form yielding-stance solution
# ---------------------------------------------------------------------------

def _foot_particular(coeffs, params: HopperParams):
    """Polynomial particular solution of m_f*q'' + k_g*q = -u(t) - m_f*g.

    Matching powers of t for the quartic drive gives the p-coefficients from
    highest degree down.
    """
    a, b, c, d, e = coeffs
    kg, mf, g = params.k_g, params.m_f, params.g
    c0, c1, c2, c3, c4 = -a - mf * g, -b, -c, -d, -e
    p4 = c4 / kg
    p3 = c3 / kg
    p2 = (c2 - 12.0 * mf * p4) / kg
    p1 = (c1 - 6.0 * mf * p3) / kg
    p0 = (c0 - 2.0 * mf * p2) / kg
    return p0, p1, p2, p3, p4


def stance_series(coeffs, state0: HopperState, params: HopperParams, t):
    """Vectorized yielding-stance solution at times t (arrays allowed).

    Returns (q_b, v_b, q_f, v_f).  Valid while the trajectory actually stays
    in yielding stance; callers check that separately.
    """
    if params.k_g <= 0:
        raise ValueError("k_g must be positive")
    t = np.asarray(t, dtype=float)
    a, b, c, d, e = coeffs
    mb, g = params.m_b, params.g
    # body: double integral of polynomial force plus gravity
    v_b = state0.v_b - g * t + (
        a * t + b * t**2 / 2 + c * t**3 / 3 + d * t**4 / 4 + e * t**5 / 5
    ) / mb
    q_b = state0.q_b + state0.v_b * t - g * t**2 / 2 + (
        a * t**2 / 2 + b * t**3 / 6 + c * t**4 / 12 + d * t**5 / 20 + e * t**6 / 30
    ) / mb
    # foot: homogeneous oscillation about the polynomial particular solution
    p0, p1, p2, p3, p4 = _foot_particular(coeffs, params)
    om = params.omega
    amp_c = state0.q_f - p0
    amp_s = (state0.v_f - p1) / om
    poly = p0 + p1 * t + p2 * t**2 + p3 * t**3 + p4 * t**4
    dpoly = p1 + 2 * p2 * t + 3 * p3 * t**2 + 4 * p4 * t**3
    q_f = amp_c * np.cos(om * t) + amp_s * np.sin(om * t) + poly
    v_f = -amp_c * om * np.sin(om * t) + amp_s * om * np.cos(om * t) + dpoly
    return q_b, v_b, q_f, v_f


def closed_form_stance(
    coeffs, state0: HopperState, params: HopperParams, t: float
) -> HopperState:
    """Exact yielding-stance state at time t under a quartic control."""
    q_b, v_b, q_f, v_f = stance_series(coeffs, state0, params, float(t))
    return HopperState(
        q_b=float(q_b), q_f=float(q_f), v_b=float(v_b), v_f=float(v_f),
        t=state0.t + float(t), phase=Phase.YIELDING,
    )


# ---------------------------------------------------------------------------
# numeric integration with event location
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    q_b: np.ndarray
    v_b: np.ndarray
    q_f: np.ndarray
    v_f: np.ndarray
    phase: np.ndarray  # PHASE_CODE values
    u: np.ndarray
    f_g: np.ndarray
    events: list[tuple[float, str]]
    params: HopperParams

    def q_com(self) -> np.ndarray:
        m = self.params
        return (m.m_b * self.q_b + m.m_f * self.q_f) / m.total_mass

    def v_com(self) -> np.ndarray:
        m = self.params
        return (m.m_b * self.v_b + m.m_f * self.v_f) / m.total_mass

    def final_state(self) -> HopperState:
        phase = {v: k for k, v in PHASE_CODE.items()}[int(self.phase[-1])]
        return HopperState(
            q_b=float(self.q_b[-1]), q_f=float(self.q_f[-1]),
            v_b=float(self.v_b[-1]), v_f=float(self.v_f[-1]),
            t=float(self.t[-1]), phase=phase,
        )


def _deriv(y, u, phase: Phase, params: HopperParams):
    q_b, v_b, q_f, v_f = y
    a_b = u / params.m_b - params.g
    if phase is Phase.STATIC:
        return np.array([v_b, a_b, 0.0, 0.0])
    if phase is Phase.FLIGHT:
        a_f = -u / params.m_f - params.g
    else:
        a_f = (-params.k_g * q_f - u) / params.m_f - params.g
    return np.array([v_b, a_b, v_f, a_f])


def _rk4(y, t, dt, control, phase, params):
    k1 = _deriv(y, control(t), phase, params)
    k2 = _deriv(y + 0.5 * dt * k1, control(t + 0.5 * dt), phase, params)
    k3 = _deriv(y + 0.5 * dt * k2, control(t + 0.5 * dt), phase, params)
    k4 = _deriv(y + dt * k3, control(t + dt), phase, params)
    return y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _event_value(y, t, control, phase, params):
    """Scalar whose zero crossing ends the current phase."""
    q_b, v_b, q_f, v_f = y
    if phase is Phase.FLIGHT:
        return q_f  # touchdown when q_f crosses 0 downward
    if phase is Phase.YIELDING:
        return -q_f  # lift-off when q_f crosses 0 upward
    # static: exit when the holding force leaves the admissible set
    required = control(t) + params.m_f * params.g
    return min(required, -params.k_g * q_f - required)


def _static_entry(y, t, control, params) -> bool:
    """Yielding -> static only at a genuine equilibrium of the foot.

    A transversal v_f = 0 crossing (an intrusion reversal) keeps yielding;
    sticking needs the yielding acceleration itself to vanish while the
    required holding force is admissible.
    """
    q_b, v_b, q_f, v_f = y
    u = control(t)
    a_f = (-params.k_g * q_f - u) / params.m_f - params.g
    if abs(a_f) > 1e-9:
        return False
    required = u + params.m_f * params.g
    return 0.0 <= required <= -params.k_g * q_f


def integrate(
    state0: HopperState,
    control,
    params: HopperParams,
    dt: float = 1e-4,
    t_end: float = 1.0,
    t_breaks: tuple[float, ...] = (),
) -> Trajectory:
    """Fixed-step RK4 rollout with bisection-located phase transitions.

    ``control`` maps time to actuator force.  ``t_breaks`` marks known
    control discontinuities so integration steps land on them exactly.
    Phase-transition times are located to 1e-9 s.  Raises StrokeViolation
    when the separation leaves (0, stroke_max) and RuntimeError on NaN.
    """
    if dt > 1e-4 + 1e-15:
        raise ValueError("dt above the 1e-4 s default bound")
    # start in the caller's declared phase: at the v_f = 0 knife edge both
    # stance branches are admissible and the hybrid history disambiguates;
    # only repair outright inconsistencies with the contact geometry
    phase = state0.phase
    if phase is Phase.FLIGHT and state0.q_f <= 0.0 and state0.v_f < 0.0:
        phase = Phase.YIELDING
    elif phase is not Phase.FLIGHT and state0.q_f > 1e-12:
        phase = Phase.FLIGHT
    elif phase is Phase.STATIC:
        required = control(state0.t) + params.m_f * params.g
        if not 0.0 <= required <= -params.k_g * state0.q_f:
            phase = Phase.YIELDING
    y = np.array([state0.q_b, state0.v_b, state0.q_f, state0.v_f])
    t = state0.t
    t_stop = state0.t + t_end
    breaks = sorted(b + state0.t * 0 for b in t_breaks if state0.t < b < t_stop)

    ts, rows, phases, us, fgs = [t], [y.copy()], [PHASE_CODE[phase]], [control(t)], []
    events: list[tuple[float, str]] = []

    def fg_of(yv, ph, tt):
        if ph is Phase.FLIGHT:
            return 0.0
        if ph is Phase.YIELDING:
            return -params.k_g * min(yv[2], 0.0)
        return min(max(control(tt) + params.m_f * params.g, 0.0), -params.k_g * yv[2])

    fgs.append(fg_of(y, phase, t))

    while t < t_stop - 1e-12:
        h = min(dt, t_stop - t)
        seg_end = None
        for b in breaks:
            if t < b - 1e-12:
                seg_end = b
                if t + h > b:
                    h = b - t
                break
        if seg_end is not None:
            # every stage in this step (including event bisection) must see
            # the left limit of any control discontinuity at the segment end
            end = seg_end

            def u_seg(tau, _end=end):
                return control(min(tau, _end - 1e-13))
        else:
            u_seg = control
        y_new = _rk4(y, t, h, u_seg, phase, params)
        if not np.all(np.isfinite(y_new)):
            raise RuntimeError(f"NaN state at t={t + h:.6f}")
        g0 = _event_value(y, t, u_seg, phase, params)
        g1 = _event_value(y_new, t + h, u_seg, phase, params)
        crossed = g0 > 0.0 and g1 <= 0.0
        if phase is Phase.YIELDING and not crossed:
            # possible static entry at a foot-velocity reversal
            if y[3] * y_new[3] < 0.0:
                lo, hi, ylo = t, t + h, y.copy()
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    ymid = _rk4(ylo, lo, mid - lo, u_seg, phase, params)
                    if ylo[3] * ymid[3] <= 0.0:
                        hi = mid
                    else:
                        lo, ylo = mid, ymid
                    if hi - lo < 1e-9:
                        break
                y_rev = _rk4(y, t, 0.5 * (lo + hi) - t, u_seg, phase, params)
                if _static_entry(y_rev, 0.5 * (lo + hi), u_seg, params):
                    t = 0.5 * (lo + hi)
                    y = y_rev
                    y[3] = 0.0
                    phase = Phase.STATIC
                    events.append((t, "static_onset"))
                    ts.append(t); rows.append(y.copy()); phases.append(PHASE_CODE[phase])
                    us.append(control(t)); fgs.append(fg_of(y, phase, t))
                    continue
        if crossed:
            # bisect the transition time to 1e-9 s
            lo, hi = t, t + h
            ylo = y.copy()
            for _ in range(64):
                if hi - lo < 1e-9:
                    break
                mid = 0.5 * (lo + hi)
                ymid = _rk4(ylo, lo, mid - lo, u_seg, phase, params)
                gmid = _event_value(ymid, mid, u_seg, phase, params)
                if gmid <= 0.0:
                    hi = mid
                else:
                    lo, ylo = mid, ymid
            t_evt = hi
            y = _rk4(ylo, lo, t_evt - lo, u_seg, phase, params)
            t = t_evt
            if phase is Phase.FLIGHT:
                phase = Phase.YIELDING
                y[2] = min(y[2], 0.0)
                events.append((t, "touchdown"))
            elif phase is Phase.YIELDING:
                y[2] = max(y[2], 0.0)
                phase = Phase.FLIGHT
                events.append((t, "liftoff"))
            else:
                phase = Phase.YIELDING
                events.append((t, "static_release"))
        else:
            t = t + h
            if seg_end is not None and abs(t - seg_end) < 1e-12:
                t = seg_end
            y = y_new
        state = HopperState(y[0], y[2], y[1], y[3], t, phase)
        state.validate(params)
        ts.append(t); rows.append(y.copy()); phases.append(PHASE_CODE[phase])
        us.append(control(t)); fgs.append(fg_of(y, phase, t))

    arr = np.array(rows)
    return Trajectory(
        t=np.array(ts), q_b=arr[:, 0], v_b=arr[:, 1], q_f=arr[:, 2], v_f=arr[:, 3],
        phase=np.array(phases), u=np.array(us), f_g=np.array(fgs),
        events=events, params=params,
    )


def scale_for_foot(base: HopperParams, foot_side: float) -> HopperParams:
    """Rescale the robot for a square foot of the given side (cm).

    The total-mass to foot-area ratio is held fixed, the 5:1 body:foot mass
    split is preserved, and the ground stiffness is rederived from the same
    vertical stress gradient acting on the new area.
    """
    if not foot_side > 0:
        raise ValueError("foot_side must be positive")
    area = foot_side * foot_side
    ratio = base.total_mass / base.foot_area  # kg per cm^2, held fixed
    total = ratio * area
    m_b = total * base.m_b / base.total_mass
    m_f = total * base.m_f / base.total_mass
    alpha = base.k_g / (base.foot_area * 100.0)
    return replace(
        base, m_b=m_b, m_f=m_f, foot_area=area, k_g=derive_kg(alpha, area)
    )
