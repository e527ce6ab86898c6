"""Stance trajectory optimization and flight planning for periodic hops.

The stance control is a quartic force profile u(t) = a + b t + c t^2 +
d t^3 + e t^4.  Because the stance dynamics are linear, the four terminal
equality constraints are affine in the coefficient vector; they are solved
exactly, the remaining degree of freedom is the one-dimensional null space,
and the quadratic control-effort cost is minimized along it in closed form.
Inequalities (stroke, force bounds, foot-stays-in-ground) restrict that
line to an interval, so projection is an exact clamp.

The flight segment applies one constant force that carries the foot from
its stance-end depth back to the surface while equalizing body and foot
velocities, then shuts the actuator off for the ballistic remainder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ground import Phase
from .hopper import HopperParams, HopperState, stance_series

__all__ = [
    "ControlPolynomial",
    "StanceBVP",
    "FlightSegment",
    "HopPlan",
    "GaitInfeasible",
    "cost",
    "cost_gradient",
    "stance_residuals",
    "inequality_violations",
    "solve_stance_nlp",
    "derive_terminal_targets",
    "plan_flight",
    "plan_hop",
    "save_plan_json",
    "load_plan_json",
]


class GaitInfeasible(RuntimeError):
    """No control satisfies the boundary conditions within the bounds."""


@dataclass(frozen=True)
class ControlPolynomial:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    e: float = 0.0

    def __post_init__(self) -> None:
        if not all(map(math.isfinite, self.as_array())):
            raise ValueError("non-finite control coefficients")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d, self.e])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = self.a + self.b * t + self.c * t**2 + self.d * t**3 + self.e * t**4
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StanceBVP:
    """Fixed-duration stance boundary-value problem."""

    initial: HopperState
    terminal_q_b: float
    terminal_q_f: float
    terminal_v_b: float
    T_s: float = 0.3
    u_bounds: float = 200.0
    u_min: float | None = None  # set to 0.0 to forbid pulling the masses together
    stroke: float = 0.5

    def __post_init__(self) -> None:
        if not self.T_s > 0:
            raise ValueError("T_s must be positive")
        if abs(self.initial.q_f) > 1e-12:
            raise ValueError("stance starts with the foot at the surface")
        if abs(self.initial.v_b - self.initial.v_f) > 1e-12:
            raise ValueError("stance starts with equal body and foot velocities")

    def targets(self) -> np.ndarray:
        return np.array([
            self.terminal_q_b, self.terminal_q_f, self.terminal_v_b, 0.0,
        ])


def cost(x: ControlPolynomial, T_s: float) -> float:
    """Exact integral of u^2 over [0, T_s] (degree-8 polynomial)."""
    if not T_s > 0:
        raise ValueError("T_s must be positive")
    v = x.as_array()
    return float(v @ _gram(T_s) @ v)


def cost_gradient(x: ControlPolynomial, T_s: float) -> np.ndarray:
    return 2.0 * _gram(T_s) @ x.as_array()


def _gram(T_s: float) -> np.ndarray:
    """Gram matrix of the monomial basis: Q[i,j] = T^(i+j+1) / (i+j+1)."""
    idx = np.arange(5)
    p = idx[:, None] + idx[None, :] + 1
    return T_s ** p / p


def _terminal_affine(bvp: StanceBVP, params: HopperParams):
    """Terminal state as r + M x, built column-by-column from the closed form."""

    def terminal(coeffs):
        q_b, v_b, q_f, v_f = stance_series(coeffs, bvp.initial, params, bvp.T_s)
        return np.array([float(q_b), float(q_f), float(v_b), float(v_f)])

    r = terminal(np.zeros(5))
    M = np.empty((4, 5))
    eye = np.eye(5)
    for k in range(5):
        M[:, k] = terminal(eye[k]) - r
    return M, r


def stance_residuals(
    x: ControlPolynomial, bvp: StanceBVP, params: HopperParams
) -> np.ndarray:
    """Terminal-condition residuals [q_b-C, q_f-D, v_b-E, v_f-0] at T_s."""
    q_b, v_b, q_f, v_f = stance_series(x.as_array(), bvp.initial, params, bvp.T_s)
    return np.array([float(q_b), float(q_f), float(v_b), float(v_f)]) - bvp.targets()


def inequality_violations(
    x: ControlPolynomial,
    bvp: StanceBVP,
    params: HopperParams,
    n_check: int = 200,
    tol: float = 1e-12,
) -> list[dict]:
    """Check stroke, force-bound, and ground-contact inequalities on a grid.

    Returns one record per violated constraint instance; empty when the
    stance trajectory is feasible at all n_check uniformly spaced times.
    """
    if n_check < 50:
        raise ValueError("n_check must be at least 50")
    t = np.linspace(0.0, bvp.T_s, n_check)
    q_b, v_b, q_f, v_f = stance_series(x.as_array(), bvp.initial, params, t)
    u = x(t)
    out: list[dict] = []

    def flag(kind, mask, values):
        for k in np.nonzero(mask)[0]:
            out.append({"kind": kind, "t": float(t[k]), "value": float(values[k])})

    stroke = q_b - q_f
    flag("stroke_low", stroke <= 0.0 + tol, values=stroke)
    flag("stroke_high", stroke >= bvp.stroke - tol, values=stroke)
    flag("force_high", u > bvp.u_bounds + tol, values=u)
    flag("force_low", u < -bvp.u_bounds - tol, values=u)
    if bvp.u_min is not None:
        flag("force_below_min", u < bvp.u_min - tol, values=u)
    flag("foot_above_ground", q_f > tol, values=q_f)
    return out


def solve_stance_nlp(
    bvp: StanceBVP, params: HopperParams, n_check: int = 200
) -> ControlPolynomial:
    """Exact minimum-effort quartic control meeting the terminal conditions.

    The equality constraints are linear in the coefficients; the 1D family
    that satisfies them is parameterized by the null direction and the
    convex quadratic cost is minimized along it, clamped to the interval
    the inequality constraints carve out of the line.
    """
    M, r = _terminal_affine(bvp, params)
    b = bvp.targets() - r
    x_p, *_ = np.linalg.lstsq(M, b, rcond=None)
    _, sv, vt = np.linalg.svd(M)
    if sv.min() < 1e-12 * sv.max():
        raise GaitInfeasible("terminal map is rank deficient for this stance")
    null = vt[-1]

    Q = _gram(bvp.T_s)
    s_star = -float(null @ Q @ x_p) / float(null @ Q @ null)

    # inequality interval along x(s) = x_p + s * null
    t = np.linspace(0.0, bvp.T_s, n_check)
    qb0, vb0, qf0, vf0 = stance_series(x_p, bvp.initial, params, t)
    qb1, vb1, qf1, vf1 = stance_series(x_p + null, bvp.initial, params, t)
    powers = np.stack([np.ones_like(t), t, t**2, t**3, t**4], axis=1)
    u0 = powers @ x_p
    du = powers @ null

    margin = 1e-9
    s_lo, s_hi = -np.inf, np.inf

    def bound(base, direction, lower, upper):
        """Constrain lower <= base + s*direction <= upper for every sample."""
        nonlocal s_lo, s_hi
        for lim, sign in ((lower, +1.0), (upper, -1.0)):
            if lim is None:
                continue
            # sign=+1: base + s*dir >= lim;  sign=-1: <= lim
            g = sign * direction
            c = sign * (base - lim) - margin
            pos = g > 1e-14
            neg = g < -1e-14
            flat = ~pos & ~neg
            # samples insensitive to s: hard-violated only beyond numerical
            # slack (the initial condition sits exactly on the ground bound)
            if np.any(sign * (base[flat] - lim) < -1e-12):
                raise GaitInfeasible(
                    "constraint violated independently of the free coefficient"
                )
            if np.any(pos):
                s_lo = max(s_lo, float((-c[pos] / g[pos]).max()))
            if np.any(neg):
                s_hi = min(s_hi, float((-c[neg] / g[neg]).min()))

    stroke0 = qb0 - qf0
    dstroke = qb1 - qf1 - stroke0
    bound(stroke0, dstroke, 0.0, bvp.stroke)
    bound(u0, du, -bvp.u_bounds if bvp.u_min is None else max(-bvp.u_bounds, bvp.u_min),
          bvp.u_bounds)
    bound(qf0, qf1 - qf0, None, 0.0)

    if s_lo > s_hi:
        best = ControlPolynomial(*(x_p + s_star * null))
        res = stance_residuals(best, bvp, params)
        raise GaitInfeasible(
            f"empty feasible interval along the null line "
            f"(s in [{s_lo:.3g}, {s_hi:.3g}]); best residual {np.abs(res).max():.2e}"
        )
    s = min(max(s_star, s_lo), s_hi)
    x = ControlPolynomial(*(x_p + s * null))

    res = stance_residuals(x, bvp, params)
    if np.abs(res).max() >= 1e-6:
        raise GaitInfeasible(
            f"equality residual {np.abs(res).max():.2e} above tolerance"
        )
    bad = inequality_violations(x, bvp, params, n_check=n_check)
    if bad:
        raise GaitInfeasible(f"inequality violations after projection: {bad[:3]}")
    return x


# ---------------------------------------------------------------------------
# flight phase
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlightSegment:
    """Constant-force push to the surface, then ballistic free fall."""

    u_const: float
    t_push: float
    t_free: float


def _push_solution(D: float, v_target: float, params: HopperParams):
    """Constant force and duration lifting the foot from depth D to the
    surface, arriving at speed v_target, with the ground spring acting the
    whole way up.

    The foot rides a shifted harmonic arc: q_f = (D - q_ss) cos(w t) + q_ss.
    Matching the surface crossing and arrival speed fixes the shift
    q_ss = (D^2 - (v/w)^2) / (2 D) and the phase atan2(v/w, q_ss).
    """
    if v_target < 0.0:
        raise GaitInfeasible("push target speed must be nonnegative")
    w = params.omega
    r = abs(v_target) / w  # abs also normalizes IEEE negative zero
    if D >= 0.0:
        if abs(D) < 1e-12 and v_target <= 1e-12:
            return 0.0, 0.0
        raise GaitInfeasible(
            "push needs the foot below the surface to build speed"
        )
    q_ss = (D * D - r * r) / (2.0 * D)
    theta = math.atan2(r, q_ss)
    t_push = theta / w
    u_const = -params.k_g * q_ss - params.m_f * params.g
    return u_const, t_push


def derive_terminal_targets(
    V_0: float,
    params: HopperParams,
    q_b0: float = 0.25,
    u_bounds: float = 200.0,
    bound_margin: float = 0.8,
    depth: float | None = None,
) -> tuple[float, float, float]:
    """Stance-end targets (C, D, E) that make the flight phase close the hop.

    D is the deeper of the foot's unforced-spring rest depth and its natural
    plunge depth V*/omega at the lift-off speed V*.  At the plunge depth the
    spring alone stores the lift-off energy, so the constant push force only
    unweights the foot and stays far inside the actuator bounds; ending the
    stance deeper also keeps the body-foot stroke open at hard impacts.
    E and C then follow from the push-phase body kinematics so that
    velocities equalize at exactly the periodic lift-off speed and the body
    returns to its impact height.
    """
    if V_0 > 0:
        raise ValueError("V_0 is an impact velocity; it cannot be positive")
    v_target = abs(V_0)
    w = params.omega
    r = v_target / w
    d_rest = params.m_f * params.g / params.k_g
    d = depth if depth is not None else max(d_rest, r)
    if not d > 0:
        raise ValueError("stance-end depth must be positive")
    D = -d

    u_const, t_push = _push_solution(D, v_target, params)
    if abs(u_const) > bound_margin * u_bounds:
        raise GaitInfeasible(
            f"lift-off force {u_const:.1f} N exceeds {bound_margin:.0%} of the bound"
        )
    a_b = u_const / params.m_b - params.g
    E = v_target - a_b * t_push
    C = q_b0 - E * t_push - 0.5 * a_b * t_push * t_push
    if not 0.0 < C - D < params.stroke_max:
        raise GaitInfeasible(
            f"stance-end stroke {C - D:.3f} m outside (0, {params.stroke_max})"
        )
    return C, D, E


def plan_flight(
    stance_end: HopperState,
    apex: dict,
    params: HopperParams,
    tol: float = 1e-6,
) -> FlightSegment:
    """Flight-phase control from a stance-end state back to the apex setup.

    ``apex`` holds q_b0, q_f0 (the periodic contact configuration) and
    v_target (the lift-off speed, = -V_0).  The push force and duration come
    from the foot's closed form; the body must arrive at the same velocity
    and at its periodic height, otherwise the stance-end state is reported
    as inconsistent.  Center-of-mass bookkeeping is exact: during free
    flight the actuator is off and the CoM decelerates at g regardless.
    """
    if abs(stance_end.v_f) > tol:
        raise GaitInfeasible(f"stance must end with a stationary foot "
                             f"(v_f={stance_end.v_f:.2e})")
    v_target = float(apex["v_target"])
    if v_target < 0:
        raise GaitInfeasible("lift-off speed must be nonnegative")
    u_const, t_push = _push_solution(stance_end.q_f, v_target, params)

    a_b = u_const / params.m_b - params.g
    v_b_end = stance_end.v_b + a_b * t_push
    q_b_end = stance_end.q_b + stance_end.v_b * t_push + 0.5 * a_b * t_push ** 2
    if abs(v_b_end - v_target) > tol:
        raise GaitInfeasible(
            f"body cannot match the lift-off speed: reaches {v_b_end:.6f} "
            f"instead of {v_target:.6f} (insufficient body momentum)"
        )
    if abs(q_b_end - float(apex["q_b0"])) > tol:
        raise GaitInfeasible(
            f"body misses its periodic height: {q_b_end:.6f} vs {apex['q_b0']:.6f}"
        )
    t_free = 2.0 * v_target / params.g
    return FlightSegment(u_const=u_const, t_push=t_push, t_free=t_free)


# ---------------------------------------------------------------------------
# full hop plan
# ---------------------------------------------------------------------------

@dataclass
class HopPlan:
    V_0: float
    T_s: float
    stance: ControlPolynomial
    flight: FlightSegment
    reference: np.ndarray  # rows (t, q_com_d, v_com_d), 1 kHz
    period: float
    initial: HopperState
    params: HopperParams

    def u_ff(self, t: float) -> float:
        """Feedforward force schedule over one hop period."""
        if t < self.T_s:
            return float(self.stance(t))
        if t < self.T_s + self.flight.t_push:
            return self.flight.u_const
        return 0.0

    def reference_at(self, t: float) -> tuple[float, float]:
        q = float(np.interp(t, self.reference[:, 0], self.reference[:, 1]))
        v = float(np.interp(t, self.reference[:, 0], self.reference[:, 2]))
        return q, v

    def _leg_reference(self) -> tuple[np.ndarray, np.ndarray]:
        if not hasattr(self, "_leg_sep"):
            tt = self.reference[:, 0]
            q_b, v_b, q_f, v_f = _reference_states(
                self.stance, self.flight, self.initial, self.params, self.T_s, tt
            )
            self._leg_sep = q_b - q_f
            self._leg_rate = v_b - v_f
        return self._leg_sep, self._leg_rate

    def leg_at(self, t: float) -> tuple[float, float]:
        """Planned body-foot separation and its rate, from the closed forms."""
        sep, rate = self._leg_reference()
        tt = self.reference[:, 0]
        return float(np.interp(t, tt, sep)), float(np.interp(t, tt, rate))

    def initial_separation(self) -> float:
        return self.initial.q_b - self.initial.q_f


def _reference_states(
    x: ControlPolynomial,
    flight: FlightSegment,
    initial: HopperState,
    params: HopperParams,
    T_s: float,
    t: np.ndarray,
):
    """Closed-form full-hop state history at the given times."""
    q_b = np.empty_like(t)
    v_b = np.empty_like(t)
    q_f = np.empty_like(t)
    v_f = np.empty_like(t)

    stance_mask = t <= T_s
    ts = t[stance_mask]
    q_b[stance_mask], v_b[stance_mask], q_f[stance_mask], v_f[stance_mask] = (
        stance_series(x.as_array(), initial, params, ts)
    )

    end = stance_series(x.as_array(), initial, params, T_s)
    qb_e, vb_e, qf_e, vf_e = (float(v) for v in end)
    w = params.omega
    q_ss = (-flight.u_const - params.m_f * params.g) / params.k_g
    a_b = flight.u_const / params.m_b - params.g

    push_mask = (t > T_s) & (t <= T_s + flight.t_push)
    tau = t[push_mask] - T_s
    q_f[push_mask] = (qf_e - q_ss) * np.cos(w * tau) + q_ss
    v_f[push_mask] = -(qf_e - q_ss) * w * np.sin(w * tau)
    q_b[push_mask] = qb_e + vb_e * tau + 0.5 * a_b * tau**2
    v_b[push_mask] = vb_e + a_b * tau

    tau_p = flight.t_push
    qf_p = (qf_e - q_ss) * math.cos(w * tau_p) + q_ss
    vf_p = -(qf_e - q_ss) * w * math.sin(w * tau_p)
    qb_p = qb_e + vb_e * tau_p + 0.5 * a_b * tau_p**2
    vb_p = vb_e + a_b * tau_p

    free_mask = t > T_s + flight.t_push
    tau = t[free_mask] - T_s - flight.t_push
    g = params.g
    q_b[free_mask] = qb_p + vb_p * tau - 0.5 * g * tau**2
    v_b[free_mask] = vb_p - g * tau
    q_f[free_mask] = qf_p + vf_p * tau - 0.5 * g * tau**2
    v_f[free_mask] = vf_p - g * tau
    return q_b, v_b, q_f, v_f


# fallback ladders when the default stance problem is infeasible: deeper
# stance-end depths buy headroom for the foot's ringing, shorter stances
# keep the body from overrunning the stroke at hard impacts
DEPTH_LADDER = (1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
DURATION_LADDER = (0.3, 0.25, 0.2, 0.15, 0.12)


def plan_hop(
    V_0: float,
    params: HopperParams,
    T_s: float | None = None,
    u_bounds: float = 200.0,
    q_b0: float = 0.25,
    sample_hz: float = 1000.0,
) -> HopPlan:
    """Compose targets, stance NLP, and flight plan into a full hop plan.

    With ``T_s=None`` the default 0.3 s stance is tried first and the
    duration/depth ladders are searched for a feasible problem when it is
    not; an explicit ``T_s`` disables the duration search.  The reference
    CoM trajectory is sampled at ``sample_hz`` over one period and starts
    and ends at the periodic contact state.
    """
    durations = (T_s,) if T_s is not None else DURATION_LADDER
    d_default = max(params.m_f * params.g / params.k_g, abs(V_0) / params.omega)
    initial = HopperState(
        q_b=q_b0, q_f=0.0, v_b=V_0, v_f=V_0, t=0.0, phase=Phase.YIELDING
    )

    x = bvp = None
    C = D = E = None
    failures = []
    for T_try in durations:
        for mult in DEPTH_LADDER:
            try:
                C, D, E = derive_terminal_targets(
                    V_0, params, q_b0=q_b0, u_bounds=u_bounds,
                    depth=d_default * mult,
                )
                bvp = StanceBVP(
                    initial=initial, terminal_q_b=C, terminal_q_f=D,
                    terminal_v_b=E, T_s=T_try, u_bounds=u_bounds,
                    stroke=params.stroke_max,
                )
                x = solve_stance_nlp(bvp, params)
                break
            except GaitInfeasible as exc:
                failures.append(f"T_s={T_try} depth x{mult}: {exc}")
                x = None
        if x is not None:
            break
    if x is None:
        raise GaitInfeasible(
            "no feasible stance over the duration/depth ladders; tried:\n  "
            + "\n  ".join(failures[-6:])
        )
    T_s = bvp.T_s

    stance_end = HopperState(
        q_b=C, q_f=D, v_b=E, v_f=0.0, t=T_s, phase=Phase.YIELDING
    )
    flight = plan_flight(
        stance_end, {"q_b0": q_b0, "q_f0": 0.0, "v_target": -V_0}, params
    )
    period = T_s + flight.t_push + flight.t_free

    n = max(2, int(round(period * sample_hz)) + 1)
    t = np.linspace(0.0, period, n)
    q_b, v_b, q_f, v_f = _reference_states(x, flight, initial, params, T_s, t)
    mt = params.total_mass
    q_com = (params.m_b * q_b + params.m_f * q_f) / mt
    v_com = (params.m_b * v_b + params.m_f * v_f) / mt
    reference = np.stack([t, q_com, v_com], axis=1)

    return HopPlan(
        V_0=V_0, T_s=T_s, stance=x, flight=flight, reference=reference,
        period=period, initial=initial, params=params,
    )


def save_plan_json(plan: HopPlan, path: str | Path) -> None:
    payload = {
        "V0": plan.V_0,
        "Ts": plan.T_s,
        "coefficients": list(plan.stance.as_array()),
        "u_const": plan.flight.u_const,
        "t_push": plan.flight.t_push,
        "t_free": plan.flight.t_free,
        "period": plan.period,
        "reference": [[float(a), float(b), float(c)] for a, b, c in plan.reference],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_plan_json(path: str | Path, params: HopperParams) -> HopPlan:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    reference = np.asarray(payload["reference"], dtype=float)
    initial = HopperState(
        q_b=reference[0, 1] * params.total_mass / params.m_b, q_f=0.0,
        v_b=payload["V0"], v_f=payload["V0"], t=0.0, phase=Phase.YIELDING,
    )
    return HopPlan(
        V_0=payload["V0"],
        T_s=payload["Ts"],
        stance=ControlPolynomial(*payload["coefficients"]),
        flight=FlightSegment(payload["u_const"], payload["t_push"], payload["t_free"]),
        reference=reference,
        period=payload["period"],
        initial=initial,
        params=params,
    )
