"""Analytic resistive-force ground model.

Granular resistive stress on a flat plate is linear in depth with an
orientation-dependent gradient alpha(beta, gamma).  The gradient surface is
represented as a truncated 2D Fourier series; the vertical gradient at the
foot orientation collapses the whole bed into a one-sided linear spring used
by the hopper plant.

Units: angles in radians, depths in meters, stresses in N/cm^2, stress
gradients in N/cm^3 (converted only inside :func:`derive_kg`).
"""

from __future__ import annotations

import datetime as _dt
import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "FourierTerm",
    "FourierModel",
    "GroundParams",
    "PlatePose",
    "Phase",
    "eval_alpha",
    "stress_at_depth",
    "ground_force",
    "derive_kg",
    "load_coefficient_table",
    "save_model_json",
    "load_model_json",
]


class Phase(enum.Enum):
    """Hybrid contact phase of the hopper foot."""

    FLIGHT = "flight"
    YIELDING = "yielding"
    STATIC = "static"


@dataclass(frozen=True)
class FourierTerm:
    m: int
    n: int
    A: float
    B: float
    C: float
    D: float


@dataclass
class FourierModel:
    """Coefficient table for the alpha_z / alpha_x gradient surfaces.

    Each term contributes ``A*cos(2*m*beta + n*gamma) + B*sin(...)`` to
    alpha_z and ``C*cos(...) + D*sin(...)`` to alpha_x.  Real-valuedness of
    the underlying fit shows up as conjugate pairing between the (m, n) and
    (-m, -n) rows: equal cosine coefficients, negated sine coefficients.
    """

    order: int
    terms: list[FourierTerm]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {self.order}")
        for t in self.terms:
            if abs(t.m) > self.order or abs(t.n) > self.order:
                raise ValueError(f"term ({t.m},{t.n}) exceeds order {self.order}")
        self._m = np.array([t.m for t in self.terms], dtype=float)
        self._n = np.array([t.n for t in self.terms], dtype=float)
        self._A = np.array([t.A for t in self.terms])
        self._B = np.array([t.B for t in self.terms])
        self._C = np.array([t.C for t in self.terms])
        self._D = np.array([t.D for t in self.terms])

    def validate_pairing(self, atol: float = 1e-6) -> None:
        """Check the conjugate-pair structure of the table rows.

        Published tables are rounded to 7 decimals, hence the tolerance.
        """
        index = {(t.m, t.n): t for t in self.terms}
        for t in self.terms:
            if (t.m, t.n) == (0, 0):
                if abs(t.B) > atol or abs(t.D) > atol:
                    raise ValueError("constant term must have zero sine part")
                continue
            mate = index.get((-t.m, -t.n))
            if mate is None:
                raise ValueError(f"missing conjugate row for ({t.m},{t.n})")
            defects = (
                abs(mate.A - t.A),
                abs(mate.B + t.B),
                abs(mate.C - t.C),
                abs(mate.D + t.D),
            )
            if max(defects) > atol:
                raise ValueError(
                    f"conjugate pairing broken at ({t.m},{t.n}): defect {max(defects):.2e}"
                )


def eval_alpha(model: FourierModel, beta, gamma):
    """Evaluate the stress-gradient surfaces at one or many (beta, gamma).

    Returns ``(alpha_z, alpha_x)`` in N/cm^3.  The sums are returned as-is:
    the underlying fit is of magnitudes, so slightly negative values near the
    fit-domain boundaries are fit noise and are left to consumers to clamp.
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    arg = 2.0 * np.multiply.outer(beta, model._m) + np.multiply.outer(gamma, model._n)
    c = np.cos(arg)
    s = np.sin(arg)
    alpha_z = c @ model._A + s @ model._B
    alpha_x = c @ model._C + s @ model._D
    if alpha_z.ndim == 0:
        return float(alpha_z), float(alpha_x)
    return alpha_z, alpha_x


def stress_at_depth(alpha: float, depth_z: float) -> float:
    """Linear lithostatic stress: ``alpha * |z|`` below the surface, 0 above.

    ``depth_z`` is signed in meters (negative below the surface); the result
    is in N/cm^2, so the depth is converted to centimeters.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if depth_z >= 0.0:
        return 0.0
    return alpha * (-depth_z * 100.0)


@dataclass(frozen=True)
class GroundParams:
    """Ground spring derived from the vertical stress gradient and foot area."""

    alpha_z_vertical: float  # N/cm^3 at beta=0, gamma=pi/2
    foot_area: float  # cm^2
    k_g: float = 0.0  # N/m, derived when omitted

    def __post_init__(self) -> None:
        derived = derive_kg(self.alpha_z_vertical, self.foot_area)
        if self.k_g == 0.0:
            object.__setattr__(self, "k_g", derived)
        elif abs(self.k_g - derived) > 1e-9 * derived:
            raise ValueError(
                f"k_g={self.k_g} inconsistent with alpha*area*100={derived}"
            )


@dataclass(frozen=True)
class PlatePose:
    """Plate attitude (attack angle), motion direction, and signed depth."""

    beta: float  # rad, attack angle in [-pi/2, pi/2]
    gamma: float  # rad, intrusion angle in [-pi, pi]
    depth_z: float = 0.0  # m, negative below the undisturbed surface

    def __post_init__(self) -> None:
        if not -math.pi / 2 - 1e-12 <= self.beta <= math.pi / 2 + 1e-12:
            raise ValueError(f"beta {self.beta} outside [-pi/2, pi/2]")
        if not -math.pi - 1e-12 <= self.gamma <= math.pi + 1e-12:
            raise ValueError(f"gamma {self.gamma} outside [-pi, pi]")


def derive_kg(alpha_z_vertical: float, foot_area: float) -> float:
    """Ground stiffness in N/m from a gradient in N/cm^3 and area in cm^2.

    The factor 100 converts the per-centimeter depth dependence to meters.
    """
    if not alpha_z_vertical > 0:
        raise ValueError(f"alpha_z_vertical must be positive, got {alpha_z_vertical}")
    if not foot_area > 0:
        raise ValueError(f"foot_area must be positive, got {foot_area}")
    return alpha_z_vertical * foot_area * 100.0


def ground_force(
    q_f: float,
    phase: Phase,
    params: GroundParams,
    holding_force: float | None = None,
) -> float:
    """One-sided ground spring force on the foot (N, positive up).

    Flight carries no force.  In yielding stance the bed acts as a linear
    spring ``-k_g * q_f`` regardless of motion direction; there is no suction
    term, so withdrawal sees the same law until the foot exits at the
    surface.  In static stance the bed supplies whatever constraint force is
    required to hold the foot, clamped to the admissible set
    ``[0, -k_g * q_f]``; pass that requirement as ``holding_force``.
    """
    if math.isnan(q_f):
        raise ValueError("q_f is NaN")
    if phase is Phase.FLIGHT:
        return 0.0
    if q_f > 1e-12:
        raise ValueError(f"stance phase with foot above surface (q_f={q_f})")
    if phase is Phase.YIELDING:
        return -params.k_g * min(q_f, 0.0)
    # static: clamp the required equilibrium force into the admissible set
    if holding_force is None:
        raise ValueError("static phase needs the required holding force")
    if math.isnan(holding_force):
        raise ValueError("holding_force is NaN")
    return float(np.clip(holding_force, 0.0, -params.k_g * min(q_f, 0.0)))


# ---------------------------------------------------------------------------
# coefficient file I/O
# ---------------------------------------------------------------------------

def _model_from_dict(payload: dict) -> FourierModel:
    terms = [
        FourierTerm(int(t["m"]), int(t["n"]), float(t["A"]), float(t["B"]),
                    float(t["C"]), float(t["D"]))
        for t in payload["terms"]
    ]
    return FourierModel(order=int(payload["order"]), terms=terms,
                        metadata=dict(payload.get("metadata", {})))


def load_model_json(path: str | Path) -> FourierModel:
    with open(path, "r", encoding="utf-8") as fh:
        return _model_from_dict(json.load(fh))


def save_model_json(model: FourierModel, path: str | Path, source: str = "") -> None:
    payload = {
        "order": model.order,
        "metadata": {
            **model.metadata,
            **({"source": source} if source else {}),
            "fit_date": model.metadata.get(
                "fit_date", _dt.date.today().isoformat()
            ),
        },
        "terms": [
            {"m": t.m, "n": t.n, "A": t.A, "B": t.B, "C": t.C, "D": t.D}
            for t in model.terms
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_coefficient_table() -> FourierModel:
    """Load the shipped second-order coefficient table (verbatim)."""
    ref = resources.files("granhop.data").joinpath("fourier_table_order2.json")
    with ref.open("r", encoding="utf-8") as fh:
        model = _model_from_dict(json.load(fh))
    model.validate_pairing()
    return model
