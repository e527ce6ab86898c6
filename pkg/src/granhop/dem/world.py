"""DEM world construction and the operations on it.

The bed is a box of identical frictional spheres, open at the top, with an
optional rigid plate intruder (kinematically driven for intrusion sweeps,
force-coupled in the vertical for the hopper foot).
"""

from __future__ import annotations

import copy as _copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..ground import PlatePose
from . import backend

__all__ = [
    "Material",
    "PlateBody",
    "DemWorld",
    "CoolingReport",
    "DemUnstable",
    "contact_force",
    "spawn_bed",
    "agitate_and_settle",
    "step",
    "run",
    "plate_reaction",
    "surface_height",
    "stability_dt_bound",
    "load_profile",
    "world_from_profile",
]

N_WALL_SLOTS = 6  # 4 side walls + floor + plate
PAIR_SLOTS = 16  # exceeds the coordination number of equal spheres
INSTABILITY_SPEED = 100.0  # m/s


class DemUnstable(RuntimeError):
    """A particle exceeded the instability speed; the run was aborted."""


@dataclass(frozen=True)
class Material:
    """Spring-dashpot contact parameters (ss = sphere-sphere, sw = sphere-wall)."""

    kn_ss: float = 1e5
    kn_sw: float = 1e5
    gn_ss: float = 2.0
    gn_sw: float = 2.0
    kt_ss: float = 1e5
    kt_sw: float = 1e5
    gt_ss: float = 1.0
    gt_sw: float = 1.0
    mu_ss: float = 0.385
    mu_sw: float = 0.385

    def __post_init__(self) -> None:
        for name in ("kn_ss", "kn_sw", "kt_ss", "kt_sw", "gn_ss", "gn_sw",
                     "gt_ss", "gt_sw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("mu_ss", "mu_sw"):
            if not 0.0 <= getattr(self, name) <= 2.0:
                raise ValueError(f"{name} outside [0, 2]")

    def as_vector(self) -> np.ndarray:
        return np.array([
            self.kn_ss, self.gn_ss, self.kt_ss, self.gt_ss, self.mu_ss,
            self.kn_sw, self.gn_sw, self.kt_sw, self.gt_sw, self.mu_sw,
        ])


@dataclass
class PlateBody:
    """Rigid box intruder: fixed attitude, prescribed or force-coupled motion."""

    dimensions: np.ndarray  # m, plate-frame (x, y, z) full extents
    density: float  # kg/m^3
    pose: PlatePose = field(default_factory=lambda: PlatePose(0.0, math.pi / 2))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dynamic_z: bool = False  # vertical force coupling (hopper foot mode)
    external_force_z: float = 0.0  # on top of particle contacts, N

    @property
    def mass(self) -> float:
        return self.density * float(np.prod(self.dimensions))

    @property
    def area_cm2(self) -> float:
        return float(self.dimensions[0] * self.dimensions[1] * 1e4)

    def rotation(self) -> np.ndarray:
        """World-from-plate rotation: attack angle about the y axis."""
        b = self.pose.beta
        c, s = math.cos(b), math.sin(b)
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])

    def lowest_point_z(self) -> float:
        r = self.rotation()
        half = self.dimensions / 2.0
        corners = np.array([
            [sx * half[0], sy * half[1], sz * half[2]]
            for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)
        ])
        return float(self.center[2] + (corners @ r.T)[:, 2].min())


@dataclass
class DemWorld:
    radius: float
    sphere_density: float
    positions: np.ndarray
    velocities: np.ndarray
    angular_velocities: np.ndarray
    accelerations: np.ndarray
    angular_accelerations: np.ndarray
    domain: np.ndarray  # box extents, m
    material: Material
    intruder: PlateBody | None = None
    time: float = 0.0
    dt: float = 1e-5
    gravity: float = 9.81
    step_count: int = 0
    seed: int = 0
    # per-contact tangential history
    cp_idx: np.ndarray = field(default=None, repr=False)
    cp_tdisp: np.ndarray = field(default=None, repr=False)
    cp_epoch: np.ndarray = field(default=None, repr=False)
    wl_tdisp: np.ndarray = field(default=None, repr=False)
    wl_epoch: np.ndarray = field(default=None, repr=False)
    last_plate_force: np.ndarray = field(default=None, repr=False)

    def __post_init__(self) -> None:
        n = len(self.positions)
        if n == 0:
            raise ValueError("world needs at least one particle")
        if self.cp_idx is None:
            self.cp_idx = np.full((n, PAIR_SLOTS), -1, dtype=np.int64)
            self.cp_tdisp = np.zeros((n, PAIR_SLOTS, 3))
            self.cp_epoch = np.full((n, PAIR_SLOTS), -10, dtype=np.int64)
            self.wl_tdisp = np.zeros((n, N_WALL_SLOTS, 3))
            self.wl_epoch = np.full((n, N_WALL_SLOTS), -10, dtype=np.int64)

    @property
    def particle_count(self) -> int:
        return len(self.positions)

    @property
    def particle_mass(self) -> float:
        return self.sphere_density * (4.0 / 3.0) * math.pi * self.radius ** 3

    @property
    def particle_inertia(self) -> float:
        return 0.4 * self.particle_mass * self.radius ** 2

    def validate(self, enforce_stability: bool = True) -> None:
        tol = 0.5 * self.radius
        p = self.positions
        inside = (
            (p[:, 0] > -tol) & (p[:, 0] < self.domain[0] + tol)
            & (p[:, 1] > -tol) & (p[:, 1] < self.domain[1] + tol)
            & (p[:, 2] > -tol)
        )
        if not np.all(inside):
            raise ValueError(f"{np.count_nonzero(~inside)} particles outside the domain")
        bound = stability_dt_bound(self.particle_mass, self.material)
        if enforce_stability and self.dt > bound:
            raise ValueError(
                f"dt={self.dt:g} exceeds the stability bound 0.2*sqrt(m/kn)={bound:g}; "
                "soften the normal stiffness, shrink dt, or construct with "
                "enforce_stability=False"
            )

    def copy(self) -> "DemWorld":
        return _copy.deepcopy(self)

    def kinetic_energy(self) -> float:
        m, inertia = self.particle_mass, self.particle_inertia
        trans = 0.5 * m * float((self.velocities ** 2).sum())
        rot = 0.5 * inertia * float((self.angular_velocities ** 2).sum())
        return trans + rot

    def mean_speed(self) -> float:
        return float(np.linalg.norm(self.velocities, axis=1).mean())


def stability_dt_bound(particle_mass: float, material: Material) -> float:
    """Explicit-integration bound 0.2 * sqrt(m / kn) for the stiffest contact."""
    kn = max(material.kn_ss, material.kn_sw)
    return 0.2 * math.sqrt(particle_mass / kn)


def contact_force(
    overlap: float,
    rel_normal_vel: float,
    rel_tangent_vel: float,
    accumulated_tangent_disp: float,
    material: Material,
    pair_kind: str = "ss",
) -> tuple[float, float]:
    """Scalar reference form of the spring-dashpot contact law.

    ``rel_normal_vel`` is the separation rate (positive when the bodies move
    apart); the normal force is floored at zero, so there is no adhesion.
    The tangential force is spring-plus-dashpot capped by Coulomb friction.
    """
    if overlap < 0:
        raise ValueError("overlap must be nonnegative")
    if pair_kind == "ss":
        kn, gn, kt, gt, mu = (material.kn_ss, material.gn_ss, material.kt_ss,
                              material.gt_ss, material.mu_ss)
    elif pair_kind == "sw":
        kn, gn, kt, gt, mu = (material.kn_sw, material.gn_sw, material.kt_sw,
                              material.gt_sw, material.mu_sw)
    else:
        raise ValueError(f"pair_kind must be 'ss' or 'sw', got {pair_kind!r}")
    if overlap == 0.0:
        return 0.0, 0.0
    f_normal = max(kn * overlap - gn * rel_normal_vel, 0.0)
    raw = kt * accumulated_tangent_disp + gt * rel_tangent_vel
    f_tangent = -math.copysign(min(abs(raw), mu * f_normal), raw)
    return f_normal, f_tangent


# ---------------------------------------------------------------------------
# bed construction
# ---------------------------------------------------------------------------

def spawn_bed(
    domain,
    radius: float,
    density: float,
    fill_depth: float,
    seed: int,
    material: Material | None = None,
    dt: float | None = None,
    gravity: float = 9.81,
    enforce_stability: bool = True,
) -> DemWorld:
    """Non-overlapping offset-layer lattice filled bottom-up to fill_depth.

    Alternate layers are shifted half a spacing in x and y; the lattice plus
    a small seeded jitter packs at roughly 0.66 solid fraction and relaxes
    to a random packing under gravity.  Deterministic for a fixed seed.
    """
    domain = np.asarray(domain, dtype=float)
    if fill_depth > domain[2] + 1e-12:
        raise ValueError(
            f"fill_depth {fill_depth} exceeds domain height {domain[2]}"
        )
    if radius * 6 > min(domain[0], domain[1]):
        raise ValueError("radius too large for the domain cross-section")
    material = material or Material()

    sxy = 2.06 * radius
    dz = 1.5 * radius
    jitter = 0.01 * radius
    margin = radius * 1.04
    rng = np.random.default_rng(seed)

    pts = []
    z = radius * 1.02
    layer = 0
    while z + radius <= fill_depth + 1e-12:
        off = 0.5 * sxy if layer % 2 else 0.0
        xs = np.arange(margin + off, domain[0] - margin + 1e-12, sxy)
        ys = np.arange(margin + off, domain[1] - margin + 1e-12, sxy)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        layer_pts = np.stack(
            [gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1
        )
        pts.append(layer_pts)
        z += dz
        layer += 1
    if not pts:
        raise ValueError("fill_depth too shallow for even one particle layer")
    positions = np.concatenate(pts)
    positions += rng.uniform(-jitter, jitter, positions.shape)
    n = len(positions)

    mass = density * (4.0 / 3.0) * math.pi * radius ** 3
    if dt is None:
        dt = stability_dt_bound(mass, material) * 0.9

    accelerations = np.zeros((n, 3))
    accelerations[:, 2] = -gravity
    world = DemWorld(
        radius=radius,
        sphere_density=density,
        positions=positions,
        velocities=np.zeros((n, 3)),
        angular_velocities=np.zeros((n, 3)),
        accelerations=accelerations,
        angular_accelerations=np.zeros((n, 3)),
        domain=domain,
        material=material,
        dt=dt,
        gravity=gravity,
        seed=seed,
    )
    world.validate(enforce_stability=enforce_stability)
    return world


def surface_height(world: DemWorld, quantile: float = 0.995) -> float:
    """Bed surface estimate: high quantile of particle tops, robust to flyers."""
    tops = world.positions[:, 2] + world.radius
    return float(np.quantile(tops, quantile))


@dataclass
class CoolingReport:
    times: np.ndarray
    mean_speed: np.ndarray
    std_speed: np.ndarray
    threshold: float
    settled: bool
    final_mean_speed: float


def run(world: DemWorld, n_steps: int, record_every: int = 0) -> np.ndarray:
    """Advance n_steps with the selected backend; returns the record rows.

    Record columns: step, plate x/y/z, window-averaged plate force x/y/z,
    mean particle speed, rms particle speed.  Raises DemUnstable on blowup.
    """
    status, steps_done, records = backend.run_steps(world, n_steps, record_every)
    if status != 0:
        raise DemUnstable(
            f"instability after {steps_done} steps at t={world.time:.6f}s "
            f"(speed > {INSTABILITY_SPEED} m/s); reduce dt or stiffness"
        )
    return records


def step(world: DemWorld, dt: float) -> DemWorld:
    """Single integration step; dt must equal the world's configured dt."""
    if abs(dt - world.dt) > 1e-18:
        raise ValueError(f"dt {dt} differs from world.dt {world.dt}")
    run(world, 1)
    return world


def agitate_and_settle(
    world: DemWorld,
    speed_range: tuple[float, float],
    settle_time: float,
    seed: int,
    threshold: float = 1e-3,
    record_every: int | None = None,
) -> tuple[DemWorld, CoolingReport]:
    """Kick every particle with random per-axis speeds, then let the bed cool.

    Per-axis speed magnitudes are uniform in ``speed_range`` with random
    signs.  A final mean speed above ``threshold`` is reported as
    settled=False, never silently ignored.
    """
    lo, hi = speed_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError("speed_range must lie within [0, 1] m/s")
    rng = np.random.default_rng(seed)
    n = world.particle_count
    speeds = rng.uniform(lo, hi, (n, 3))
    signs = rng.choice([-1.0, 1.0], (n, 3))
    world.velocities[:] = speeds * signs
    speed0 = np.linalg.norm(world.velocities, axis=1)
    t0 = world.time

    n_steps = max(1, int(round(settle_time / world.dt)))
    if record_every is None:
        record_every = max(1, n_steps // 400)
    records = run(world, n_steps, record_every=record_every)
    times = np.concatenate([[t0], records[:, 0] * world.dt])
    mean_speed = np.concatenate([[speed0.mean()], records[:, 7]])
    rms = np.concatenate([[np.sqrt((speed0 ** 2).mean())], records[:, 8]])
    # rms^2 - mean^2 = variance of the speed distribution
    var = np.maximum(rms ** 2 - mean_speed ** 2, 0.0)
    report = CoolingReport(
        times=times,
        mean_speed=mean_speed,
        std_speed=np.sqrt(var),
        threshold=threshold,
        settled=bool(world.mean_speed() < threshold),
        final_mean_speed=world.mean_speed(),
    )
    return world, report


def plate_reaction(world: DemWorld) -> tuple[float, float]:
    """Reaction force on the plate from the last step: (F_x, F_z), N.

    Positive F_z opposes downward plate motion (the bed pushes up).
    """
    if world.last_plate_force is None or world.step_count == 0:
        raise RuntimeError("plate_reaction needs at least one completed step")
    return float(world.last_plate_force[0]), float(world.last_plate_force[2])


# ---------------------------------------------------------------------------
# parameter profiles
# ---------------------------------------------------------------------------

def load_profile(name_or_path: str | Path) -> dict:
    """Load a world/material profile by shipped name or explicit path."""
    shipped = {
        "glass32": "dem_profile_glass32.json",
        "glass30": "dem_profile_glass30.json",
        "desk": "dem_profile_desk.json",
    }
    if str(name_or_path) in shipped:
        ref = resources.files("granhop.data").joinpath(shipped[str(name_or_path)])
        with ref.open("r", encoding="utf-8") as fh:
            return json.load(fh)
    with open(name_or_path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def material_from_profile(profile: dict) -> Material:
    s, d, f = profile["stiffness_n_m"], profile["damping_ns_m"], profile["friction"]
    return Material(
        kn_ss=s["normal_ss"], kn_sw=s["normal_sw"],
        kt_ss=s["tangent_ss"], kt_sw=s["tangent_sw"],
        gn_ss=d["normal_ss"], gn_sw=d["normal_sw"],
        gt_ss=d["tangent_ss"], gt_sw=d["tangent_sw"],
        mu_ss=f["static_ss"], mu_sw=f["static_sw"],
    )


def plate_from_profile(profile: dict) -> PlateBody:
    dims = np.asarray(profile["plate"]["dimensions_cm"], dtype=float) / 100.0
    return PlateBody(
        dimensions=dims,
        density=float(profile["plate"]["density_g_cm3"]) * 1000.0,
    )


def world_from_profile(
    profile: dict | str | Path,
    seed: int,
    fill_depth: float | None = None,
) -> DemWorld:
    if not isinstance(profile, dict):
        profile = load_profile(profile)
    fill = fill_depth if fill_depth is not None else profile["fill_depth_cm"] / 100.0
    return spawn_bed(
        domain=np.asarray(profile["domain_cm"], dtype=float) / 100.0,
        radius=profile["sphere_radius_mm"] / 1000.0,
        density=profile["sphere_density_g_cm3"] * 1000.0,
        fill_depth=fill,
        seed=seed,
        material=material_from_profile(profile),
        dt=profile["time_step"],
        enforce_stability=bool(profile.get("enforce_stability", True)),
    )
