"""DEM engine tests on small beds: contact law, conservation, determinism."""

import math

import numpy as np
import pytest

from granhop.dem import (
    DemUnstable,
    DemWorld,
    Material,
    PlateBody,
    agitate_and_settle,
    contact_force,
    load_profile,
    plate_reaction,
    run,
    spawn_bed,
    stability_dt_bound,
    step,
    surface_height,
    world_from_profile,
)
from granhop.dem import backend as be
from granhop.ground import PlatePose


def micro_bed(seed=1, fill=0.035):
    return spawn_bed((0.06, 0.06, 0.05), 0.004, 2600.0, fill, seed=seed)


def two_body_world(gap, v1, v2, material, gravity=0.0):
    """Two spheres on the x axis in a huge box, away from all walls."""
    r = 0.004
    pos = np.array([[0.5 - gap / 2 - r, 0.5, 0.5], [0.5 + gap / 2 + r, 0.5, 0.5]])
    vel = np.array([[v1, 0.0, 0.0], [v2, 0.0, 0.0]])
    acc = np.zeros((2, 3))
    acc[:, 2] = -gravity
    return DemWorld(
        radius=r, sphere_density=2600.0, positions=pos, velocities=vel,
        angular_velocities=np.zeros((2, 3)), accelerations=acc,
        angular_accelerations=np.zeros((2, 3)), domain=np.ones(3),
        material=material, dt=1e-6, gravity=gravity,
    )


# ---------------------------------------------------------------------------
# spawn_bed
# ---------------------------------------------------------------------------

def test_spawn_bed_no_overlaps():
    w = micro_bed()
    pos = w.positions
    n = len(pos)
    d2 = ((pos[None, :, :] - pos[:, None, :]) ** 2).sum(-1)
    d2[np.arange(n), np.arange(n)] = np.inf
    assert math.sqrt(d2.min()) >= 2 * w.radius


def test_spawn_bed_deterministic():
    a, b = micro_bed(seed=9), micro_bed(seed=9)
    assert np.array_equal(a.positions, b.positions)
    c = micro_bed(seed=10)
    assert not np.array_equal(a.positions, c.positions)


def test_spawn_bed_count_matches_packing_estimate():
    """Hand estimate: count within +-10 percent of phi in [0.55, 0.64]
    times bed volume over sphere volume, for the full-scale bench bed."""
    w = spawn_bed((0.40, 0.30, 0.30), 0.003, 2600.0, 0.30, seed=3)
    v_bed = 0.40 * 0.30 * 0.30
    v_sphere = 4 / 3 * math.pi * 0.003 ** 3
    lo = 0.9 * 0.55 * v_bed / v_sphere
    hi = 1.1 * 0.64 * v_bed / v_sphere
    assert lo <= w.particle_count <= hi


def test_spawn_bed_rejects_overfill():
    with pytest.raises(ValueError, match="exceeds"):
        spawn_bed((0.06, 0.06, 0.05), 0.004, 2600.0, 0.08, seed=1)


def test_spawn_bed_enforces_stability_bound():
    mat = Material()
    bound = stability_dt_bound(2600.0 * 4 / 3 * math.pi * 0.004 ** 3, mat)
    with pytest.raises(ValueError, match="stability"):
        spawn_bed((0.06, 0.06, 0.05), 0.004, 2600.0, 0.035, seed=1,
                  dt=bound * 2)
    w = spawn_bed((0.06, 0.06, 0.05), 0.004, 2600.0, 0.035, seed=1,
                  dt=bound * 2, enforce_stability=False)
    assert w.dt == bound * 2


# ---------------------------------------------------------------------------
# contact_force (scalar reference law)
# ---------------------------------------------------------------------------

def test_contact_force_no_contact():
    assert contact_force(0.0, 0.0, 0.0, 0.0, Material()) == (0.0, 0.0)


def test_contact_force_normal_spring():
    """Hand product: 1e6 N/m * 1e-5 m = 10 N."""
    mat = Material(kn_ss=1e6, gn_ss=0.0)
    fn, ft = contact_force(1e-5, 0.0, 0.0, 0.0, mat)
    assert fn == pytest.approx(10.0)


def test_contact_force_no_adhesion():
    mat = Material(kn_ss=1e5, gn_ss=100.0)
    fn, _ = contact_force(1e-6, 10.0, 0.0, 0.0, mat)  # separating fast
    assert fn == 0.0


def test_contact_force_coulomb_saturation():
    mat = Material(kn_ss=1e5, gn_ss=0.0, kt_ss=1e5, gt_ss=0.0, mu_ss=0.5)
    fn, ft = contact_force(1e-4, 0.0, 0.0, 1.0, mat)  # huge tangent history
    assert abs(ft) == pytest.approx(mat.mu_ss * fn)


def test_contact_force_matches_kernel_two_body():
    """Dual route: the scalar law against the integrated kernel force."""
    mat = Material(kn_ss=1e5, gn_ss=0.0, kt_ss=0.0, gt_ss=0.0, mu_ss=0.0)
    w = two_body_world(gap=-1e-5, v1=0.0, v2=0.0, material=mat)  # overlapping
    m = w.particle_mass
    run(w, 1)
    # after one KDK step the stored acceleration is the contact force / m
    fn_expected, _ = contact_force(1e-5, 0.0, 0.0, 0.0, mat)
    f_kernel = abs(w.accelerations[0, 0]) * m
    assert f_kernel == pytest.approx(fn_expected, rel=1e-9)


# ---------------------------------------------------------------------------
# step physics
# ---------------------------------------------------------------------------

def test_single_particle_free_fall():
    w = DemWorld(
        radius=0.004, sphere_density=2600.0,
        positions=np.array([[0.03, 0.03, 0.03]]),
        velocities=np.zeros((1, 3)),
        angular_velocities=np.zeros((1, 3)),
        accelerations=np.array([[0.0, 0.0, -9.81]]),
        angular_accelerations=np.zeros((1, 3)),
        domain=np.array([0.06, 0.06, 0.06]),
        material=Material(), dt=1e-5,
    )
    step(w, w.dt)
    assert w.velocities[0, 2] == pytest.approx(-9.81 * w.dt, rel=1e-12)


def test_step_rejects_wrong_dt():
    w = micro_bed()
    with pytest.raises(ValueError, match="dt"):
        step(w, w.dt * 2)


def test_two_body_momentum_conservation():
    """Head-on frictionless, dampingless collision conserves momentum to
    1e-10 relative."""
    mat = Material(kn_ss=1e5, gn_ss=0.0, kt_ss=0.0, gt_ss=0.0, mu_ss=0.0)
    w = two_body_world(gap=1e-4, v1=0.5, v2=-0.5, material=mat)
    m = w.particle_mass
    p0 = m * w.velocities.sum(axis=0)
    run(w, 2000)  # through the collision
    p1 = m * w.velocities.sum(axis=0)
    assert np.abs(w.velocities[0, 0] - 0.5) > 0.5  # actually bounced
    scale = m * 1.0
    assert np.abs(p1 - p0).max() < 1e-10 * scale


def test_newton_third_law_internal_sum():
    """Sum of internal contact forces vanishes: a free-floating colliding
    cluster's total force equals gravity alone."""
    rng = np.random.default_rng(4)
    r = 0.004
    base = np.array([0.5, 0.5, 0.5])
    pos = base + rng.uniform(-1.5 * r, 1.5 * r, (12, 3))
    w = DemWorld(
        radius=r, sphere_density=2600.0, positions=pos,
        velocities=rng.uniform(-0.1, 0.1, (12, 3)),
        angular_velocities=np.zeros((12, 3)),
        accelerations=np.zeros((12, 3)),
        angular_accelerations=np.zeros((12, 3)),
        domain=np.ones(3), material=Material(), dt=1e-6, gravity=9.81,
    )
    m = w.particle_mass
    for _ in range(10):
        run(w, 1)
        total = m * w.accelerations.sum(axis=0)
        gravity_total = np.array([0.0, 0.0, -9.81 * m * 12])
        force_scale = max(np.abs(m * w.accelerations).max(), 1e-9)
        assert np.abs(total - gravity_total).max() < 1e-9 * force_scale * 12


def test_settled_bed_energy_non_increasing():
    w = micro_bed()
    _, rep = agitate_and_settle(w, (0.0, 0.0), 0.25, seed=2)
    ke = [w.kinetic_energy()]
    for _ in range(10):
        run(w, 100)
        ke.append(w.kinetic_energy())
    for a, b in zip(ke, ke[1:]):
        assert b <= a * 1.05 + 1e-12


def test_no_tunneling_speed_bound():
    w = micro_bed()
    w, _ = agitate_and_settle(w, (0.40, 0.45), 0.05, seed=5)
    max_speed = np.linalg.norm(w.velocities, axis=1).max()
    assert max_speed * w.dt < w.radius / 2


def test_instability_detected():
    w = micro_bed()
    w.velocities[0] = [0.0, 0.0, -200.0]
    with pytest.raises(DemUnstable):
        run(w, 5)


# ---------------------------------------------------------------------------
# agitate_and_settle
# ---------------------------------------------------------------------------

def test_agitate_initial_speed_statistics():
    """Expectation of a 3-axis vector with per-axis magnitude U(0.40, 0.45):
    mean speed falls in [0.40 sqrt(3) * 0.9, 0.45 sqrt(3) * 1.1]."""
    w = micro_bed()
    _, rep = agitate_and_settle(w, (0.40, 0.45), 0.02, seed=6)
    assert 0.40 * math.sqrt(3) * 0.9 <= rep.mean_speed[0] <= 0.45 * math.sqrt(3) * 1.1


def test_agitate_zero_range_settles_under_gravity():
    w = micro_bed()
    before = w.positions.copy()
    _, rep = agitate_and_settle(w, (0.0, 0.0), 0.3, seed=2)
    assert rep.settled
    # lattice compacts downward only
    assert w.positions[:, 2].max() <= before[:, 2].max() + 1e-6


def test_settle_reports_unsettled_short_run():
    w = micro_bed()
    _, rep = agitate_and_settle(w, (0.40, 0.45), 0.01, seed=2)
    assert not rep.settled
    assert rep.final_mean_speed > rep.threshold


def test_settle_determinism_bit_identical():
    def make():
        w = micro_bed(seed=11)
        agitate_and_settle(w, (0.40, 0.45), 0.05, seed=12)
        run(w, 200)
        return w
    a, b = make(), make()
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.velocities, b.velocities)
    assert np.array_equal(a.angular_velocities, b.angular_velocities)


# ---------------------------------------------------------------------------
# plate
# ---------------------------------------------------------------------------

def settled_micro_with_plate(seed=21):
    w = micro_bed(seed=seed)
    agitate_and_settle(w, (0.0, 0.0), 0.25, seed=seed + 1)
    w.intruder = PlateBody(
        dimensions=np.array([0.02, 0.015, 0.005]),
        density=2700.0,
        center=np.array([0.03, 0.03, 0.2]),
    )
    return w


def test_plate_above_bed_no_force():
    w = settled_micro_with_plate()
    run(w, 5)
    fx, fz = plate_reaction(w)
    assert fx == 0.0 and fz == 0.0


def test_plate_reaction_requires_step():
    w = micro_bed()
    w.intruder = PlateBody(
        dimensions=np.array([0.02, 0.015, 0.005]), density=2700.0,
        center=np.array([0.03, 0.03, 0.2]),
    )
    with pytest.raises(RuntimeError):
        plate_reaction(w)


def test_static_plate_supports_load_at_depth():
    """Plate embedded in the bed before settling carries an upward force of
    the order of the lithostatic estimate."""
    w = micro_bed(seed=31)
    z_s = surface_height(w)
    w.intruder = PlateBody(
        dimensions=np.array([0.02, 0.015, 0.005]),
        density=2700.0,
        center=np.array([0.03, 0.03, z_s - 0.015]),
    )
    agitate_and_settle(w, (0.0, 0.0), 0.3, seed=32)
    run(w, 200)
    _, fz = plate_reaction(w)
    assert fz > 0.05  # upward support, well above noise


def test_vertical_intrusion_lateral_symmetry():
    """At beta=0 straight-down motion, |F_x| is small next to F_z."""
    w = settled_micro_with_plate(seed=41)
    z_s = surface_height(w)
    plate = w.intruder
    plate.center = np.array([0.03, 0.03, z_s + 0.004])
    plate.velocity = np.array([0.0, 0.0, -0.05])
    records = run(w, int(0.35 / w.dt), record_every=200)
    depth = z_s - records[:, 3]
    sel = depth > 0.008
    fz = records[sel, 6].mean()
    fx = abs(records[sel, 4].mean())
    assert fz > 0.0
    assert fx < 0.2 * fz


# ---------------------------------------------------------------------------
# profiles / backends
# ---------------------------------------------------------------------------

def test_profiles_load_and_build():
    for name in ("desk", "glass32", "glass30"):
        profile = load_profile(name)
        assert {"time_step", "sphere_radius_mm", "domain_cm"} <= set(profile)
    w = world_from_profile("desk", seed=1, fill_depth=0.03)
    assert w.particle_count > 500
    # stiff reference profiles exceed the stability bound and say so
    prof = load_profile("glass32")
    assert prof["enforce_stability"] is False
    w32 = world_from_profile(prof, seed=1, fill_depth=0.02)
    assert w32.dt == prof["time_step"]


def test_numpy_backend_matches_numba():
    """Short-horizon agreement; granular dynamics are chaotic, so the two
    backends' different summation orders diverge over long agitated runs."""
    def build(name):
        be._FORCED = name
        try:
            w = micro_bed(seed=17)
            run(w, 500)
        finally:
            be._FORCED = None
        return w
    a = build("numba")
    b = build("numpy")
    assert np.abs(a.positions - b.positions).max() < 1e-12
    assert np.abs(a.velocities - b.velocities).max() < 1e-10
