"""Backend selection: numba kernels by default, pure numpy via env flag.

Set ``GRANHOP_DEM_BACKEND=numpy`` (or ``numba``) to force a path.  The two
backends implement the identical contact law and integrator; they are not
bit-identical to each other (different summation orders) but each is
deterministic on its own.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FORCED = None  # test hook


def backend_name() -> str:
    if _FORCED is not None:
        return _FORCED
    env = os.environ.get("GRANHOP_DEM_BACKEND", "").strip().lower()
    if env in ("numba", "numpy"):
        return env
    if env:
        raise ValueError(f"GRANHOP_DEM_BACKEND must be 'numba' or 'numpy', got {env!r}")
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        return "numpy"


def run_steps(world, n_steps: int, record_every: int = 0):
    """Dispatch to the active backend; mutates the world in place.

    Returns (status, steps_done, records) where records is an array with
    kernels' REC_COLS columns (empty when record_every == 0).
    """
    name = backend_name()
    plate = world.intruder
    if plate is not None:
        plate_active = 1
        plate_rot = plate.rotation()
        plate_half = np.asarray(plate.dimensions, dtype=float) / 2.0
        plate_center = np.asarray(plate.center, dtype=float)
        plate_vel = np.asarray(plate.velocity, dtype=float)
        plate_dynamic = 1 if plate.dynamic_z else 0
        plate_mass = plate.mass
        plate_fext_z = plate.external_force_z
    else:
        plate_active = 0
        plate_rot = np.eye(3)
        plate_half = np.zeros(3)
        plate_center = np.zeros(3)
        plate_vel = np.zeros(3)
        plate_dynamic = 0
        plate_mass = 1.0
        plate_fext_z = 0.0

    n_rec = 0 if record_every <= 0 else n_steps // record_every
    from .kernels_numba import REC_COLS
    rec_out = np.zeros((max(n_rec, 1), REC_COLS))
    plate_force_out = np.zeros(3)

    args = (
        world.positions, world.velocities, world.angular_velocities,
        world.accelerations, world.angular_accelerations,
        world.cp_idx, world.cp_tdisp, world.cp_epoch,
        world.wl_tdisp, world.wl_epoch,
        world.radius, world.particle_mass, world.particle_inertia,
        np.asarray(world.domain, dtype=float), world.gravity,
        world.material.as_vector(),
        plate_active, plate_center, plate_rot, plate_half, plate_vel,
        plate_dynamic, plate_mass, plate_fext_z,
        world.dt, n_steps, world.step_count,
        record_every, rec_out, plate_force_out,
    )

    if name == "numba":
        from . import kernels_numba
        status, steps_done, got = kernels_numba.run_steps(*args)
    else:
        from . import kernels_numpy
        stepper = getattr(world, "_np_stepper", None)
        if stepper is None or stepper.n != world.particle_count:
            stepper = kernels_numpy.NumpyStepper(world.particle_count)
            world._np_stepper = stepper
        status, steps_done, got = kernels_numpy.run_steps(stepper, *args)

    world.step_count += steps_done
    world.time += steps_done * world.dt
    world.last_plate_force = plate_force_out
    if plate is not None:
        plate.center = plate_center
        plate.velocity = plate_vel
    return status, steps_done, rec_out[:got]
