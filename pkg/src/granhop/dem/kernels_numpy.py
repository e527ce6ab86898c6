"""Pure-numpy fallback backend.

Same contact law, history semantics, and KDK integration as the numba
kernel, expressed with vectorized array operations.  The broadphase uses a
cKDTree instead of the hand-rolled uniform grid; pair histories live in a
sorted key array carried between steps instead of per-particle slots.
Slower than the numba path but dependency-light and easy to audit.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .kernels_numba import (
    KN_SS, GN_SS, KT_SS, GT_SS, MU_SS, KN_SW, GN_SW, KT_SW, GT_SW, MU_SW,
)

REC_COLS = 9


def _tangential_vec(xi, n_hat, vt, dt, kt, gt, mu, fn):
    """Vectorized tangential spring-dashpot with Coulomb cap.

    xi (m,3) is updated in place; returns the friction force array (m,3).
    """
    dot = np.einsum("ij,ij->i", xi, n_hat)
    xi -= dot[:, None] * n_hat
    xi += vt * dt
    ft = -kt * xi - gt * vt
    fmag = np.linalg.norm(ft, axis=1)
    cap = mu * fn
    over = fmag > np.maximum(cap, 0.0)
    if np.any(over):
        scale = np.where(fmag > 0.0, cap / np.where(fmag > 0, fmag, 1.0), 0.0)
        ft[over] *= scale[over, None]
        if kt > 0.0:
            xi[over] = -(ft[over] + gt * vt[over]) / kt
    return ft


class NumpyStepper:
    """Holds the sorted pair-history arrays between steps."""

    def __init__(self, n: int):
        self.n = n
        self.pair_keys = np.empty(0, dtype=np.int64)
        self.pair_xi = np.empty((0, 3))

    def step(
        self, pos, vel, angvel, acc, angacc,
        wl_tdisp, wl_epoch,
        radius, p_mass, p_inertia,
        domain, gravity, mat,
        plate_active, plate_center, plate_rot, plate_half, plate_vel,
        plate_dynamic, plate_mass, plate_fext_z,
        dt, step_id,
    ):
        """One KDK step; returns (plate_force (3,), max_speed, mean, rms)."""
        n = pos.shape[0]
        two_r = 2.0 * radius

        vel += 0.5 * dt * acc
        angvel += 0.5 * dt * angacc
        pos += dt * vel
        if plate_active:
            plate_center += dt * plate_vel

        frc = np.zeros((n, 3))
        frc[:, 2] = -gravity * p_mass
        trq = np.zeros((n, 3))
        plate_force = np.zeros(3)

        # --- sphere-sphere ---
        pairs = cKDTree(pos).query_pairs(two_r, output_type="ndarray")
        if len(pairs):
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
            i, j = pairs[:, 0], pairs[:, 1]
            dvec = pos[j] - pos[i]
            d = np.linalg.norm(dvec, axis=1)
            keep = (d > 0.0) & (d < two_r)
            i, j, dvec, d = i[keep], j[keep], dvec[keep], d[keep]
            n_hat = dvec / d[:, None]
            delta = two_r - d
            half = 0.5 * d
            wsum = angvel[i] + angvel[j]
            vrel = vel[i] - vel[j] + half[:, None] * np.cross(wsum, n_hat)
            vn = np.einsum("ij,ij->i", vrel, n_hat)
            fn = np.maximum(mat[KN_SS] * delta + mat[GN_SS] * vn, 0.0)
            vt = vrel - vn[:, None] * n_hat

            # carry tangential history across steps via sorted pair keys
            keys = i.astype(np.int64) * n + j
            xi = np.zeros((len(keys), 3))
            if len(self.pair_keys):
                loc = np.searchsorted(self.pair_keys, keys)
                loc = np.clip(loc, 0, len(self.pair_keys) - 1)
                hit = self.pair_keys[loc] == keys
                xi[hit] = self.pair_xi[loc[hit]]
            ft = _tangential_vec(xi, n_hat, vt, dt,
                                 mat[KT_SS], mat[GT_SS], mat[MU_SS], fn)
            self.pair_keys = keys
            self.pair_xi = xi

            f = -fn[:, None] * n_hat + ft
            np.add.at(frc, i, f)
            np.add.at(frc, j, -f)
            tq = half[:, None] * np.cross(n_hat, ft)
            np.add.at(trq, i, tq)
            np.add.at(trq, j, tq)
        else:
            self.pair_keys = np.empty(0, dtype=np.int64)
            self.pair_xi = np.empty((0, 3))

        # --- walls ---
        normals = np.array([
            [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        gaps = np.stack([
            pos[:, 0], domain[0] - pos[:, 0],
            pos[:, 1], domain[1] - pos[:, 1],
            pos[:, 2],
        ], axis=1)
        for w in range(5):
            delta = radius - gaps[:, w]
            touch = delta > 0.0
            if not np.any(touch):
                continue
            idx = np.nonzero(touch)[0]
            n_hat = np.broadcast_to(normals[w], (len(idx), 3))
            rc = -radius * n_hat
            vrel = vel[idx] + np.cross(angvel[idx], rc)
            vn = np.einsum("ij,ij->i", vrel, n_hat)
            fn = np.maximum(mat[KN_SW] * delta[idx] + mat[GN_SW] * (-vn), 0.0)
            vt = vrel - vn[:, None] * n_hat
            stale = wl_epoch[idx, w] < step_id - 1
            wl_tdisp[idx[stale], w] = 0.0
            wl_epoch[idx, w] = step_id
            xi = wl_tdisp[idx, w].copy()
            ft = _tangential_vec(xi, np.ascontiguousarray(n_hat), vt, dt,
                                 mat[KT_SW], mat[GT_SW], mat[MU_SW], fn)
            wl_tdisp[idx, w] = xi
            frc[idx] += fn[:, None] * n_hat + ft
            trq[idx] += np.cross(rc, ft)

        # --- plate (oriented box) ---
        if plate_active:
            rel = (pos - plate_center) @ plate_rot  # into plate frame
            half_ext = plate_half
            closest = np.clip(rel, -half_ext, half_ext)
            inside = np.all(np.abs(rel) < half_ext, axis=1)
            if np.any(inside):
                sub = np.nonzero(inside)[0]
                margins = half_ext - np.abs(rel[sub])
                ax = np.argmin(margins, axis=1)
                for k, (p_idx, axis) in enumerate(zip(sub, ax)):
                    closest[p_idx, axis] = np.sign(rel[p_idx, axis]) * half_ext[axis]
            q = rel - closest
            dist = np.linalg.norm(q, axis=1)
            touch = (dist < radius) & (dist > 0.0) | inside
            idx = np.nonzero(touch)[0]
            if len(idx):
                nl = np.zeros((len(idx), 3))
                delta = np.empty(len(idx))
                for k, p_idx in enumerate(idx):
                    if inside[p_idx]:
                        margins = half_ext - np.abs(rel[p_idx])
                        axis = int(np.argmin(margins))
                        nl[k, axis] = 1.0 if rel[p_idx, axis] >= 0 else -1.0
                        delta[k] = radius + margins[axis]
                    else:
                        nl[k] = q[p_idx] / dist[p_idx]
                        delta[k] = radius - dist[p_idx]
                n_hat = nl @ plate_rot.T
                cw = plate_center + closest[idx] @ plate_rot.T
                rc = cw - pos[idx]
                vrel = vel[idx] + np.cross(angvel[idx], rc) - plate_vel
                vn = np.einsum("ij,ij->i", vrel, n_hat)
                fn = np.maximum(mat[KN_SW] * delta + mat[GN_SW] * (-vn), 0.0)
                vt = vrel - vn[:, None] * n_hat
                stale = wl_epoch[idx, 5] < step_id - 1
                wl_tdisp[idx[stale], 5] = 0.0
                wl_epoch[idx, 5] = step_id
                xi = wl_tdisp[idx, 5].copy()
                ft = _tangential_vec(xi, n_hat, vt, dt,
                                     mat[KT_SW], mat[GT_SW], mat[MU_SW], fn)
                wl_tdisp[idx, 5] = xi
                f = fn[:, None] * n_hat + ft
                frc[idx] += f
                trq[idx] += np.cross(rc, ft)
                plate_force[:] = -f.sum(axis=0)

        # --- second half kick ---
        acc[:] = frc / p_mass
        angacc[:] = trq / p_inertia
        vel += 0.5 * dt * acc
        angvel += 0.5 * dt * angacc

        if plate_active and plate_dynamic:
            plate_vel[2] += dt * (plate_force[2] + plate_fext_z) / plate_mass

        speed = np.linalg.norm(vel, axis=1)
        return plate_force, float(speed.max()), float(speed.mean()), float(
            np.sqrt((speed ** 2).mean())
        )


def run_steps(
    stepper: NumpyStepper,
    pos, vel, angvel, acc, angacc,
    cp_idx, cp_tdisp, cp_epoch,  # unused here; numba slot layout
    wl_tdisp, wl_epoch,
    radius, p_mass, p_inertia,
    domain, gravity, mat,
    plate_active, plate_center, plate_rot, plate_half, plate_vel,
    plate_dynamic, plate_mass, plate_fext_z,
    dt, n_steps, step0,
    rec_every, rec_out,
    plate_force_out,
):
    """Python step loop matching the numba run_steps contract."""
    fsum = np.zeros(3)
    fcount = 0
    n_rec = 0
    status = 0
    steps_done = 0
    for istep in range(n_steps):
        step_id = step0 + istep
        pf, vmax, vmean, vrms = stepper.step(
            pos, vel, angvel, acc, angacc, wl_tdisp, wl_epoch,
            radius, p_mass, p_inertia, domain, gravity, mat,
            plate_active, plate_center, plate_rot, plate_half, plate_vel,
            plate_dynamic, plate_mass, plate_fext_z, dt, step_id,
        )
        plate_force_out[:] = pf
        fsum += pf
        fcount += 1
        steps_done += 1
        if rec_every > 0 and (istep + 1) % rec_every == 0 and n_rec < rec_out.shape[0]:
            rec_out[n_rec, 0] = float(step_id + 1)
            rec_out[n_rec, 1:4] = plate_center
            rec_out[n_rec, 4:7] = fsum / fcount
            rec_out[n_rec, 7] = vmean
            rec_out[n_rec, 8] = vrms
            n_rec += 1
            fsum[:] = 0.0
            fcount = 0
        if vmax > 100.0:
            status = 1
            break
    return status, steps_done, n_rec
