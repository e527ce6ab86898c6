"""Numba backend: the full DEM step loop runs inside one @njit function.

Monodisperse frictional spheres in an open-topped box with an optional
oriented-box intruder.  Linear spring-dashpot contacts with per-contact
tangential displacement history and a Coulomb cap; KDK velocity-Verlet
integration; uniform-grid broadphase with cell size 2r rebuilt every step.

All loops are serial and in fixed index order, so trajectories are
bit-reproducible for a given initial state on one machine.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# material parameter vector layout
KN_SS, GN_SS, KT_SS, GT_SS, MU_SS, KN_SW, GN_SW, KT_SW, GT_SW, MU_SW = range(10)

REC_COLS = 9  # step, cx, cy, cz, Fx, Fy, Fz, v_mean, v_rms


@njit(cache=True, fastmath=True, inline="always")
def _pair_tangential(xi, nx, ny, nz, vtx, vty, vtz, dt, kt, gt, mu, fn):
    """Update one tangential history vector in place; return friction force."""
    # keep the accumulated displacement in the current tangent plane
    dot = xi[0] * nx + xi[1] * ny + xi[2] * nz
    xi[0] = xi[0] - dot * nx + vtx * dt
    xi[1] = xi[1] - dot * ny + vty * dt
    xi[2] = xi[2] - dot * nz + vtz * dt
    ftx = -kt * xi[0] - gt * vtx
    fty = -kt * xi[1] - gt * vty
    ftz = -kt * xi[2] - gt * vtz
    fmag = (ftx * ftx + fty * fty + ftz * ftz) ** 0.5
    cap = mu * fn
    if fmag > cap and fmag > 0.0:
        scale = cap / fmag
        ftx *= scale
        fty *= scale
        ftz *= scale
        if kt > 0.0:
            # spring-consistent reset so the spring alone reproduces the
            # capped force next step
            xi[0] = -(ftx + gt * vtx) / kt
            xi[1] = -(fty + gt * vty) / kt
            xi[2] = -(ftz + gt * vtz) / kt
    return ftx, fty, ftz


@njit(cache=True, fastmath=True)
def run_steps(
    pos, vel, angvel, acc, angacc,
    cp_idx, cp_tdisp, cp_epoch,
    wl_tdisp, wl_epoch,
    radius, p_mass, p_inertia,
    domain, gravity, mat,
    plate_active, plate_center, plate_rot, plate_half, plate_vel,
    plate_dynamic, plate_mass, plate_fext_z,
    dt, n_steps, step0,
    rec_every, rec_out,
    plate_force_out,
):
    """Advance the world n_steps; returns (status, steps_done, n_rec).

    status 0 = ok, 1 = instability (particle speed above 100 m/s).
    ``rec_out`` must have shape (n_records, REC_COLS); plate forces in a
    record row are averaged over the recording window.  ``plate_force_out``
    receives the last step's total reaction force on the plate.
    """
    n = pos.shape[0]
    kslots = cp_idx.shape[1]
    two_r = 2.0 * radius
    two_r2 = two_r * two_r

    cell = two_r
    ncx = max(1, int(np.ceil(domain[0] / cell)))
    ncy = max(1, int(np.ceil(domain[1] / cell)))
    ncz = max(1, int(np.ceil((domain[2] + 4.0 * radius) / cell)))
    ncells = ncx * ncy * ncz

    cell_of = np.empty(n, dtype=np.int64)
    cell_start = np.empty(ncells + 1, dtype=np.int64)
    cell_fill = np.empty(ncells, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)

    frc = np.empty((n, 3))
    trq = np.empty((n, 3))

    fsum_x = 0.0
    fsum_y = 0.0
    fsum_z = 0.0
    fcount = 0
    n_rec = 0
    status = 0
    steps_done = 0

    for istep in range(n_steps):
        step_id = step0 + istep

        # --- first half kick ---
        for i in range(n):
            vel[i, 0] += 0.5 * dt * acc[i, 0]
            vel[i, 1] += 0.5 * dt * acc[i, 1]
            vel[i, 2] += 0.5 * dt * acc[i, 2]
            angvel[i, 0] += 0.5 * dt * angacc[i, 0]
            angvel[i, 1] += 0.5 * dt * angacc[i, 1]
            angvel[i, 2] += 0.5 * dt * angacc[i, 2]

        # --- drift ---
        for i in range(n):
            pos[i, 0] += dt * vel[i, 0]
            pos[i, 1] += dt * vel[i, 1]
            pos[i, 2] += dt * vel[i, 2]
        if plate_active == 1:
            plate_center[0] += dt * plate_vel[0]
            plate_center[1] += dt * plate_vel[1]
            plate_center[2] += dt * plate_vel[2]

        # --- broadphase: counting sort into uniform grid ---
        for i in range(n):
            ix = int(pos[i, 0] / cell)
            iy = int(pos[i, 1] / cell)
            iz = int(pos[i, 2] / cell)
            if ix < 0:
                ix = 0
            elif ix >= ncx:
                ix = ncx - 1
            if iy < 0:
                iy = 0
            elif iy >= ncy:
                iy = ncy - 1
            if iz < 0:
                iz = 0
            elif iz >= ncz:
                iz = ncz - 1
            cell_of[i] = (iz * ncy + iy) * ncx + ix
        cell_start[:] = 0
        for i in range(n):
            cell_start[cell_of[i] + 1] += 1
        for c in range(ncells):
            cell_start[c + 1] += cell_start[c]
        for c in range(ncells):
            cell_fill[c] = cell_start[c]
        for i in range(n):
            order[cell_fill[cell_of[i]]] = i
            cell_fill[cell_of[i]] += 1

        # --- forces ---
        for i in range(n):
            frc[i, 0] = 0.0
            frc[i, 1] = 0.0
            frc[i, 2] = -gravity * p_mass
            trq[i, 0] = 0.0
            trq[i, 1] = 0.0
            trq[i, 2] = 0.0
        pfx = 0.0
        pfy = 0.0
        pfz = 0.0

        kn = mat[KN_SS]
        gn = mat[GN_SS]
        kt = mat[KT_SS]
        gt = mat[GT_SS]
        mu = mat[MU_SS]

        for i in range(n):
            ci = cell_of[i]
            czi = ci // (ncx * ncy)
            cyi = (ci - czi * ncx * ncy) // ncx
            cxi = ci - czi * ncx * ncy - cyi * ncx
            # half stencil: the home cell (j > i) plus the 13 forward cells
            for s in range(14):
                # enumerate (dx, dy, dz): s=0 home; s=1..4 forward in z=0
                # plane; s=5..13 all nine cells of the z+1 plane
                if s == 0:
                    dx, dy, dz = 0, 0, 0
                elif s == 1:
                    dx, dy, dz = 1, 0, 0
                elif s == 2:
                    dx, dy, dz = -1, 1, 0
                elif s == 3:
                    dx, dy, dz = 0, 1, 0
                elif s == 4:
                    dx, dy, dz = 1, 1, 0
                else:
                    k = s - 5
                    dx = k % 3 - 1
                    dy = k // 3 - 1
                    dz = 1
                xx = cxi + dx
                yy = cyi + dy
                z = czi + dz
                if xx < 0 or xx >= ncx or yy < 0 or yy >= ncy or z >= ncz:
                    continue
                c = (z * ncy + yy) * ncx + xx
                home = s == 0
                for idx in range(cell_start[c], cell_start[c + 1]):
                    jj = order[idx]
                    if home and jj <= i:
                        continue
                    # the history slot lives on the smaller index, so the
                    # pair is always processed as (a, b) with a < b
                    if jj > i:
                        a = i
                        b = jj
                    else:
                        a = jj
                        b = i
                    dxv = pos[b, 0] - pos[a, 0]
                    dyv = pos[b, 1] - pos[a, 1]
                    dzv = pos[b, 2] - pos[a, 2]
                    d2 = dxv * dxv + dyv * dyv + dzv * dzv
                    if d2 >= two_r2 or d2 <= 0.0:
                        continue
                    d = d2 ** 0.5
                    nx = dxv / d
                    ny = dyv / d
                    nz = dzv / d
                    delta = two_r - d
                    half = 0.5 * d
                    # v_rel: particle-a surface relative to b surface
                    wsx = angvel[a, 0] + angvel[b, 0]
                    wsy = angvel[a, 1] + angvel[b, 1]
                    wsz = angvel[a, 2] + angvel[b, 2]
                    vrx = vel[a, 0] - vel[b, 0] + half * (wsy * nz - wsz * ny)
                    vry = vel[a, 1] - vel[b, 1] + half * (wsz * nx - wsx * nz)
                    vrz = vel[a, 2] - vel[b, 2] + half * (wsx * ny - wsy * nx)
                    vn = vrx * nx + vry * ny + vrz * nz
                    fn = kn * delta + gn * vn
                    if fn < 0.0:
                        fn = 0.0
                    vtx = vrx - vn * nx
                    vty = vry - vn * ny
                    vtz = vrz - vn * nz
                    # history slot on the lower index
                    slot = -1
                    free = -1
                    for k in range(kslots):
                        if cp_idx[a, k] == b:
                            slot = k
                            break
                        if free < 0 and cp_epoch[a, k] < step_id - 1:
                            free = k
                    if slot < 0:
                        if free < 0:
                            free = 0  # overflow: recycle; K exceeds max coordination
                        slot = free
                        cp_idx[a, slot] = b
                        cp_tdisp[a, slot, 0] = 0.0
                        cp_tdisp[a, slot, 1] = 0.0
                        cp_tdisp[a, slot, 2] = 0.0
                    elif cp_epoch[a, slot] < step_id - 1:
                        cp_tdisp[a, slot, 0] = 0.0
                        cp_tdisp[a, slot, 1] = 0.0
                        cp_tdisp[a, slot, 2] = 0.0
                    cp_epoch[a, slot] = step_id
                    ftx, fty, ftz = _pair_tangential(
                        cp_tdisp[a, slot], nx, ny, nz,
                        vtx, vty, vtz, dt, kt, gt, mu, fn
                    )
                    fx = -fn * nx + ftx
                    fy = -fn * ny + fty
                    fz = -fn * nz + ftz
                    frc[a, 0] += fx
                    frc[a, 1] += fy
                    frc[a, 2] += fz
                    frc[b, 0] -= fx
                    frc[b, 1] -= fy
                    frc[b, 2] -= fz
                    # equal tangential torque on both spheres
                    tqx = half * (ny * ftz - nz * fty)
                    tqy = half * (nz * ftx - nx * ftz)
                    tqz = half * (nx * fty - ny * ftx)
                    trq[a, 0] += tqx
                    trq[a, 1] += tqy
                    trq[a, 2] += tqz
                    trq[b, 0] += tqx
                    trq[b, 1] += tqy
                    trq[b, 2] += tqz

        # --- walls (5 planes, open top) ---
        knw = mat[KN_SW]
        gnw = mat[GN_SW]
        ktw = mat[KT_SW]
        gtw = mat[GT_SW]
        muw = mat[MU_SW]
        for i in range(n):
            for w in range(5):
                if w == 0:
                    delta = radius - pos[i, 0]
                    nx, ny, nz = 1.0, 0.0, 0.0
                elif w == 1:
                    delta = radius - (domain[0] - pos[i, 0])
                    nx, ny, nz = -1.0, 0.0, 0.0
                elif w == 2:
                    delta = radius - pos[i, 1]
                    nx, ny, nz = 0.0, 1.0, 0.0
                elif w == 3:
                    delta = radius - (domain[1] - pos[i, 1])
                    nx, ny, nz = 0.0, -1.0, 0.0
                else:
                    delta = radius - pos[i, 2]
                    nx, ny, nz = 0.0, 0.0, 1.0
                if delta <= 0.0:
                    continue
                # contact point at -r*n from the center
                rcx = -radius * nx
                rcy = -radius * ny
                rcz = -radius * nz
                vrx = vel[i, 0] + angvel[i, 1] * rcz - angvel[i, 2] * rcy
                vry = vel[i, 1] + angvel[i, 2] * rcx - angvel[i, 0] * rcz
                vrz = vel[i, 2] + angvel[i, 0] * rcy - angvel[i, 1] * rcx
                vn = vrx * nx + vry * ny + vrz * nz
                fn = knw * delta + gnw * (-vn)
                if fn < 0.0:
                    fn = 0.0
                vtx = vrx - vn * nx
                vty = vry - vn * ny
                vtz = vrz - vn * nz
                if wl_epoch[i, w] < step_id - 1:
                    wl_tdisp[i, w, 0] = 0.0
                    wl_tdisp[i, w, 1] = 0.0
                    wl_tdisp[i, w, 2] = 0.0
                wl_epoch[i, w] = step_id
                ftx, fty, ftz = _pair_tangential(
                    wl_tdisp[i, w], nx, ny, nz, vtx, vty, vtz, dt, ktw, gtw, muw, fn
                )
                frc[i, 0] += fn * nx + ftx
                frc[i, 1] += fn * ny + fty
                frc[i, 2] += fn * nz + ftz
                trq[i, 0] += rcy * ftz - rcz * fty
                trq[i, 1] += rcz * ftx - rcx * ftz
                trq[i, 2] += rcx * fty - rcy * ftx

        # --- plate intruder (oriented box) ---
        if plate_active == 1:
            hx = plate_half[0]
            hy = plate_half[1]
            hz = plate_half[2]
            bound = (hx * hx + hy * hy + hz * hz) ** 0.5 + radius
            for i in range(n):
                rx = pos[i, 0] - plate_center[0]
                ry = pos[i, 1] - plate_center[1]
                rz = pos[i, 2] - plate_center[2]
                if rx * rx + ry * ry + rz * rz > bound * bound:
                    continue
                # into plate frame (columns of plate_rot are plate axes)
                px = plate_rot[0, 0] * rx + plate_rot[1, 0] * ry + plate_rot[2, 0] * rz
                py = plate_rot[0, 1] * rx + plate_rot[1, 1] * ry + plate_rot[2, 1] * rz
                pz = plate_rot[0, 2] * rx + plate_rot[1, 2] * ry + plate_rot[2, 2] * rz
                cx = min(max(px, -hx), hx)
                cy = min(max(py, -hy), hy)
                cz = min(max(pz, -hz), hz)
                inside = (px == cx) and (py == cy) and (pz == cz)
                if inside:
                    # push out along the axis of least penetration
                    mx = hx - abs(px)
                    my = hy - abs(py)
                    mz = hz - abs(pz)
                    if mx <= my and mx <= mz:
                        nxl = 1.0 if px >= 0 else -1.0
                        nyl = 0.0
                        nzl = 0.0
                        delta = radius + mx
                        cx = nxl * hx
                    elif my <= mz:
                        nxl = 0.0
                        nyl = 1.0 if py >= 0 else -1.0
                        nzl = 0.0
                        delta = radius + my
                        cy = nyl * hy
                    else:
                        nxl = 0.0
                        nyl = 0.0
                        nzl = 1.0 if pz >= 0 else -1.0
                        delta = radius + mz
                        cz = nzl * hz
                else:
                    qx = px - cx
                    qy = py - cy
                    qz = pz - cz
                    d = (qx * qx + qy * qy + qz * qz) ** 0.5
                    if d >= radius:
                        continue
                    nxl = qx / d
                    nyl = qy / d
                    nzl = qz / d
                    delta = radius - d
                # back to world frame
                nx = plate_rot[0, 0] * nxl + plate_rot[0, 1] * nyl + plate_rot[0, 2] * nzl
                ny = plate_rot[1, 0] * nxl + plate_rot[1, 1] * nyl + plate_rot[1, 2] * nzl
                nz = plate_rot[2, 0] * nxl + plate_rot[2, 1] * nyl + plate_rot[2, 2] * nzl
                ccx = plate_center[0] + plate_rot[0, 0] * cx + plate_rot[0, 1] * cy + plate_rot[0, 2] * cz
                ccy = plate_center[1] + plate_rot[1, 0] * cx + plate_rot[1, 1] * cy + plate_rot[1, 2] * cz
                ccz = plate_center[2] + plate_rot[2, 0] * cx + plate_rot[2, 1] * cy + plate_rot[2, 2] * cz
                rcx = ccx - pos[i, 0]
                rcy = ccy - pos[i, 1]
                rcz = ccz - pos[i, 2]
                vrx = vel[i, 0] + angvel[i, 1] * rcz - angvel[i, 2] * rcy - plate_vel[0]
                vry = vel[i, 1] + angvel[i, 2] * rcx - angvel[i, 0] * rcz - plate_vel[1]
                vrz = vel[i, 2] + angvel[i, 0] * rcy - angvel[i, 1] * rcx - plate_vel[2]
                vn = vrx * nx + vry * ny + vrz * nz
                fn = knw * delta + gnw * (-vn)
                if fn < 0.0:
                    fn = 0.0
                vtx = vrx - vn * nx
                vty = vry - vn * ny
                vtz = vrz - vn * nz
                if wl_epoch[i, 5] < step_id - 1:
                    wl_tdisp[i, 5, 0] = 0.0
                    wl_tdisp[i, 5, 1] = 0.0
                    wl_tdisp[i, 5, 2] = 0.0
                wl_epoch[i, 5] = step_id
                ftx, fty, ftz = _pair_tangential(
                    wl_tdisp[i, 5], nx, ny, nz, vtx, vty, vtz, dt, ktw, gtw, muw, fn
                )
                fx = fn * nx + ftx
                fy = fn * ny + fty
                fz = fn * nz + ftz
                frc[i, 0] += fx
                frc[i, 1] += fy
                frc[i, 2] += fz
                trq[i, 0] += rcy * ftz - rcz * fty
                trq[i, 1] += rcz * ftx - rcx * ftz
                trq[i, 2] += rcx * fty - rcy * ftx
                pfx -= fx
                pfy -= fy
                pfz -= fz

        # --- second half kick ---
        vmax2 = 0.0
        vsum = 0.0
        vsq = 0.0
        for i in range(n):
            acc[i, 0] = frc[i, 0] / p_mass
            acc[i, 1] = frc[i, 1] / p_mass
            acc[i, 2] = frc[i, 2] / p_mass
            angacc[i, 0] = trq[i, 0] / p_inertia
            angacc[i, 1] = trq[i, 1] / p_inertia
            angacc[i, 2] = trq[i, 2] / p_inertia
            vel[i, 0] += 0.5 * dt * acc[i, 0]
            vel[i, 1] += 0.5 * dt * acc[i, 1]
            vel[i, 2] += 0.5 * dt * acc[i, 2]
            angvel[i, 0] += 0.5 * dt * angacc[i, 0]
            angvel[i, 1] += 0.5 * dt * angacc[i, 1]
            angvel[i, 2] += 0.5 * dt * angacc[i, 2]
            v2 = vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2
            if v2 > vmax2:
                vmax2 = v2
            vsum += v2 ** 0.5
            vsq += v2

        if plate_active == 1 and plate_dynamic == 1:
            plate_vel[2] += dt * (pfz + plate_fext_z) / plate_mass

        plate_force_out[0] = pfx
        plate_force_out[1] = pfy
        plate_force_out[2] = pfz

        fsum_x += pfx
        fsum_y += pfy
        fsum_z += pfz
        fcount += 1
        steps_done += 1

        if rec_every > 0 and (istep + 1) % rec_every == 0 and n_rec < rec_out.shape[0]:
            rec_out[n_rec, 0] = float(step_id + 1)
            rec_out[n_rec, 1] = plate_center[0]
            rec_out[n_rec, 2] = plate_center[1]
            rec_out[n_rec, 3] = plate_center[2]
            rec_out[n_rec, 4] = fsum_x / fcount
            rec_out[n_rec, 5] = fsum_y / fcount
            rec_out[n_rec, 6] = fsum_z / fcount
            rec_out[n_rec, 7] = vsum / n
            rec_out[n_rec, 8] = (vsq / n) ** 0.5
            n_rec += 1
            fsum_x = 0.0
            fsum_y = 0.0
            fsum_z = 0.0
            fcount = 0

        if vmax2 > 100.0 * 100.0:
            status = 1
            break

    return status, steps_done, n_rec
