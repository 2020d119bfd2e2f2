"""Hot inner loops for view evaluation, compiled with numba.

Everything here operates on dense per-round snapshots (see
``mapping.MapPair.build_snapshot``): small 3-D arrays over the region of
space that planning can currently touch.  The frustum arithmetic mirrors
``geometry.frustum_contains`` operation for operation so the compiled path
and the scalar path classify identically.

No fastmath: reassociation would break the exact agreement with the
pure-python oracle the tests demand.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_UNKNOWN = 0
_FREE = 1
_OCCUPIED = 2


@njit(cache=True, nogil=True)
def _los_clear(state, clearance, lo0, lo1, lo2, vs, px, py, pz, ti, tj, tk):
    """Walk the segment from the sensor to the center of voxel (ti,tj,tk).

    Returns True when no OCCUPIED voxel other than the target itself is
    crossed with positive measure.  Axes whose boundary is hit at the same
    parameter advance together, so corner and edge touches (zero-measure
    crossings) never block.  Indices are global; state is indexed relative
    to (lo0, lo1, lo2).

    ``clearance`` holds the per-cell Euclidean distance (grid units) to the
    nearest OCCUPIED cell center.  Any cell the segment crosses at arc
    length s past the current point has its center within s + sqrt(3) of
    the current cell center, so spans shorter than clearance - 1.8 are
    provably blocker-free and are leapt over without visiting.  The result
    is identical to the plain walk, only cheaper in open space.
    """
    # endpoint: the target voxel's center, in grid units
    x0 = px / vs
    y0 = py / vs
    z0 = pz / vs
    x1 = ti + 0.5
    y1 = tj + 0.5
    z1 = tk + 0.5
    dx = x1 - x0
    dy = y1 - y0
    dz = z1 - z0
    seg_len = np.sqrt(dx * dx + dy * dy + dz * dz)

    ci = int(np.floor(x0))
    cj = int(np.floor(y0))
    ck = int(np.floor(z0))

    big = 1e30
    if dx > 0.0:
        si = 1
        tmx = (np.floor(x0) + 1.0 - x0) / dx
        tdx = 1.0 / dx
    elif dx < 0.0:
        si = -1
        tmx = (np.floor(x0) - x0) / dx
        tdx = -1.0 / dx
    else:
        si = 0
        tmx = big
        tdx = big
    if dy > 0.0:
        sj = 1
        tmy = (np.floor(y0) + 1.0 - y0) / dy
        tdy = 1.0 / dy
    elif dy < 0.0:
        sj = -1
        tmy = (np.floor(y0) - y0) / dy
        tdy = -1.0 / dy
    else:
        sj = 0
        tmy = big
        tdy = big
    if dz > 0.0:
        sk = 1
        tmz = (np.floor(z0) + 1.0 - z0) / dz
        tdz = 1.0 / dz
    elif dz < 0.0:
        sk = -1
        tmz = (np.floor(z0) - z0) / dz
        tdz = -1.0 / dz
    else:
        sk = 0
        tmz = big
        tdz = big

    n0, n1, n2 = state.shape
    t_prev = 0.0
    max_steps = 4 * (abs(ti - ci) + abs(tj - cj) + abs(tk - ck)) + 12
    for _ in range(max_steps):
        if ci == ti and cj == tj and ck == tk:
            return True
        a = ci - lo0
        b = cj - lo1
        c = ck - lo2
        inside = 0 <= a < n0 and 0 <= b < n1 and 0 <= c < n2
        if seg_len > 0.0:
            if inside:
                safe = clearance[a, b, c] - 1.8
            else:
                # occupied cells exist only inside the stored box, so the
                # distance from here to that box bounds the clearance
                ox = float(-a) if a < 0 else float(a + 1 - n0) if a >= n0 else 0.0
                oy = float(-b) if b < 0 else float(b + 1 - n1) if b >= n1 else 0.0
                oz = float(-c) if c < 0 else float(c + 1 - n2) if c >= n2 else 0.0
                safe = np.sqrt(ox * ox + oy * oy + oz * oz) - 1.8
            if safe > 4.0:
                remaining = seg_len * (1.0 - t_prev)
                if safe >= remaining:
                    return True
                # leap to a point still strictly inside the proven-clear span
                t_prev = t_prev + safe / seg_len
                qx = x0 + t_prev * dx
                qy = y0 + t_prev * dy
                qz = z0 + t_prev * dz
                ci = int(np.floor(qx))
                cj = int(np.floor(qy))
                ck = int(np.floor(qz))
                if si > 0:
                    tmx = (ci + 1.0 - x0) / dx
                elif si < 0:
                    tmx = (ci - x0) / dx
                if sj > 0:
                    tmy = (cj + 1.0 - y0) / dy
                elif sj < 0:
                    tmy = (cj - y0) / dy
                if sk > 0:
                    tmz = (ck + 1.0 - z0) / dz
                elif sk < 0:
                    tmz = (ck - z0) / dz
                continue
        m = tmx
        if tmy < m:
            m = tmy
        if tmz < m:
            m = tmz
        if m > t_prev:
            if inside:
                if state[a, b, c] == _OCCUPIED:
                    return False
            if m >= 1.0:
                return True
        # advance every axis whose boundary sits at the same parameter
        if tmx == m:
            ci += si
            tmx += tdx
        if tmy == m:
            cj += sj
            tmy += tdy
        if tmz == m:
            ck += sk
            tmz += tdz
        t_prev = m
    return True


@njit(cache=True, nogil=True)
def _frustum_ok(dx, dy, dz, fx, fy, fz, rx, ry, rz, ux, uy, uz, tan_h, tan_v, max_range):
    """Mirror of geometry.frustum_contains on an offset vector."""
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    if dist <= 0.0 or dist > max_range:
        return False
    xf = dx * fx + dy * fy + dz * fz
    if xf <= 0.0:
        return False
    if abs(dx * rx + dy * ry + dz * rz) > xf * tan_h:
        return False
    if abs(dx * ux + dy * uy + dz * uz) > xf * tan_v:
        return False
    return True


@njit(cache=True, nogil=True)
def gain_terms(
    state,
    clearance,
    category,
    ray_count,
    occ_weight,
    d_li,
    target_centers,
    lo0,
    lo1,
    lo2,
    vs,
    px,
    py,
    pz,
    fx,
    fy,
    fz,
    rx,
    ry,
    rz,
    ux,
    uy,
    uz,
    tan_h,
    tan_v,
    max_range,
    target_cat,
    lam1,
    lam2,
    eta,
    n_exp,
):
    """Per-view gain terms over the sensing sphere around one viewpoint.

    Returns (visibility, s_unknown, s_refine, s_surround): the count of
    visible UNKNOWN voxels and the three semantic sums, all undiscounted.

    The stored arrays cover every observed cell; cells beyond them are
    UNKNOWN by construction and still count toward visibility.  Their
    distance to the nearest confirmed-target voxel is taken directly from
    ``target_centers`` (world coordinates, one row per list member) since
    the precomputed ``d_li`` field does not reach them.
    """
    n0, n1, n2 = state.shape
    # candidate cells: the axis-aligned box around the sensing sphere
    r_cells = int(np.ceil(max_range / vs)) + 1
    ci0 = int(np.floor(px / vs))
    cj0 = int(np.floor(py / vs))
    ck0 = int(np.floor(pz / vs))
    a0 = ci0 - r_cells
    b0 = ci0 + r_cells
    a1 = cj0 - r_cells
    b1 = cj0 + r_cells
    a2 = ck0 - r_cells
    b2 = ck0 + r_cells
    if abs(ux) < 1e-12 and abs(uy) < 1e-12:
        # unpitched view: accepted offsets satisfy |dz| <= dist * sin(v/2)
        zr = max_range * tan_v / np.sqrt(1.0 + tan_v * tan_v)
        za = int(np.floor((pz - zr) / vs - 0.5)) - 1
        zb = int(np.ceil((pz + zr) / vs - 0.5)) + 1
        if za > a2:
            a2 = za
        if zb < b2:
            b2 = zb

    n_tc = target_centers.shape[0]
    visibility = 0.0
    s_unknown = 0.0
    s_refine = 0.0
    s_surround = 0.0
    for gi in range(a0, b0 + 1):
        a = gi - lo0
        cx = (gi + 0.5) * vs
        dx = cx - px
        a_in = 0 <= a < n0
        for gj in range(a1, b1 + 1):
            b = gj - lo1
            cy = (gj + 0.5) * vs
            dy = cy - py
            ab_in = a_in and 0 <= b < n1
            for gk in range(a2, b2 + 1):
                c = gk - lo2
                cz = (gk + 0.5) * vs
                dz = cz - pz
                if not _frustum_ok(
                    dx, dy, dz, fx, fy, fz, rx, ry, rz, ux, uy, uz, tan_h, tan_v, max_range
                ):
                    continue
                in_box = ab_in and 0 <= c < n2
                s = state[a, b, c] if in_box else _UNKNOWN
                if s == _FREE:
                    continue  # contributes nothing whether visible or not
                if not _los_clear(state, clearance, lo0, lo1, lo2, vs, px, py, pz, gi, gj, gk):
                    continue
                if s == _UNKNOWN:
                    visibility += 1.0
                    if in_box:
                        d = d_li[a, b, c]
                    else:
                        d = np.inf
                        for t in range(n_tc):
                            tx = target_centers[t, 0] - cx
                            ty = target_centers[t, 1] - cy
                            tz = target_centers[t, 2] - cz
                            dd = np.sqrt(tx * tx + ty * ty + tz * tz)
                            if dd < d:
                                d = dd
                    if d != np.inf:
                        s_unknown += np.exp(-lam1 * d)
                else:  # OCCUPIED, always inside the stored box
                    cat = category[a, b, c]
                    if cat == target_cat:
                        diff = abs(float(ray_count[a, b, c]) - n_exp)
                        w = occ_weight[a, b, c]
                        f = (1.0 - diff / (1.0 + diff)) * (1.0 - w / (1.0 + w))
                        s_refine += eta * f
                    elif cat != 0:
                        d = d_li[a, b, c]
                        if d != np.inf:
                            s_surround += np.exp(-lam2 * d)
    return visibility, s_unknown, s_refine, s_surround


@njit(cache=True, nogil=True)
def visible_list(
    state,
    clearance,
    lo0,
    lo1,
    lo2,
    vs,
    px,
    py,
    pz,
    fx,
    fy,
    fz,
    rx,
    ry,
    rz,
    ux,
    uy,
    uz,
    tan_h,
    tan_v,
    max_range,
    out,
):
    """Enumerate visible voxels into ``out`` (n, 3); returns the count.

    A voxel is visible when its center lies in the frustum and line of
    sight from the sensor reaches it before any other OCCUPIED voxel.
    Output is ordered by ascending (i, j, k).
    """
    n0, n1, n2 = state.shape
    count = 0
    for a in range(n0):
        gi = a + lo0
        cx = (gi + 0.5) * vs
        dx = cx - px
        for b in range(n1):
            gj = b + lo1
            cy = (gj + 0.5) * vs
            dy = cy - py
            for c in range(n2):
                gk = c + lo2
                cz = (gk + 0.5) * vs
                dz = cz - pz
                if not _frustum_ok(
                    dx, dy, dz, fx, fy, fz, rx, ry, rz, ux, uy, uz, tan_h, tan_v, max_range
                ):
                    continue
                if not _los_clear(state, clearance, lo0, lo1, lo2, vs, px, py, pz, gi, gj, gk):
                    continue
                out[count, 0] = gi
                out[count, 1] = gj
                out[count, 2] = gk
                count += 1
    return count
