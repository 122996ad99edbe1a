"""Numba kernels for the incremental ESDF.

Arrays follow the layer layout: ``sqd[slot, l]`` squared distance in voxel
units, ``off[slot, l, :]`` integer offset from the voxel to its parent site,
``site[slot, l]`` site flag.  ``coords[slot]`` is the block index and
``nbr[slot, f]`` the face neighbour slot, f ordered -x, +x, -y, +y, -z, +z.
"""

import numpy as np
import numba as nb

from . import _hash

MAXSQ = np.int32(2**31 - 1)


# ---------------------------------------------------------------------------
# Site marking


@nb.njit(cache=True)
def _apply_block_state(obs, site, inside, sqd, off, added, s, n_obs, n_site, n_inside,
                       changed, to_update, to_clear):
    """Write freshly computed flags for block ``s``, resetting added/removed sites."""
    for l in range(512):
        if obs[s, l] != n_obs[l]:
            obs[s, l] = n_obs[l]
            changed[s] = True
        if inside[s, l] != n_inside[l]:
            inside[s, l] = n_inside[l]
            changed[s] = True
        if n_site[l] != site[s, l]:
            site[s, l] = n_site[l]
            sqd[s, l] = 0 if n_site[l] else MAXSQ
            off[s, l, 0] = 0
            off[s, l, 1] = 0
            off[s, l, 2] = 0
            changed[s] = True
            to_update[s] = True
            if n_site[l]:
                added[s, l] = True
            else:
                to_clear[s] = True


@nb.njit(cache=True)
def mark_from_tsdf(obs, site, inside, sqd, off, added, eslots, dist, wgt, sslots, site_thr,
                   changed, to_update, to_clear):
    n_obs = np.empty(512, np.uint8)
    n_site = np.empty(512, np.uint8)
    n_inside = np.empty(512, np.uint8)
    for b in range(eslots.shape[0]):
        t = sslots[b]
        for l in range(512):
            d = dist[t, l]
            o = wgt[t, l] > 0.0
            si = o and abs(d) <= site_thr
            n_obs[l] = o
            n_site[l] = si
            n_inside[l] = o and not si and d < 0.0
        _apply_block_state(obs, site, inside, sqd, off, added, eslots[b], n_obs, n_site, n_inside,
                           changed, to_update, to_clear)


@nb.njit(cache=True)
def mark_from_occupancy(obs, site, inside, sqd, off, added, eslots, lo, sslots, snbr, thr,
                        changed, to_update, to_clear):
    """Sites are occupied voxels with a free face neighbour; log-odds 0 means unknown."""
    n_obs = np.empty(512, np.uint8)
    n_site = np.empty(512, np.uint8)
    n_inside = np.empty(512, np.uint8)
    for b in range(eslots.shape[0]):
        t = sslots[b]
        for l in range(512):
            v = lo[t, l]
            occupied = v != 0.0 and v > thr
            si = False
            if occupied:
                x = l & 7
                y = (l >> 3) & 7
                z = l >> 6
                for f in range(6):
                    axis = f >> 1
                    step = -1 if (f & 1) == 0 else 1
                    c = x if axis == 0 else (y if axis == 1 else z)
                    stride = 1 << (3 * axis)
                    if 0 <= c + step < 8:
                        nv = lo[t, l + step * stride]
                    else:
                        nt = snbr[b, f]
                        if nt < 0:
                            continue
                        nv = lo[nt, l - 7 * step * stride]
                    if nv != 0.0 and not nv > thr:
                        si = True
                        break
            n_obs[l] = v != 0.0
            n_site[l] = si
            n_inside[l] = occupied and not si
        _apply_block_state(obs, site, inside, sqd, off, added, eslots[b], n_obs, n_site, n_inside,
                           changed, to_update, to_clear)


# ---------------------------------------------------------------------------
# Region helpers


@nb.njit(cache=True)
def near_blocks(coords, n, center_mask, radius):
    """Mask of slots within Chebyshev ``radius`` of any slot flagged in center_mask."""
    centers = np.nonzero(center_mask[:n])[0]
    out = np.zeros(n, np.bool_)
    for s in range(n):
        for c in centers:
            if (abs(coords[s, 0] - coords[c, 0]) <= radius and abs(coords[s, 1] - coords[c, 1]) <= radius
                    and abs(coords[s, 2] - coords[c, 2]) <= radius):
                out[s] = True
                break
    return out


# ---------------------------------------------------------------------------
# Invalidation


@nb.njit(cache=True)
def clear_children(sqd, off, site, coords, targets, keys, vals, cleared):
    """Reset voxels whose stored parent is no longer a site."""
    for s in targets:
        bx = coords[s, 0] * 8
        by = coords[s, 1] * 8
        bz = coords[s, 2] * 8
        for l in range(512):
            d = sqd[s, l]
            if d == MAXSQ or site[s, l]:
                continue
            px = bx + (l & 7) + off[s, l, 0]
            py = by + ((l >> 3) & 7) + off[s, l, 1]
            pz = bz + (l >> 6) + off[s, l, 2]
            ok = False
            ps = _hash.lookup(keys, vals, _hash.pack(px >> 3, py >> 3, pz >> 3))
            if ps >= 0:
                ok = site[ps, (px & 7) + 8 * (py & 7) + 64 * (pz & 7)] != 0
            if not ok:
                sqd[s, l] = MAXSQ
                off[s, l, 0] = 0
                off[s, l, 1] = 0
                off[s, l, 2] = 0
                cleared[s] = True


# ---------------------------------------------------------------------------
# Lowering


@nb.njit(cache=True, inline="always")
def _try_adopt(sqd, off, s, l, ns, nl, sx, sy, sz, max_sq):
    """Voxel (s, l) considers the parent of its neighbour (ns, nl) = voxel + step."""
    if sqd[ns, nl] == MAXSQ:
        return False
    ox = off[ns, nl, 0] + sx
    oy = off[ns, nl, 1] + sy
    oz = off[ns, nl, 2] + sz
    d = ox * ox + oy * oy + oz * oz
    if d < sqd[s, l] and d <= max_sq:
        sqd[s, l] = d
        off[s, l, 0] = ox
        off[s, l, 1] = oy
        off[s, l, 2] = oz
        return True
    return False


@nb.njit(cache=True)
def sweep_block(sqd, off, s, max_sq):
    """Six sequential directional passes inside one block: X+, X-, Y+, Y-, Z+, Z-."""
    ch = False
    for axis in range(3):
        stride = 1 << (3 * axis)
        for sign in (1, -1):
            for a in range(8):
                for b in range(8):
                    if axis == 0:
                        base = 8 * a + 64 * b
                    elif axis == 1:
                        base = a + 64 * b
                    else:
                        base = a + 8 * b
                    for k in range(1, 8):
                        c = k if sign == 1 else 7 - k
                        l = base + c * stride
                        nl = l - sign * stride
                        st = -sign
                        if axis == 0:
                            r = _try_adopt(sqd, off, s, l, s, nl, st, 0, 0, max_sq)
                        elif axis == 1:
                            r = _try_adopt(sqd, off, s, l, s, nl, 0, st, 0, max_sq)
                        else:
                            r = _try_adopt(sqd, off, s, l, s, nl, 0, 0, st, max_sq)
                        ch |= r
    return ch


@nb.njit(cache=True)
def exchange_face(sqd, off, s, t, axis, max_sq, lowered):
    """Exchange parents across the shared face of s and its +axis neighbour t."""
    stride = 1 << (3 * axis)
    for a in range(8):
        for b in range(8):
            if axis == 0:
                base = 8 * a + 64 * b
            elif axis == 1:
                base = a + 64 * b
            else:
                base = a + 8 * b
            ls = base + 7 * stride
            lt = base
            if axis == 0:
                if _try_adopt(sqd, off, s, ls, t, lt, 1, 0, 0, max_sq):
                    lowered[s] = True
                if _try_adopt(sqd, off, t, lt, s, ls, -1, 0, 0, max_sq):
                    lowered[t] = True
            elif axis == 1:
                if _try_adopt(sqd, off, s, ls, t, lt, 0, 1, 0, max_sq):
                    lowered[s] = True
                if _try_adopt(sqd, off, t, lt, s, ls, 0, -1, 0, max_sq):
                    lowered[t] = True
            else:
                if _try_adopt(sqd, off, s, ls, t, lt, 0, 0, 1, max_sq):
                    lowered[s] = True
                if _try_adopt(sqd, off, t, lt, s, ls, 0, 0, -1, max_sq):
                    lowered[t] = True


@nb.njit(cache=True)
def sweep_blocks(sqd, off, dirty, max_sq, changed):
    """Sweep dirty blocks; returns the mask of blocks in which a voxel lowered."""
    swept = np.zeros(dirty.shape[0], np.bool_)
    for s in range(dirty.shape[0]):
        if dirty[s] and sweep_block(sqd, off, s, max_sq):
            swept[s] = True
            changed[s] = True
    return swept


@nb.njit(cache=True)
def exchange_borders(sqd, off, nbr, dirty, max_sq):
    """Border phase: one direction group at a time; pairs within a group are disjoint."""
    n = dirty.shape[0]
    lowered = np.zeros(n, np.bool_)
    for axis in range(3):
        for s in range(n):
            t = nbr[s, 2 * axis + 1]
            if t >= 0 and (dirty[s] or dirty[t]):
                exchange_face(sqd, off, s, t, axis, max_sq, lowered)
    return lowered


@nb.njit(cache=True)
def lower(sqd, off, nbr, dirty0, max_sq, changed):
    """Alternate in-block sweeps and border exchange until nothing lowers.

    Returns the number of outer iterations.
    """
    dirty = dirty0.copy()
    it = 0
    while dirty.any():
        it += 1
        swept = sweep_blocks(sqd, off, dirty, max_sq, changed)
        dirty = exchange_borders(sqd, off, nbr, dirty, max_sq)
        for s in range(dirty.shape[0]):
            if dirty[s]:
                changed[s] = True
            # one pass of six sweeps is not idempotent, so a block that lowered is swept again
            dirty[s] |= swept[s]
    return it


# ---------------------------------------------------------------------------
# Exact refinement


@nb.njit(cache=True)
def build_site_index(mask, coords, slots):
    """CSR list of site voxels per bucket plus per-bucket bounding boxes (global voxel units).

    Each block is split into eight 4x4x4 buckets so the bounding boxes stay
    tight; empty buckets are dropped.
    """
    nb_ = slots.shape[0]
    count = np.zeros(nb_ * 8, np.int64)
    for i in range(nb_):
        s = slots[i]
        for l in range(512):
            if mask[s, l]:
                q = ((l >> 2) & 1) | (((l >> 5) & 1) << 1) | (((l >> 8) & 1) << 2)
                count[i * 8 + q] += 1
    nbk = 0
    for b in range(nb_ * 8):
        if count[b] > 0:
            nbk += 1
    start = np.zeros(nbk + 1, np.int64)
    bucket = np.full(nb_ * 8, -1, np.int64)
    k = 0
    for b in range(nb_ * 8):
        if count[b] > 0:
            bucket[b] = k
            start[k + 1] = start[k] + count[b]
            k += 1
    pts = np.empty((start[nbk], 3), np.int64)
    fill = start[:nbk].copy()
    lo = np.full((nbk, 3), 1 << 40, np.int64)
    hi = np.full((nbk, 3), -(1 << 40), np.int64)
    for i in range(nb_):
        s = slots[i]
        for l in range(512):
            if mask[s, l]:
                q = ((l >> 2) & 1) | (((l >> 5) & 1) << 1) | (((l >> 8) & 1) << 2)
                c = bucket[i * 8 + q]
                x = coords[s, 0] * 8 + (l & 7)
                y = coords[s, 1] * 8 + ((l >> 3) & 7)
                z = coords[s, 2] * 8 + (l >> 6)
                k = fill[c]
                pts[k, 0] = x
                pts[k, 1] = y
                pts[k, 2] = z
                fill[c] = k + 1
                lo[c, 0] = min(lo[c, 0], x)
                lo[c, 1] = min(lo[c, 1], y)
                lo[c, 2] = min(lo[c, 2], z)
                hi[c, 0] = max(hi[c, 0], x)
                hi[c, 1] = max(hi[c, 1], y)
                hi[c, 2] = max(hi[c, 2], z)
    return start, pts, lo, hi


@nb.njit(cache=True)
def _box_d2(lo, hi, s, x0, x1, y0, y1, z0, z1):
    """Squared gap between site bucket ``s``'s bounding box and a voxel box."""
    g = max(lo[s, 0] - x1, 0, x0 - hi[s, 0])
    d = g * g
    g = max(lo[s, 1] - y1, 0, y0 - hi[s, 1])
    d += g * g
    g = max(lo[s, 2] - z1, 0, z0 - hi[s, 2])
    return d + g * g


@nb.njit(cache=True)
def refine_exact(sqd, off, coords, targets, max_sq, start, pts, lo, hi, changed):
    """Replace each target voxel's parent by the exact nearest indexed site.

    The stored parent is used as the initial bound, so the result is the
    minimum of the stored key and every indexed site under the key order
    (squared distance, parent x, parent y, parent z).  Sites beyond ``max_sq``
    are ignored.  Work is organised per 4x4x4 sub-cube with candidate site
    buckets sorted by bounding-box distance for early exit.
    """
    nsb = start.shape[0] - 1
    cand = np.empty(nsb, np.int64)
    sub = np.empty(nsb, np.int64)
    subd = np.empty(nsb, np.int64)
    for t in targets:
        bx0 = coords[t, 0] * 8
        by0 = coords[t, 1] * 8
        bz0 = coords[t, 2] * 8
        dmax = 0
        for l in range(512):
            d = sqd[t, l]
            if d > max_sq:
                d = max_sq
            if d > dmax:
                dmax = d
        if dmax == 0:
            continue
        nc = 0
        for s in range(nsb):
            if _box_d2(lo, hi, s, bx0, bx0 + 7, by0, by0 + 7, bz0, bz0 + 7) <= dmax:
                cand[nc] = s
                nc += 1
        if nc == 0:
            continue
        for q in range(8):
            qx = (q & 1) * 4
            qy = ((q >> 1) & 1) * 4
            qz = (q >> 2) * 4
            smax = 0
            for k in range(4):
                for j in range(4):
                    for i in range(4):
                        d = sqd[t, (qx + i) + 8 * (qy + j) + 64 * (qz + k)]
                        if d > max_sq:
                            d = max_sq
                        if d > smax:
                            smax = d
            if smax == 0:
                continue
            x0 = bx0 + qx
            y0 = by0 + qy
            z0 = bz0 + qz
            ns = 0
            for i in range(nc):
                s = cand[i]
                bd = _box_d2(lo, hi, s, x0, x0 + 3, y0, y0 + 3, z0, z0 + 3)
                if bd <= smax:
                    j = ns
                    while j > 0 and subd[j - 1] > bd:
                        sub[j] = sub[j - 1]
                        subd[j] = subd[j - 1]
                        j -= 1
                    sub[j] = s
                    subd[j] = bd
                    ns += 1
            if ns == 0:
                continue
            for k in range(4):
                for j in range(4):
                    for i in range(4):
                        l = (qx + i) + 8 * (qy + j) + 64 * (qz + k)
                        cur = sqd[t, l]
                        if cur == 0:
                            continue
                        vx = x0 + i
                        vy = y0 + j
                        vz = z0 + k
                        found = cur <= max_sq
                        best = np.int64(cur) if found else np.int64(max_sq)
                        bpx = vx + off[t, l, 0]
                        bpy = vy + off[t, l, 1]
                        bpz = vz + off[t, l, 2]
                        for u in range(ns):
                            if subd[u] > best:
                                break
                            s = sub[u]
                            g = max(lo[s, 0] - vx, 0, vx - hi[s, 0])
                            bd = g * g
                            g = max(lo[s, 1] - vy, 0, vy - hi[s, 1])
                            bd += g * g
                            g = max(lo[s, 2] - vz, 0, vz - hi[s, 2])
                            bd += g * g
                            if bd > best:
                                continue
                            for m in range(start[s], start[s + 1]):
                                px = pts[m, 0]
                                py = pts[m, 1]
                                pz = pts[m, 2]
                                d = (px - vx) * (px - vx) + (py - vy) * (py - vy) + (pz - vz) * (pz - vz)
                                if d > best:
                                    continue
                                if (d < best or not found or px < bpx
                                        or (px == bpx and (py < bpy or (py == bpy and pz < bpz)))):
                                    best = d
                                    bpx = px
                                    bpy = py
                                    bpz = pz
                                    found = True
                        if found:
                            ox = bpx - vx
                            oy = bpy - vy
                            oz = bpz - vz
                            if best != cur or ox != off[t, l, 0] or oy != off[t, l, 1] or oz != off[t, l, 2]:
                                sqd[t, l] = best
                                off[t, l, 0] = ox
                                off[t, l, 1] = oy
                                off[t, l, 2] = oz
                                changed[t] = True
