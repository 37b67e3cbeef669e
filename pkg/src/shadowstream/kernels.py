"""Numba-compiled ray tracing kernels.

Everything here is deliberately serial and IEEE-strict (no fastmath, no
parallel reductions) so results are bit-identical across runs and across
the client, server and reference pipelines, which all share these entry
points. Geometry is float64; the pixel-to-camera-plane expression matches
``camera.primary_ray`` exactly.
"""

from __future__ import annotations

import numpy as np
from numba import njit

RAY_EPS = 1e-4  # self-intersection guard, world units (scenes are meter-scale)

_STACK = 128  # traversal stack; median-split depth is O(log2 triangles)


@njit(cache=True)
def _hit_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2, t_min, t_max):
    """Moller-Trumbore, no backface culling. Returns (t, u, v); t < 0 on miss."""
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if -1e-14 < det < 1e-14:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[0]
    sy = oy - v0[1]
    sz = oz - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
    if t <= t_min or t > t_max:
        return -1.0, 0.0, 0.0
    return t, u, v


@njit(cache=True)
def _slab_hit(ox, oy, oz, dx, dy, dz, bmin, bmax, t_max):
    """Ray/AABB overlap on (0, t_max]. Parallel axes handled explicitly."""
    t0 = 0.0
    t1 = t_max
    for a in range(3):
        if a == 0:
            o, d = ox, dx
        elif a == 1:
            o, d = oy, dy
        else:
            o, d = oz, dz
        if d > 1e-300 or d < -1e-300:
            inv = 1.0 / d
            ta = (bmin[a] - o) * inv
            tb = (bmax[a] - o) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
        else:
            if o < bmin[a] or o > bmax[a]:
                return False
    return True


@njit(cache=True)
def bvh_nearest(ox, oy, oz, dx, dy, dz, t_min, t_max,
                node_min, node_max, link, count, v0, e1, e2):
    """Nearest hit along a ray. Returns (t, slot, u, v); slot is the index
    into the BVH's permuted triangle order, -1 on miss."""
    best_t = t_max
    best_slot = -1
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(_STACK, dtype=np.int32)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        ni = stack[top]
        if not _slab_hit(ox, oy, oz, dx, dy, dz, node_min[ni], node_max[ni], best_t):
            continue
        c = count[ni]
        if c < 0:
            stack[top] = ni + 1
            top += 1
            stack[top] = link[ni]
            top += 1
        else:
            first = link[ni]
            for s in range(first, first + c):
                t, u, v = _hit_triangle(ox, oy, oz, dx, dy, dz,
                                        v0[s], e1[s], e2[s], t_min, best_t)
                if t > 0.0:
                    best_t = t
                    best_slot = s
                    best_u = u
                    best_v = v
    if best_slot < 0:
        return -1.0, -1, 0.0, 0.0
    return best_t, best_slot, best_u, best_v


@njit(cache=True)
def bvh_any_hit(ox, oy, oz, dx, dy, dz, t_min, t_max,
                node_min, node_max, link, count, v0, e1, e2):
    """True if any triangle intersects the ray with t in (t_min, t_max]."""
    stack = np.empty(_STACK, dtype=np.int32)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        ni = stack[top]
        if not _slab_hit(ox, oy, oz, dx, dy, dz, node_min[ni], node_max[ni], t_max):
            continue
        c = count[ni]
        if c < 0:
            stack[top] = ni + 1
            top += 1
            stack[top] = link[ni]
            top += 1
        else:
            first = link[ni]
            for s in range(first, first + c):
                t, u, v = _hit_triangle(ox, oy, oz, dx, dy, dz,
                                        v0[s], e1[s], e2[s], t_min, t_max)
                if t > 0.0:
                    return True
    return False


@njit(cache=True)
def segment_occluded(ax, ay, az, bx, by, bz, eps,
                     node_min, node_max, link, count, v0, e1, e2):
    """Any-hit test on the open segment (a + eps*d, b - eps*d)."""
    dx = bx - ax
    dy = by - ay
    dz = bz - az
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    if dist <= 2.0 * eps:
        return False
    dx /= dist
    dy /= dist
    dz /= dist
    return bvh_any_hit(ax, ay, az, dx, dy, dz, eps, dist - eps,
                       node_min, node_max, link, count, v0, e1, e2)


@njit(cache=True)
def trace_grid(buf_w, buf_h, disp_w, disp_h, tan_x, tan_y,
               cam_pos, x_axis, y_axis, z_axis, t_max,
               node_min, node_max, link, count,
               v0, e1, e2, n0, n1, n2, albedo):
    """Primary-visibility raycast over a pixel grid through pixel centers.

    Returns (world_pos, normal, alb, slot, valid); ``slot`` indexes the
    permuted triangle order. The camera-plane expression is the same as
    camera.primary_ray, so a display-size grid and the central region of a
    guard-enlarged grid produce bitwise-identical rays.
    """
    wp = np.zeros((buf_h, buf_w, 3), dtype=np.float64)
    nrm = np.zeros((buf_h, buf_w, 3), dtype=np.float64)
    alb = np.zeros((buf_h, buf_w, 3), dtype=np.float64)
    slot = np.full((buf_h, buf_w), -1, dtype=np.int64)
    valid = np.zeros((buf_h, buf_w), dtype=np.bool_)

    ox, oy, oz = cam_pos[0], cam_pos[1], cam_pos[2]
    for j in range(buf_h):
        py = j + 0.5
        cy = (buf_h - 2.0 * py) * tan_y / disp_h
        for i in range(buf_w):
            px = i + 0.5
            cx = (2.0 * px - buf_w) * tan_x / disp_w
            dx = cx * x_axis[0] + cy * y_axis[0] - z_axis[0]
            dy = cx * x_axis[1] + cy * y_axis[1] - z_axis[1]
            dz = cx * x_axis[2] + cy * y_axis[2] - z_axis[2]
            inv_len = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= inv_len
            dy *= inv_len
            dz *= inv_len
            t, s, u, v = bvh_nearest(ox, oy, oz, dx, dy, dz, RAY_EPS, t_max,
                                     node_min, node_max, link, count, v0, e1, e2)
            if s >= 0:
                wp[j, i, 0] = ox + t * dx
                wp[j, i, 1] = oy + t * dy
                wp[j, i, 2] = oz + t * dz
                w0 = 1.0 - u - v
                gx = w0 * n0[s, 0] + u * n1[s, 0] + v * n2[s, 0]
                gy = w0 * n0[s, 1] + u * n1[s, 1] + v * n2[s, 1]
                gz = w0 * n0[s, 2] + u * n1[s, 2] + v * n2[s, 2]
                ginv = 1.0 / np.sqrt(gx * gx + gy * gy + gz * gz)
                nrm[j, i, 0] = gx * ginv
                nrm[j, i, 1] = gy * ginv
                nrm[j, i, 2] = gz * ginv
                alb[j, i, 0] = albedo[s, 0]
                alb[j, i, 1] = albedo[s, 1]
                alb[j, i, 2] = albedo[s, 2]
                slot[j, i] = s
                valid[j, i] = True
    return wp, nrm, alb, slot, valid


@njit(cache=True)
def shadow_bits_grid(wp, valid, light_pos, num_lights, words, miss_mask,
                     node_min, node_max, link, count, v0, e1, e2):
    """Per-pixel packed light-visibility words for an already-traced grid.

    Hit pixels get bit i set iff the segment to light i is unobstructed.
    Miss pixels get ``miss_mask`` (all lights visible) so a stray read
    fails toward fully lit.
    """
    h, w = valid.shape
    data = np.zeros((h, w, words), dtype=np.uint32)
    for j in range(h):
        for i in range(w):
            if not valid[j, i]:
                for k in range(words):
                    data[j, i, k] = miss_mask[k]
                continue
            ax = wp[j, i, 0]
            ay = wp[j, i, 1]
            az = wp[j, i, 2]
            for li in range(num_lights):
                blocked = segment_occluded(
                    ax, ay, az,
                    light_pos[li, 0], light_pos[li, 1], light_pos[li, 2],
                    RAY_EPS, node_min, node_max, link, count, v0, e1, e2)
                if not blocked:
                    data[j, i, li // 32] |= np.uint32(1) << np.uint32(li % 32)
    return data
