"""Compiled inner loops shared by the forward renderer and the reverted tracer.

Everything here works on flat numpy arrays so numba can compile it. Random
numbers come from a stateless hash of ``(seed, pixel, sample, bounce, dim)``,
so the output never depends on how pixels are split across threads.
"""
import math

import numpy as np
from numba import njit, prange

INF = np.inf
T_EPS = 1e-6

# wall ids; OPEN is the missing front face
LEFT, RIGHT, BACK, FLOOR, CEILING, OPEN = 0, 1, 2, 3, 4, 5
NO_HIT, HIT_WALL, HIT_OBJECT = 0, 1, 2
OBJ_NONE, OBJ_SPHERE, OBJ_HEIGHTFIELD = 0, 1, 2

WALL_NORMALS = np.array([
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
])

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True)
def mix64(x):
    """splitmix64 finalizer."""
    x = np.uint64(x)
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


@njit(cache=True)
def hash_key(seed, a, b, c, d):
    h = mix64(np.uint64(seed) + _GOLDEN)
    h = mix64(h ^ (np.uint64(a) + _GOLDEN))
    h = mix64(h ^ (np.uint64(b) + _GOLDEN))
    h = mix64(h ^ (np.uint64(c) + _GOLDEN))
    h = mix64(h ^ (np.uint64(d) + _GOLDEN))
    return h


@njit(cache=True)
def uniform(seed, a, b, c, d):
    """Uniform double in [0, 1) keyed on five non-negative integers."""
    return float(hash_key(seed, a, b, c, d) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def onb(nx, ny, nz):
    """Orthonormal tangent pair for unit normal n (Duff et al. 2017)."""
    s = 1.0 if nz >= 0.0 else -1.0
    a = -1.0 / (s + nz)
    b = nx * ny * a
    return (1.0 + s * nx * nx * a, s * b, -s * nx), (b, s + ny * ny * a, -ny)


@njit(cache=True)
def cosine_sample(nx, ny, nz, u1, u2):
    """Cosine-weighted direction about n; u1 = 0 gives n itself."""
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    lx = r * math.cos(phi)
    ly = r * math.sin(phi)
    lz = math.sqrt(max(0.0, 1.0 - u1))
    t, b = onb(nx, ny, nz)
    dx = lx * t[0] + ly * b[0] + lz * nx
    dy = lx * t[1] + ly * b[1] + lz * ny
    dz = lx * t[2] + ly * b[2] + lz * nz
    inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
    return dx * inv, dy * inv, dz * inv, lz / math.pi


@njit(cache=True)
def box_exit(ox, oy, oz, dx, dy, dz, lo, hi):
    """Distance to the first box face in direction d, and that face's id."""
    t = INF
    face = OPEN
    if dx > 0.0:
        tx = (hi[0] - ox) / dx
        if tx < t:
            t, face = tx, RIGHT
    elif dx < 0.0:
        tx = (lo[0] - ox) / dx
        if tx < t:
            t, face = tx, LEFT
    if dy > 0.0:
        ty = (hi[1] - oy) / dy
        if ty < t:
            t, face = ty, CEILING
    elif dy < 0.0:
        ty = (lo[1] - oy) / dy
        if ty < t:
            t, face = ty, FLOOR
    if dz > 0.0:
        tz = (hi[2] - oz) / dz
        if tz < t:
            t, face = tz, OPEN
    elif dz < 0.0:
        tz = (lo[2] - oz) / dz
        if tz < t:
            t, face = tz, BACK
    return max(t, 0.0), face


@njit(cache=True)
def sphere_hit(ox, oy, oz, dx, dy, dz, sph):
    cx = ox - sph[0]
    cy = oy - sph[1]
    cz = oz - sph[2]
    b = cx * dx + cy * dy + cz * dz
    c = cx * cx + cy * cy + cz * cz - sph[3] * sph[3]
    disc = b * b - c
    if disc < 0.0:
        return INF
    s = math.sqrt(disc)
    t0 = -b - s
    if t0 > T_EPS:
        return t0
    t1 = -b + s
    # a ray leaving the surface has t1 ~ 0
    if t1 > T_EPS * max(1.0, sph[3]):
        return t1
    return INF


@njit(cache=True)
def _hf_height(hz, i, j, fx, fy):
    return ((1.0 - fx) * (1.0 - fy) * hz[i, j] + fx * (1.0 - fy) * hz[i, j + 1]
            + (1.0 - fx) * fy * hz[i + 1, j] + fx * fy * hz[i + 1, j + 1])


@njit(cache=True)
def _hf_eval(hz, cells, geom, x, y, z):
    """(inside_valid_cell, z - surface_height, i, j, fx, fy) at world point."""
    x0, y0, p = geom[0], geom[1], geom[2]
    u = (x - x0) / p
    v = (y0 - y) / p
    nr = hz.shape[0] - 1
    nc = hz.shape[1] - 1
    if u < 0.0 or v < 0.0 or u > nc or v > nr:
        return False, 0.0, 0, 0, 0.0, 0.0
    j = min(int(u), nc - 1)
    i = min(int(v), nr - 1)
    if not cells[i, j]:
        return False, 0.0, i, j, 0.0, 0.0
    fx = u - j
    fy = v - i
    return True, z - _hf_height(hz, i, j, fx, fy), i, j, fx, fy


@njit(cache=True)
def heightfield_hit(ox, oy, oz, dx, dy, dz, tmax, hz, cells, geom):
    """First crossing of the bilinear height surface along the ray, or INF.

    ``geom = (x0, y0, pitch, zmin, zmax, bias)``; points within ``bias`` below
    the surface count as above it so rays leaving the surface do not self-hit.
    """
    if hz.shape[0] < 2 or hz.shape[1] < 2:
        return INF
    x0, y0, p, zmin, zmax, bias = geom[0], geom[1], geom[2], geom[3], geom[4], geom[5]
    x1 = x0 + p * (hz.shape[1] - 1)
    y1 = y0 - p * (hz.shape[0] - 1)
    t0 = T_EPS
    t1 = tmax
    # clip to the surface's bounding slab
    for o, d, lo, hi in ((ox, dx, x0, x1), (oy, dy, y1, y0), (oz, dz, zmin - bias, zmax + bias)):
        if d == 0.0:
            if o < lo or o > hi:
                return INF
        else:
            a = (lo - o) / d
            b = (hi - o) / d
            if a > b:
                a, b = b, a
            t0 = max(t0, a)
            t1 = min(t1, b)
    if t0 >= t1:
        return INF
    dxy = max(abs(dx), abs(dy))
    step = 0.5 * p / dxy if dxy > 1e-12 else (t1 - t0)
    nsteps = int(math.ceil((t1 - t0) / step))
    nsteps = max(nsteps, 1)
    step = (t1 - t0) / nsteps
    ok, f, i, j, fx, fy = _hf_eval(hz, cells, geom, ox + t0 * dx, oy + t0 * dy, oz + t0 * dz)
    prev_below = ok and f < -bias
    prev_ok = ok
    ta = t0
    for k in range(1, nsteps + 1):
        tb = t0 + k * step
        ok, f, i, j, fx, fy = _hf_eval(hz, cells, geom, ox + tb * dx, oy + tb * dy, oz + tb * dz)
        below = ok and f < -bias
        if ok and prev_ok and below != prev_below:
            # refine the crossing of the (biased) surface
            lo_t, hi_t = ta, tb
            for _ in range(40):
                mid = 0.5 * (lo_t + hi_t)
                okm, fm, _i, _j, _fx, _fy = _hf_eval(hz, cells, geom, ox + mid * dx,
                                                     oy + mid * dy, oz + mid * dz)
                bm = okm and fm < -bias
                if bm == prev_below:
                    lo_t = mid
                else:
                    hi_t = mid
            return hi_t
        prev_below = below
        prev_ok = ok
        ta = tb
    return INF


@njit(cache=True)
def heightfield_shade(x, y, hz, cells, geom, hn, halb):
    """Interpolated unit normal and nearest-vertex albedo at world (x, y)."""
    x0, y0, p = geom[0], geom[1], geom[2]
    nr = hz.shape[0] - 1
    nc = hz.shape[1] - 1
    u = min(max((x - x0) / p, 0.0), float(nc))
    v = min(max((y0 - y) / p, 0.0), float(nr))
    j = min(int(u), nc - 1)
    i = min(int(v), nr - 1)
    fx = u - j
    fy = v - i
    n = np.zeros(3)
    for c in range(3):
        n[c] = ((1.0 - fx) * (1.0 - fy) * hn[i, j, c] + fx * (1.0 - fy) * hn[i, j + 1, c]
                + (1.0 - fx) * fy * hn[i + 1, j, c] + fx * fy * hn[i + 1, j + 1, c])
    ln = math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
    if ln > 0.0:
        n /= ln
    else:
        n[2] = 1.0
    ii = i + (1 if fy >= 0.5 else 0)
    jj = j + (1 if fx >= 0.5 else 0)
    return n[0], n[1], n[2], halb[ii, jj, 0], halb[ii, jj, 1], halb[ii, jj, 2]


@njit(cache=True)
def object_hit(ox, oy, oz, dx, dy, dz, tmax, kind, sph, hz, cells, geom):
    if kind == OBJ_SPHERE:
        return sphere_hit(ox, oy, oz, dx, dy, dz, sph)
    if kind == OBJ_HEIGHTFIELD:
        return heightfield_hit(ox, oy, oz, dx, dy, dz, tmax, hz, cells, geom)
    return INF


@njit(cache=True)
def light_visible(px, py, pz, lx, ly, lz, lo, hi, kind, sph, hz, cells, geom):
    """True when a directional light reaches p through the open face."""
    tb, face = box_exit(px, py, pz, lx, ly, lz, lo, hi)
    if face != OPEN:
        return False
    return object_hit(px, py, pz, lx, ly, lz, tb, kind, sph, hz, cells, geom) >= tb


@njit(cache=True)
def trace_scene(ox, oy, oz, dx, dy, dz, lo, hi, walls, kind, sph, sph_alb, hz, cells, geom,
                hn, halb):
    """Nearest hit: (kind, t, normal facing the ray, albedo rgb, wall id)."""
    tb, face = box_exit(ox, oy, oz, dx, dy, dz, lo, hi)
    to = object_hit(ox, oy, oz, dx, dy, dz, tb, kind, sph, hz, cells, geom)
    if to < tb:
        px = ox + to * dx
        py = oy + to * dy
        pz = oz + to * dz
        if kind == OBJ_SPHERE:
            r = sph[3]
            nx, ny, nz = (px - sph[0]) / r, (py - sph[1]) / r, (pz - sph[2]) / r
            ar, ag, ab = sph_alb[0], sph_alb[1], sph_alb[2]
        else:
            nx, ny, nz, ar, ag, ab = heightfield_shade(px, py, hz, cells, geom, hn, halb)
        if nx * dx + ny * dy + nz * dz > 0.0:
            nx, ny, nz = -nx, -ny, -nz
        return HIT_OBJECT, to, nx, ny, nz, ar, ag, ab, -1
    if face == OPEN:
        return NO_HIT, INF, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, OPEN
    return (HIT_WALL, tb, WALL_NORMALS[face, 0], WALL_NORMALS[face, 1], WALL_NORMALS[face, 2],
            walls[face, 0], walls[face, 1], walls[face, 2], face)


@njit(cache=True, parallel=True)
def render_kernel(P, N, A, pix, spp, max_bounces, seed, ldir, lint,
                  lo, hi, walls, kind, sph, sph_alb, hz, cells, geom, hn, halb):
    """Per-pixel, per-light, per-bounce radiance, shape (n, Q, max_bounces, 3).

    Slot b holds paths with b + 1 surface interactions. The direct slot uses
    one deterministic shadow test; deeper slots are averaged over ``spp``
    cosine-sampled paths with next-event estimation at every vertex.
    """
    n = P.shape[0]
    Q = ldir.shape[0]
    out = np.zeros((n, Q, max(max_bounces, 1), 3))
    if max_bounces < 1:
        return out
    inv_spp = 1.0 / spp
    for k in prange(n):
        px, py, pz = P[k, 0], P[k, 1], P[k, 2]
        nx, ny, nz = N[k, 0], N[k, 1], N[k, 2]
        for q in range(Q):
            c = ldir[q, 0] * nx + ldir[q, 1] * ny + ldir[q, 2] * nz
            if c > 0.0 and light_visible(px, py, pz, ldir[q, 0], ldir[q, 1], ldir[q, 2],
                                         lo, hi, kind, sph, hz, cells, geom):
                for ch in range(3):
                    out[k, q, 0, ch] = A[k, ch] * c * lint[q]
        if max_bounces < 2:
            continue
        acc = np.zeros((Q, max_bounces, 3))
        for s in range(spp):
            ox, oy, oz = px, py, pz
            cx, cy, cz = nx, ny, nz
            t0, t1, t2 = A[k, 0], A[k, 1], A[k, 2]
            for b in range(1, max_bounces):
                u1 = uniform(seed, pix[k], s, b, 0)
                u2 = uniform(seed, pix[k], s, b, 1)
                dx, dy, dz, _pdf = cosine_sample(cx, cy, cz, u1, u2)
                hk, t, hnx, hny, hnz, ar, ag, ab, _w = trace_scene(
                    ox, oy, oz, dx, dy, dz, lo, hi, walls, kind, sph, sph_alb,
                    hz, cells, geom, hn, halb)
                if hk == NO_HIT:
                    break
                ox, oy, oz = ox + t * dx, oy + t * dy, oz + t * dz
                for q in range(Q):
                    c = ldir[q, 0] * hnx + ldir[q, 1] * hny + ldir[q, 2] * hnz
                    if c > 0.0 and light_visible(ox, oy, oz, ldir[q, 0], ldir[q, 1], ldir[q, 2],
                                                 lo, hi, kind, sph, hz, cells, geom):
                        w = c * lint[q]
                        acc[q, b, 0] += t0 * ar * w
                        acc[q, b, 1] += t1 * ag * w
                        acc[q, b, 2] += t2 * ab * w
                t0 *= ar
                t1 *= ag
                t2 *= ab
                cx, cy, cz = hnx, hny, hnz
        for q in range(Q):
            for b in range(1, max_bounces):
                for ch in range(3):
                    out[k, q, b, ch] = acc[q, b, ch] * inv_spp
    return out


@njit(cache=True, parallel=True)
def chain_kernel(P, N, A, pix, depth, seeds, ldir, lint, lo, hi, walls, hz, cells, geom):
    """One reflected ray chain per pixel and light through ``depth`` wall hits.

    Returns values (Q, n, 3) and validity (Q, n). A chain is invalid when it
    leaves through the open face or meets the surface before its last wall.
    """
    n = P.shape[0]
    Q = ldir.shape[0]
    vals = np.zeros((Q, n, 3))
    valid = np.zeros((Q, n), dtype=np.bool_)
    for k in prange(n):
        for q in range(Q):
            ox, oy, oz = P[k, 0], P[k, 1], P[k, 2]
            cx, cy, cz = N[k, 0], N[k, 1], N[k, 2]
            t0, t1, t2 = A[k, 0], A[k, 1], A[k, 2]
            ok = True
            for hop in range(1, depth + 1):
                u1 = uniform(seeds[q], pix[k], hop, 0, 0)
                u2 = uniform(seeds[q], pix[k], hop, 1, 0)
                dx, dy, dz, _pdf = cosine_sample(cx, cy, cz, u1, u2)
                tb, face = box_exit(ox, oy, oz, dx, dy, dz, lo, hi)
                if face == OPEN:
                    ok = False
                    break
                if heightfield_hit(ox, oy, oz, dx, dy, dz, tb, hz, cells, geom) < tb:
                    ok = False
                    break
                ox, oy, oz = ox + tb * dx, oy + tb * dy, oz + tb * dz
                cx, cy, cz = WALL_NORMALS[face, 0], WALL_NORMALS[face, 1], WALL_NORMALS[face, 2]
                if hop < depth:
                    t0 *= walls[face, 0]
                    t1 *= walls[face, 1]
                    t2 *= walls[face, 2]
                else:
                    c = ldir[q, 0] * cx + ldir[q, 1] * cy + ldir[q, 2] * cz
                    if c > 0.0 and light_visible(ox, oy, oz, ldir[q, 0], ldir[q, 1], ldir[q, 2],
                                                 lo, hi, OBJ_HEIGHTFIELD, np.zeros(4), hz,
                                                 cells, geom):
                        w = c * lint[q]
                        vals[q, k, 0] = t0 * (walls[face, 0] * w)
                        vals[q, k, 1] = t1 * (walls[face, 1] * w)
                        vals[q, k, 2] = t2 * (walls[face, 2] * w)
            valid[q, k] = ok
    return vals, valid
