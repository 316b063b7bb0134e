"""Independent reference implementations used only by the tests.

Each oracle avoids the code path it checks: shapely for ground-plane geometry,
per-triangle intersection for rendering, math.fsum for averaging.
"""
from __future__ import annotations

import math

import numpy as np
from shapely.geometry import Polygon, box
from shapely.ops import unary_union

EPS = 1e-9


# ---------------------------------------------------------------- placement

def occupied_union(grid):
    xmin, ymin = grid.extent[0], grid.extent[1]
    cs = grid.cell_size
    iy, ix = np.nonzero(grid.cells)
    cells = [box(xmin + i * cs, ymin + j * cs, xmin + (i + 1) * cs, ymin + (j + 1) * cs) for j, i in zip(iy, ix)]
    return cells


def free_region_oracle(grid, footprint, clearance):
    """Scan every lattice point ordered by distance then angle from the extent
    center; accept the first whose footprint keeps ``clearance`` from every occupied
    cell and from the grid border."""
    xmin, ymin = grid.extent[0], grid.extent[1]
    cs = grid.cell_size
    gx1, gy1 = xmin + grid.nx * cs, ymin + grid.ny * cs
    cells = occupied_union(grid)
    occ = unary_union(cells) if cells else None
    cx, cy = grid.center
    n = max(grid.nx, grid.ny) + 2
    cands = [(a * a + b * b, math.atan2(b, a) % (2 * math.pi), a, b) for a in range(-n, n + 1) for b in range(-n, n + 1)]
    cands.sort()
    for _, _, a, b in cands:
        x, y = cx + a * cs, cy + b * cs
        if not (xmin <= x <= gx1 and ymin <= y <= gy1):
            continue
        fp = Polygon(np.asarray(footprint) + (x, y))
        minx, miny, maxx, maxy = fp.bounds
        margin = min(minx - xmin, gx1 - maxx, miny - ymin, gy1 - maxy)
        if clearance > EPS:
            if margin < clearance - EPS:
                continue
            if occ is not None and fp.distance(occ) < clearance - EPS:
                continue
        else:
            if margin < -EPS:
                continue
            if occ is not None and any(fp.intersection(c).area > 1e-12 for c in cells if c.intersects(fp)):
                continue
        return (x, y)
    return None


def footprint_overlap_area(p, q) -> float:
    return Polygon(p).intersection(Polygon(q)).area


# ---------------------------------------------------------------- rendering

_FACES = [  # corner indices (bit k = axis k sign), two triangles per face
    (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
    (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
    (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),
]


def moller_trumbore(d, v0, v1, v2):
    """Ray parameters of rays from the origin along rows of ``d`` against one
    triangle; +inf on a miss."""
    e1, e2 = v1 - v0, v2 - v0
    p = np.cross(d, e2)
    det = p @ e1
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        s = -v0
        u = (p @ s) * inv
        q = np.cross(s, e1)
        v = (d @ q) * inv
        t = (e2 @ q) * inv
    ok = (np.abs(det) > 1e-14) & (u >= -1e-12) & (u <= 1 + 1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t > 1e-12)
    return np.where(ok, t, np.inf)


def brute_force_render(boxes, K, E):
    """``boxes``: list of (8, 3) world corner arrays in ordinal order. Returns
    ``(depth, instance)`` by testing all 12 triangles of every box per pixel."""
    R = E.rotation.matrix()
    H, W = K.height, K.width
    cc, rr = np.meshgrid(np.arange(W), np.arange(H))
    d = np.stack([(cc + 0.5 - K.cx) / K.fx, (rr + 0.5 - K.cy) / K.fy, np.ones_like(cc, dtype=float)], -1).reshape(-1, 3)
    depth = np.full(H * W, np.inf)
    inst = np.zeros(H * W, dtype=np.int32)
    for k, corners in enumerate(boxes):
        cam = corners @ R.T + E.translation.as_array()
        for f in _FACES:
            t = moller_trumbore(d, cam[f[0]], cam[f[1]], cam[f[2]])
            closer = t < depth
            depth[closer] = t[closer]
            inst[closer] = k + 1
    return depth.reshape(H, W), inst.reshape(H, W)


# ---------------------------------------------------------------- scores

def fsum_mean(xs) -> float:
    return math.fsum(xs) / len(xs)


# ---------------------------------------------------------------- projection

def rot_matrix_from_quat_oracle(q):
    # Rodrigues from axis-angle, independent of Rotation.matrix
    w, x, y, z = q
    angle = 2 * math.acos(max(-1.0, min(1.0, w)))
    s = math.sqrt(max(0.0, 1 - w * w))
    if s < 1e-12:
        return np.eye(3)
    k = np.array([x, y, z]) / s
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


def homogeneous_projection(K, E, p):
    """K [R|t] applied to a homogeneous point, then the perspective divide."""
    Rt = np.c_[rot_matrix_from_quat_oracle(E.rotation.as_tuple()), E.translation.as_array()]
    x = K.matrix() @ Rt @ np.r_[p, 1.0]
    return x[:2] / x[2], x[2]
