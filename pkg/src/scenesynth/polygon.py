"""Small vectorized helpers for convex polygons on the ground plane.

Polygons are ``(N, 2)`` float arrays with counter-clockwise vertices.
"""
from __future__ import annotations

import numpy as np

EPS = 1e-9


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; collinear points dropped, CCW order."""
    pts = np.unique(np.round(np.asarray(points, dtype=np.float64), 12), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def contains_points(poly: np.ndarray, pts: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Boolean mask of points inside (or within ``eps`` of) a CCW convex polygon."""
    pts = np.atleast_2d(pts)
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    rel = pts[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[:, :, 1] - e[None, :, 1] * rel[:, :, 0]
    lengths = np.linalg.norm(e, axis=1)
    return np.all(cross >= -eps * lengths[None, :], axis=1)


def _axes(poly: np.ndarray) -> np.ndarray:
    e = np.roll(poly, -1, axis=0) - poly
    n = np.stack([-e[:, 1], e[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def overlap_depth(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum penetration over separating-axis candidates; ``<= 0`` means disjoint or touching."""
    depth = np.inf
    for ax in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ ax, b @ ax
        depth = min(depth, min(pa.max(), pb.max()) - max(pa.min(), pb.min()))
    return float(depth)


def overlaps(a: np.ndarray, b: np.ndarray, eps: float = EPS) -> bool:
    return overlap_depth(a, b) > eps


def _point_segment_dist(p: np.ndarray, s0: np.ndarray, s1: np.ndarray) -> np.ndarray:
    d = s1 - s0
    dd = np.sum(d * d, axis=-1)
    t = np.clip(np.sum((p - s0) * d, axis=-1) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    proj = s0 + t[..., None] * d
    return np.linalg.norm(p - proj, axis=-1)


def rects_vs_polygon(
    lo: np.ndarray, hi: np.ndarray, poly: np.ndarray, max_dist: float = np.inf
) -> tuple[np.ndarray, np.ndarray]:
    """For K axis-aligned rectangles ``[lo, hi]`` against one convex polygon return
    ``(depth, dist)``: SAT penetration depth and Euclidean distance (0 when touching
    or overlapping). Distances are exact below ``max_dist``; beyond it the returned
    value is the SAT separation, a lower bound."""
    rect = np.stack(
        [lo, np.stack([hi[:, 0], lo[:, 1]], 1), hi, np.stack([lo[:, 0], hi[:, 1]], 1)], axis=1
    )  # K,4,2
    axes = np.vstack([np.array([[1.0, 0.0], [0.0, 1.0]]), _axes(poly)])  # A,2
    pr = rect @ axes.T  # K,4,A
    pp = poly @ axes.T  # M,A
    depth = np.minimum(pr.max(1), pp.max(0)[None]) - np.maximum(pr.min(1), pp.min(0)[None])
    depth = depth.min(axis=1)
    dist = np.where(depth >= 0, 0.0, -depth)
    near = (depth < 0) & (-depth < max_dist)
    if not near.any():
        return depth, dist
    rect = rect[near]
    K = rect.shape[0]

    p0, p1 = poly, np.roll(poly, -1, axis=0)
    # rect vertices to polygon edges
    d1 = _point_segment_dist(rect[:, :, None, :], p0[None, None], p1[None, None]).reshape(K, -1).min(1)
    r0 = rect
    r1 = np.roll(rect, -1, axis=1)
    d2 = _point_segment_dist(
        poly[None, :, None, :], r0[:, None, :, :], r1[:, None, :, :]
    ).reshape(K, -1).min(1)
    dist[near] = np.minimum(d1, d2)
    return depth, dist
