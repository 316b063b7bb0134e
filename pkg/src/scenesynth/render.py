"""Depth and instance-id buffers by casting one ray per pixel center against
every instance's oriented box (slab test in the box frame)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownInstance
from .geometry import CameraIntrinsics, CameraPose

_T_MIN = 1e-12


@dataclass
class RenderedView:
    view_index: int
    K: CameraIntrinsics
    E: CameraPose
    depth: np.ndarray  # (H, W) float64, +inf = background
    instance: np.ndarray  # (H, W) int32, 0 = background, else 1-based ordinal
    # per-ordinal depth as if rendered alone, index k holds ordinal k + 1
    layers: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    def solo_mask(self, ordinal: int) -> np.ndarray:
        if not 1 <= ordinal <= len(self.layers):
            raise UnknownInstance(f"ordinal {ordinal}")
        return np.isfinite(self.layers[ordinal - 1])

    def pixel_count(self, ordinal: int) -> int:
        return int(np.count_nonzero(self.instance == ordinal))


def pixel_rays(K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame ray directions through pixel centers, shape (H, W, 3), with z = 1
    so the ray parameter equals camera depth."""
    u = (np.arange(K.width) + 0.5 - K.cx) / K.fx
    v = (np.arange(K.height) + 0.5 - K.cy) / K.fy
    d = np.empty((K.height, K.width, 3))
    d[..., 0] = u[None, :]
    d[..., 1] = v[:, None]
    d[..., 2] = 1.0
    return d


def ray_obb_depth(origin: np.ndarray, dirs: np.ndarray, inst) -> np.ndarray:
    """Nearest positive ray parameter against one instance's box, +inf on a miss.
    ``origin`` (3,) and ``dirs`` (N, 3) are in world space."""
    t = inst.transform
    R = t.rotation.matrix()
    s = t.scale.as_array()
    # local q = S^-1 R^T (x - p)
    o = (R.T @ (origin - t.translation.as_array())) / s
    d = (dirs @ R) / s
    lo = (inst.obb.center.as_array() - inst.obb.half_extents.as_array())
    hi = (inst.obb.center.as_array() + inst.obb.half_extents.as_array())
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    # axis-parallel rays: inside the slab -> unbounded, outside -> empty
    par = d == 0.0
    inside = (o >= lo) & (o <= hi)
    t0 = np.where(par, np.where(inside, -np.inf, np.inf), t0)
    t1 = np.where(par, np.where(inside, np.inf, -np.inf), t1)
    tn = np.minimum(t0, t1).max(axis=1)
    tf = np.maximum(t0, t1).min(axis=1)
    hit = tn <= tf
    out = np.where(tn > _T_MIN, tn, np.where(tf > _T_MIN, tf, np.inf))
    return np.where(hit, out, np.inf)


def render_view(layout, K: CameraIntrinsics, E: CameraPose, view_index: int = 0) -> RenderedView:
    H, W = K.height, K.width
    d_cam = pixel_rays(K).reshape(-1, 3)
    Rc = E.rotation.matrix()
    eye = E.center().as_array()
    d_world = d_cam @ Rc  # R^T d for each row
    depth = np.full(H * W, np.inf)
    inst_buf = np.zeros(H * W, dtype=np.int32)
    layers = []
    for k, inst in enumerate(layout.instances):
        t = ray_obb_depth(eye, d_world, inst)
        layers.append(t.reshape(H, W))
        closer = t < depth
        depth[closer] = t[closer]
        inst_buf[closer] = k + 1
    return RenderedView(view_index, K, E, depth.reshape(H, W), inst_buf.reshape(H, W), layers)


def visible_fraction(view: RenderedView, ordinal: int) -> float:
    """Share of an instance's solo-render pixels that it still owns in the full render."""
    solo = int(np.count_nonzero(view.solo_mask(ordinal)))
    if solo == 0:
        return 0.0
    return view.pixel_count(ordinal) / solo
