"""Scene layout: object instances, ground-plane occupancy grid and the
placement operations (instructed placement, free-region search, insertion).

Instances are positioned by their bottom-center point: an instance's
``transform.translation`` is where the bottom-center of its box lands.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from . import polygon
from .assets import AssetRecord, SpatialConstraint
from .errors import BehindCamera, FullyBehindCamera, NoFreeRegion, OutOfExtent, UnknownInstance
from .geometry import (
    BEHIND_EPS,
    CameraIntrinsics,
    CameraPose,
    Obb,
    Rotation,
    Transform,
    Vec3,
    compose_transform,
    obb_world_corners_array,
    project,
    project_array,
)

DEFAULT_CELL = 0.05
DEFAULT_EXTENT = (-3.0, -3.0, 3.0, 3.0)
DEFAULT_CLEARANCE = 0.05
SCALE_CLAMP = (0.5, 2.0)
_EPS = 1e-9


def instantiate(asset: AssetRecord, description: str = "") -> Obb:
    h = asset.canonical_dims * 0.5
    return Obb(Vec3(0.0, 0.0, h.z), h)


@dataclass(frozen=True)
class ObjectInstance:
    instance_id: str
    asset_id: str
    obb: Obb
    transform: Transform
    placed_by: str = "auto"
    category: str = ""
    description: str = ""
    # local height of the resting surface, None when nothing can rest on it
    support_surface: float | None = None

    def corners(self) -> np.ndarray:
        return obb_world_corners_array(self.obb, self.transform)

    @property
    def footprint(self) -> np.ndarray:
        return polygon.convex_hull(self.corners()[:, :2])

    @property
    def position(self) -> Vec3:
        return self.transform.translation

    @property
    def bottom_z(self) -> float:
        return float(self.corners()[:, 2].min())

    @property
    def top_z(self) -> float:
        return float(self.corners()[:, 2].max())

    @property
    def support_top(self) -> float | None:
        if self.support_surface is None:
            return None
        return self.transform.translation.z + self.support_surface * self.transform.scale.z

    def center(self) -> np.ndarray:
        return self.corners().mean(axis=0)

    def moved_to(self, p: Vec3) -> "ObjectInstance":
        return replace(self, transform=self.transform.with_translation(p))


@dataclass(frozen=True)
class OverlapWarning:
    instance_id: str
    other_id: str
    depth_m: float

    def to_dict(self) -> dict:
        return {"kind": "overlap", "instance": self.instance_id, "other": self.other_id, "depth_m": self.depth_m}


class OccupancyGrid:
    """2D occupancy raster over the scene extent.

    Cells are ``cells[iy, ix]``. A cell is under a footprint when the two
    overlap with positive area; with a clearance ``r`` it is under
    ``footprint ⊕ disk(r)`` when its distance to the footprint is below ``r``.
    Candidate positions for the free-region search lie on a lattice through
    the extent center with spacing ``cell_size``.
    """

    def __init__(self, extent: Sequence[float] = DEFAULT_EXTENT, cell_size: float = DEFAULT_CELL):
        xmin, ymin, xmax, ymax = map(float, extent)
        if xmax <= xmin or ymax <= ymin or cell_size <= 0:
            raise ValueError("degenerate grid")
        self.extent = (xmin, ymin, xmax, ymax)
        self.cell_size = float(cell_size)
        self.nx = int(math.ceil(round((xmax - xmin) / cell_size, 9)))
        self.ny = int(math.ceil(round((ymax - ymin) / cell_size, 9)))
        self.counts = np.zeros((self.ny, self.nx), dtype=np.int32)
        self.owners: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.center = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)
        self._h0, self._frac = [], []
        for c, lo in zip(self.center, (xmin, ymin)):
            h = (c - lo) / cell_size
            h0 = round(h) if abs(h - round(h)) < 1e-9 else math.floor(h)
            self._h0.append(int(h0))
            self._frac.append(h - h0 if abs(h - round(h)) >= 1e-9 else 0.0)

    @property
    def cells(self) -> np.ndarray:
        return self.counts > 0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def copy(self) -> "OccupancyGrid":
        g = copy.copy(self)
        g.counts = self.counts.copy()
        g.owners = dict(self.owners)
        return g

    def lattice_point(self, a: int, b: int) -> tuple[float, float]:
        return (self.center[0] + a * self.cell_size, self.center[1] + b * self.cell_size)

    def nearest_lattice(self, x: float, y: float) -> tuple[int, int]:
        return (int(round((x - self.center[0]) / self.cell_size)), int(round((y - self.center[1]) / self.cell_size)))

    def stencil(self, footprint: np.ndarray, clearance: float = 0.0) -> np.ndarray:
        """Integer offsets ``(m, n)`` of cells under a footprint given relative to a
        lattice point; cell index is ``(m + a + h0x, n + b + h0y)`` for lattice ``(a, b)``."""
        v = np.asarray(footprint, dtype=np.float64) / self.cell_size
        r = clearance / self.cell_size
        fx, fy = self._frac
        m0 = int(math.floor(v[:, 0].min() - r + fx)) - 1
        m1 = int(math.ceil(v[:, 0].max() + r + fx)) + 1
        n0 = int(math.floor(v[:, 1].min() - r + fy)) - 1
        n1 = int(math.ceil(v[:, 1].max() + r + fy)) + 1
        mm, nn = np.meshgrid(np.arange(m0, m1 + 1), np.arange(n0, n1 + 1), indexing="xy")
        mm, nn = mm.ravel(), nn.ravel()
        lo = np.stack([mm - fx, nn - fy], axis=1).astype(np.float64)
        depth, dist = polygon.rects_vs_polygon(lo, lo + 1.0, v, max_dist=r)
        hit = dist < r - _EPS if r > _EPS else depth > _EPS
        return np.stack([mm[hit], nn[hit]], axis=1)

    def cells_at(self, stencil: np.ndarray, a: int, b: int) -> tuple[np.ndarray, np.ndarray, bool]:
        ix = stencil[:, 0] + a + self._h0[0]
        iy = stencil[:, 1] + b + self._h0[1]
        inside = bool(np.all((ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)))
        return iy, ix, inside

    def rasterize(self, footprint_world: np.ndarray, clearance: float = 0.0):
        """Cells under a world-space footprint: ``(iy, ix, fully_inside_grid)``."""
        c = footprint_world.mean(axis=0)
        a, b = self.nearest_lattice(c[0], c[1])
        p = np.array(self.lattice_point(a, b))
        st = self.stencil(footprint_world - p, clearance)
        iy, ix, inside = self.cells_at(st, a, b)
        keep = (ix >= 0) & (ix < self.nx) & (iy >= 0) & (iy < self.ny)
        return iy[keep], ix[keep], inside

    def mark(self, owner: str, footprint_world: np.ndarray) -> None:
        if owner in self.owners:
            self.unmark(owner)
        iy, ix, _ = self.rasterize(footprint_world)
        np.add.at(self.counts, (iy, ix), 1)
        self.owners[owner] = (iy, ix)

    def unmark(self, owner: str) -> None:
        iy, ix = self.owners.pop(owner)
        np.add.at(self.counts, (iy, ix), -1)

    def blocked(self, ignore: Iterable[str] = ()) -> np.ndarray:
        counts = self.counts.copy()
        for owner in ignore:
            if owner in self.owners:
                iy, ix = self.owners[owner]
                np.add.at(counts, (iy, ix), -1)
        return counts > 0

    def inside_extent(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.extent
        return xmin - _EPS <= x <= xmax + _EPS and ymin - _EPS <= y <= ymax + _EPS


@lru_cache(maxsize=64)
def _spiral_order(a0: int, a1: int, b0: int, b1: int, oa: int, ob: int) -> np.ndarray:
    """Lattice points of ``[a0, a1] x [b0, b1]`` ordered by distance to ``(oa, ob)``,
    then by counter-clockwise angle from +x."""
    aa, bb = np.meshgrid(np.arange(a0, a1 + 1), np.arange(b0, b1 + 1), indexing="xy")
    aa, bb = aa.ravel(), bb.ravel()
    da, db = aa - oa, bb - ob
    d2 = da * da + db * db
    ang = np.mod(np.arctan2(db, da), 2 * np.pi)
    order = np.lexsort((ang, d2))
    return np.stack([aa[order], bb[order]], axis=1)


def _free_lattice(blocked, st, h0, a0, a1, b0, b1) -> np.ndarray:
    """Mask over lattice ``[b0..b1] x [a0..a1]`` of positions whose stencil cells are
    all free. Stencil rows are split into contiguous runs and counted with row-wise
    prefix sums."""
    P = np.zeros((blocked.shape[0], blocked.shape[1] + 1), dtype=np.int64)
    np.cumsum(blocked, axis=1, out=P[:, 1:])
    A = np.arange(a0, a1 + 1) + h0[0]
    B = np.arange(b0, b1 + 1) + h0[1]
    hits = np.zeros((len(B), len(A)), dtype=np.int64)
    for n in np.unique(st[:, 1]):
        ms = np.sort(st[st[:, 1] == n, 0])
        breaks = np.flatnonzero(np.diff(ms) > 1)
        starts = np.concatenate([[ms[0]], ms[breaks + 1]])
        ends = np.concatenate([ms[breaks], [ms[-1]]])
        rows = P[B + n]
        for m0, m1 in zip(starts, ends):
            hits += rows[:, A + m1 + 1] - rows[:, A + m0]
    return hits == 0


def find_free_region(
    grid: OccupancyGrid,
    footprint: np.ndarray,
    clearance: float = DEFAULT_CLEARANCE,
    *,
    ignore: Iterable[str] = (),
    within: np.ndarray | None = None,
    origin: tuple[float, float] | None = None,
    accept: Callable[[float, float], bool] | None = None,
) -> tuple[float, float]:
    """Ground position for a footprint's reference point (the footprint is given
    relative to it), scanning lattice points outward from ``origin`` (default: the
    extent center). A candidate is taken when every cell under ``footprint ⊕
    clearance`` lies in the grid and is free. ``within`` additionally requires the
    footprint to stay inside a convex region; ``ignore`` lists owners whose cells
    count as free (supports)."""
    footprint = np.asarray(footprint, dtype=np.float64)
    blocked = grid.blocked(ignore)
    st = grid.stencil(footprint, clearance)
    if len(st) == 0:
        raise NoFreeRegion("empty footprint")
    h0x, h0y = grid._h0
    # lattice range keeping the stencil's own extremes inside the grid
    a0, a1 = -h0x - int(st[:, 0].min()), grid.nx - 1 - h0x - int(st[:, 0].max())
    b0, b1 = -h0y - int(st[:, 1].min()), grid.ny - 1 - h0y - int(st[:, 1].max())
    if a0 > a1 or b0 > b1:
        raise NoFreeRegion("footprint does not fit inside the scene extent")
    free = _free_lattice(blocked, st, grid._h0, a0, a1, b0, b1)
    oa, ob = (0, 0) if origin is None else grid.nearest_lattice(*origin)
    order = _spiral_order(a0, a1, b0, b1, oa, ob)
    order = order[free[order[:, 1] - b0, order[:, 0] - a0]]
    xs = grid.center[0] + order[:, 0] * grid.cell_size
    ys = grid.center[1] + order[:, 1] * grid.cell_size
    if within is not None:
        inside = np.ones(len(order), dtype=bool)
        for vx, vy in footprint:
            inside &= polygon.contains_points(within, np.stack([vx + xs, vy + ys], axis=1))
        xs, ys = xs[inside], ys[inside]
    for x, y in zip(xs.tolist(), ys.tolist()):
        if accept is not None and not accept(x, y):
            continue
        return (x, y)
    raise NoFreeRegion("no free region for footprint")


@dataclass
class SceneLayout:
    grid: OccupancyGrid = field(default_factory=OccupancyGrid)
    instances: list[ObjectInstance] = field(default_factory=list)
    constraints: list[SpatialConstraint] = field(default_factory=list)
    support_index: dict[str, float] = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    @classmethod
    def empty(cls, extent=DEFAULT_EXTENT, cell_size=DEFAULT_CELL) -> "SceneLayout":
        return cls(grid=OccupancyGrid(extent, cell_size))

    @property
    def scene_extent(self) -> tuple[float, float, float, float]:
        return self.grid.extent

    def copy(self) -> "SceneLayout":
        return SceneLayout(
            self.grid.copy(), list(self.instances), list(self.constraints),
            dict(self.support_index), list(self.diagnostics),
        )

    def ids(self) -> list[str]:
        return [i.instance_id for i in self.instances]

    def __contains__(self, instance_id: str) -> bool:
        return any(i.instance_id == instance_id for i in self.instances)

    def get(self, instance_id: str) -> ObjectInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise UnknownInstance(instance_id)

    def ordinal(self, instance_id: str) -> int:
        for k, inst in enumerate(self.instances):
            if inst.instance_id == instance_id:
                return k + 1
        raise UnknownInstance(instance_id)

    def support_of(self, instance_id: str) -> str | None:
        for c in self.constraints:
            if c.subject == instance_id and c.predicate in ("on", "inside"):
                return c.reference
        return None

    def add_constraint(self, c: SpatialConstraint) -> None:
        if c not in self.constraints:
            self.constraints.append(c)

    def replace_instance(self, inst: ObjectInstance) -> None:
        for k, old in enumerate(self.instances):
            if old.instance_id == inst.instance_id:
                self.instances[k] = inst
                self.grid.mark(inst.instance_id, inst.footprint)
                self._refresh_support(inst.instance_id)
                return
        raise UnknownInstance(inst.instance_id)

    def _refresh_support(self, instance_id: str) -> None:
        ref = self.support_of(instance_id)
        if ref is not None and ref in self:
            top = self.get(ref).support_top
            if top is not None:
                self.support_index[instance_id] = top

    def content_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.instances:
            return np.zeros(3), np.zeros(3)
        pts = np.vstack([i.corners() for i in self.instances])
        return pts.min(axis=0), pts.max(axis=0)

    def content_center(self) -> Vec3:
        lo, hi = self.content_bounds()
        return Vec3.of((lo + hi) / 2.0)

    def content_diagonal(self) -> float:
        lo, hi = self.content_bounds()
        return float(np.linalg.norm(hi - lo))


def _check_target(layout: SceneLayout, p: Vec3) -> None:
    if not layout.grid.inside_extent(p.x, p.y):
        raise OutOfExtent(f"target {tuple(p)} outside scene extent {layout.scene_extent}")


def place_instructed(layout: SceneLayout, inst: ObjectInstance, p_target) -> SceneLayout:
    """Put ``inst`` exactly at ``p_target``; overlaps with non-support objects are
    recorded in ``layout.diagnostics`` rather than rejected."""
    p = Vec3.of(p_target)
    _check_target(layout, p)
    inst = replace(inst, transform=inst.transform.with_translation(p), placed_by="instructed")
    support = layout.support_of(inst.instance_id)
    fp = inst.footprint
    for other in layout.instances:
        if other.instance_id in (inst.instance_id, support) or layout.support_of(other.instance_id) == inst.instance_id:
            continue
        depth = polygon.overlap_depth(fp, other.footprint)
        if depth > polygon.EPS:
            layout.diagnostics.append(OverlapWarning(inst.instance_id, other.instance_id, depth))
    layout.instances.append(inst)
    layout.grid.mark(inst.instance_id, fp)
    layout._refresh_support(inst.instance_id)
    return layout


def _local_footprint(obb: Obb, rotation: Rotation, scale: Vec3) -> np.ndarray:
    t = Transform(Vec3(0, 0, 0), rotation, scale)
    return polygon.convex_hull(obb_world_corners_array(obb, t)[:, :2])


def resting_height(layout: SceneLayout, instance_id: str) -> float:
    """Bottom height an instance should have given its declared support."""
    ref = layout.support_of(instance_id)
    if ref is None or ref not in layout:
        return 0.0
    c = next(c for c in layout.constraints if c.subject == instance_id and c.reference == ref)
    other = layout.get(ref)
    if c.predicate == "inside" or other.support_top is None:
        return other.bottom_z if c.predicate == "inside" else other.top_z
    return other.support_top


def insert_object(
    layout: SceneLayout,
    asset: AssetRecord,
    description: str = "",
    placement="auto",
    rotation: Rotation | None = None,
    scale=None,
    *,
    instance_id: str | None = None,
    clearance: float = DEFAULT_CLEARANCE,
    rng: np.random.Generator | None = None,
) -> SceneLayout:
    """Instantiate, place (instructed target or free-region search), compose and
    append. Auto-placed objects with an ``on``/``inside`` constraint land on their
    reference's support surface, inside its footprint."""
    iid = instance_id or asset.asset_id
    if iid in layout:
        raise ValueError(f"duplicate instance id {iid!r}")
    obb = instantiate(asset, description)
    if rotation is None:
        yaw = float(rng.uniform(0.0, 2 * math.pi)) if rng is not None else 0.0
        rotation = Rotation.from_yaw_pitch_roll(yaw)
    scale = Vec3(1.0, 1.0, 1.0) if scale is None else Vec3(*(min(max(s, SCALE_CLAMP[0]), SCALE_CLAMP[1]) for s in scale))
    base = ObjectInstance(
        iid, asset.asset_id, obb, compose_transform((0, 0, 0), rotation, scale),
        category=asset.category, description=description or asset.description,
        support_surface=asset.support_surface,
    )
    if not isinstance(placement, str):
        return place_instructed(layout, base, placement)

    support = layout.support_of(iid)
    fp = _local_footprint(obb, rotation, scale)
    if support is not None and support in layout:
        ref = layout.get(support)
        c = ref.center()
        x, y = find_free_region(
            layout.grid, fp, clearance, ignore=(support,), within=ref.footprint, origin=(c[0], c[1])
        )
        z = resting_height(layout, iid)
    else:
        x, y = find_free_region(layout.grid, fp, clearance)
        z = 0.0
    inst = replace(base, transform=compose_transform((x, y, z), rotation, scale), placed_by="auto")
    layout.instances.append(inst)
    layout.grid.mark(iid, inst.footprint)
    layout._refresh_support(iid)
    return layout


def remove_object(layout: SceneLayout, instance_id: str) -> SceneLayout:
    inst = layout.get(instance_id)
    layout.instances.remove(inst)
    layout.grid.unmark(instance_id)
    layout.constraints = [c for c in layout.constraints if instance_id not in (c.subject, c.reference)]
    layout.support_index.pop(instance_id, None)
    return layout


def move_instance(layout: SceneLayout, instance_id: str, p: Vec3) -> ObjectInstance:
    inst = layout.get(instance_id).moved_to(p)
    layout.replace_instance(inst)
    return inst


@dataclass(frozen=True)
class ProjectedBox:
    rect: tuple[float, float, float, float]  # u0, v0, u1, v1 clipped to the image
    center: tuple[float, float] | None  # projection of the bottom-center, None if behind


def project_object(layout: SceneLayout, instance_id: str, K: CameraIntrinsics, E: CameraPose) -> ProjectedBox:
    inst = layout.get(instance_id)
    uv, z = project_array(K, E, inst.corners())
    front = z > BEHIND_EPS
    if not front.any():
        raise FullyBehindCamera(instance_id)
    vis = uv[front]
    u0, v0 = np.clip(vis.min(axis=0), 0, (K.width, K.height))
    u1, v1 = np.clip(vis.max(axis=0), 0, (K.width, K.height))
    try:
        center = project(K, E, inst.transform.translation)
    except BehindCamera:
        center = None
    return ProjectedBox((float(u0), float(v0), float(u1), float(v1)), center)


def build_layout(
    decomposition,
    repo,
    *,
    extent=DEFAULT_EXTENT,
    cell_size: float = DEFAULT_CELL,
    clearance: float = DEFAULT_CLEARANCE,
    rng: np.random.Generator | None = None,
) -> SceneLayout:
    """Insert every requested asset of a resolved decomposition, supports first."""
    layout = SceneLayout.empty(extent, cell_size)
    requests = decomposition.requested_assets
    constraints = decomposition.constraints
    placements = decomposition.explicit_placements
    for c in constraints:
        layout.add_constraint(c)
    support_of = {c.subject: c.reference for c in constraints if c.predicate in ("on", "inside")}

    def depth(label: str, seen=()) -> int:
        ref = support_of.get(label)
        return 0 if ref is None or ref in seen else 1 + depth(ref, seen + (label,))

    order = sorted(range(len(requests)), key=lambda k: (depth(requests[k].label), k))
    for k in order:
        req = requests[k]
        asset = repo.get(req.asset_id)
        insert_object(
            layout, asset, req.query, placements.get(req.label, "auto"),
            instance_id=req.label, clearance=clearance, rng=rng,
        )
    # keep manifest order for ordinals
    pos = {r.label: k for k, r in enumerate(requests)}
    layout.instances.sort(key=lambda i: pos[i.instance_id])
    return layout
