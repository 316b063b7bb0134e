"""Seeded random scene generators shared by the unit and acceptance tests."""
from __future__ import annotations

import math

import numpy as np

from oracles import footprint_overlap_area
from scenesynth.assets import AssetRecord, AssetRepository, SpatialConstraint
from scenesynth.errors import NoFreeRegion
from scenesynth.geometry import CameraIntrinsics, CameraPose, Rotation, Vec3
from scenesynth.layout import OccupancyGrid, SceneLayout, insert_object

REPO = AssetRepository.demo()
SUPPORTS = [r for r in REPO if r.support_surface is not None and r.canonical_dims.x >= 0.2]
SMALL = [r for r in REPO if max(r.canonical_dims.x, r.canonical_dims.y) <= 0.3]


def rect(w, h, yaw=0.0):
    c, s = math.cos(yaw), math.sin(yaw)
    pts = np.array([[-w / 2, -h / 2], [w / 2, -h / 2], [w / 2, h / 2], [-w / 2, h / 2]])
    return pts @ np.array([[c, s], [-s, c]])


def box_asset(name, w, h, d):
    return AssetRecord(name, f"{name} box", (), Vec3(w, h, d), "box")


def random_rotation(rng):
    return Rotation(*rng.normal(size=4))


def random_camera(rng):
    w, h = int(rng.integers(16, 640)), int(rng.integers(16, 480))
    K = CameraIntrinsics(
        rng.uniform(20, 800), rng.uniform(20, 800), rng.uniform(0, w - 1), rng.uniform(0, h - 1), w, h
    )
    E = CameraPose(random_rotation(rng), Vec3(*rng.uniform(-3, 3, 3)))
    return K, E


def point_in_front(rng, E):
    """A world point strictly in front of camera E."""
    pc = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.1, 10)])
    R = E.rotation.matrix()
    return R.T @ (pc - E.translation.as_array())


def random_insert_sequence(rng, extent=(-2.0, -2.0, 2.0, 2.0)):
    layout = SceneLayout.empty(extent)
    supports = {}
    for k in range(int(rng.integers(2, 7))):
        iid = f"o{k}"
        if supports and rng.random() < 0.5:
            asset = SMALL[rng.integers(len(SMALL))]
            ref = list(supports)[rng.integers(len(supports))]
            layout.add_constraint(SpatialConstraint("on", iid, ref))
        else:
            pool = SUPPORTS if rng.random() < 0.5 else list(REPO)
            asset = pool[rng.integers(len(pool))]
        try:
            insert_object(layout, asset, instance_id=iid, rng=rng)
        except NoFreeRegion:
            layout.constraints = [c for c in layout.constraints if c.subject != iid]
            continue
        if asset.support_surface is not None and layout.support_of(iid) is None:
            supports[iid] = asset
    return layout


def non_support_overlaps(layout):
    bad = []
    inst = layout.instances
    for i in range(len(inst)):
        for j in range(i + 1, len(inst)):
            a, b = inst[i].instance_id, inst[j].instance_id
            if layout.support_of(a) == b or layout.support_of(b) == a:
                continue
            if footprint_overlap_area(inst[i].footprint, inst[j].footprint) > 1e-9:
                bad.append((a, b))
            cells_a = set(zip(*layout.grid.owners[a]))
            cells_b = set(zip(*layout.grid.owners[b]))
            if cells_a & cells_b:
                bad.append((a, b, "cell"))
    return bad


def random_grid_case(rng):
    """A partly occupied grid, a footprint to place and a clearance."""
    x0, y0 = rng.uniform(-1.5, -0.5, 2)
    g = OccupancyGrid((x0, y0, x0 + rng.uniform(1.2, 2.0), y0 + rng.uniform(1.2, 2.0)), rng.choice([0.05, 0.1]))
    for k in range(rng.integers(0, 6)):
        poly = rect(*rng.uniform(0.05, 0.6, 2), rng.uniform(0, math.pi)) + rng.uniform(-0.8, 0.8, 2) + g.center
        g.mark(f"o{k}", poly)
    fp = rect(*rng.uniform(0.05, 0.5, 2), rng.uniform(0, math.pi))
    clearance = float(rng.choice([0.0, 0.03, 0.05, 0.12]))
    return g, fp, clearance


def random_scene(rng, n=3):
    layout = SceneLayout.empty((-4, -4, 4, 4))
    for k in range(n):
        dims = rng.uniform(0.2, 1.0, 3)
        pos = (rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-0.5, 0.5))
        rot = Rotation(*rng.normal(size=4))
        insert_object(layout, box_asset(f"b{k}", *dims), placement=Vec3(*pos), rotation=rot, instance_id=f"b{k}")
    eye = rng.normal(size=3)
    eye = eye / np.linalg.norm(eye) * rng.uniform(3.5, 5.0)
    return layout, CameraPose.look_at(eye, rng.uniform(-0.3, 0.3, 3))
