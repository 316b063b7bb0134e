import math

import numpy as np
import pytest

from oracles import brute_force_render
from scenes import box_asset, random_scene
from scenesynth.assets import AssetRepository
from scenesynth.errors import UnknownInstance
from scenesynth.geometry import CameraIntrinsics, CameraPose, Vec3
from scenesynth.layout import SceneLayout, insert_object
from scenesynth.render import render_view, visible_fraction

K64 = CameraIntrinsics(60.0, 60.0, 32.0, 32.0, 64, 64)


def cube_layout(z_center=2.0):
    # camera at the origin looking along world +Y; place a unit cube 2 m ahead
    layout = SceneLayout.empty((-6, -6, 6, 6))
    insert_object(layout, box_asset("cube", 1, 1, 1), placement=Vec3(0.0, z_center, -0.5), instance_id="cube")
    return layout


def axis_camera():
    return CameraPose.look_at((0, 0, 0), (0, 1, 0))


def test_empty_layout_is_background():
    v = render_view(SceneLayout.empty(), K64, axis_camera())
    assert np.all(np.isinf(v.depth)) and np.all(v.instance == 0)
    assert v.depth.shape == v.instance.shape == (64, 64)


def test_unit_cube_center_depth():
    K = CameraIntrinsics(100, 100, 64, 64, 128, 128)
    v = render_view(cube_layout(), K, axis_camera())
    # the four pixels around the principal point all see the front face at 1.5
    assert v.depth[63:65, 63:65] == pytest.approx(np.full((2, 2), 1.5), abs=1e-6)
    assert np.all(v.instance[63:65, 63:65] == 1)


@pytest.mark.parametrize("seed", range(3))
def test_matches_triangle_oracle(seed):
    layout, E = random_scene(np.random.default_rng(seed))
    v = render_view(layout, K64, E)
    depth, inst = brute_force_render([i.corners() for i in layout.instances], K64, E)
    assert np.array_equal(v.instance, inst)
    fin = np.isfinite(depth)
    assert np.array_equal(fin, np.isfinite(v.depth))
    assert np.max(np.abs(v.depth[fin] - depth[fin]), initial=0.0) < 1e-6


def test_instance_iff_finite_depth():
    layout, E = random_scene(np.random.default_rng(11), n=5)
    v = render_view(layout, K64, E)
    assert np.array_equal(v.instance != 0, np.isfinite(v.depth))


def test_visible_fraction_sole_object():
    v = render_view(cube_layout(), K64, axis_camera())
    assert visible_fraction(v, 1) == 1.0


def test_visible_fraction_fully_hidden():
    layout = cube_layout(4.0)
    insert_object(layout, box_asset("wall", 3, 0.1, 3), placement=Vec3(0, 1.5, -1.5), instance_id="wall")
    v = render_view(layout, K64, axis_camera())
    assert visible_fraction(v, 1) == 0.0
    assert visible_fraction(v, 2) == 1.0


def test_visible_fraction_half_occluded_matches_solo_ratio():
    layout = cube_layout(4.0)
    insert_object(layout, box_asset("slab", 1.5, 0.1, 1.5), placement=Vec3(-0.75, 2.0, -0.75), instance_id="slab")
    v = render_view(layout, K64, axis_camera())
    alone = SceneLayout.empty((-6, -6, 6, 6))
    alone.instances.append(layout.get("cube"))
    solo = render_view(alone, K64, axis_camera())
    want = np.count_nonzero(v.instance == 1) / np.count_nonzero(solo.instance == 1)
    assert visible_fraction(v, 1) == want
    assert 0.2 < want < 0.8


def test_visible_fraction_unknown():
    v = render_view(cube_layout(), K64, axis_camera())
    with pytest.raises(UnknownInstance):
        visible_fraction(v, 2)


def test_deterministic():
    layout, E = random_scene(np.random.default_rng(5))
    a = render_view(layout, K64, E)
    b = render_view(layout, K64, E)
    assert a.depth.tobytes() == b.depth.tobytes() and a.instance.tobytes() == b.instance.tobytes()


def test_resolution_monotone_coverage():
    ratios = []
    for seed in range(10):
        layout, E = random_scene(np.random.default_rng(100 + seed), n=2)
        lo = render_view(layout, K64, E)
        hi = render_view(layout, K64.scaled(2), E)
        for k in (1, 2):
            n_lo = lo.pixel_count(k)
            if n_lo >= 40:
                ratios.append(hi.pixel_count(k) / n_lo)
    assert ratios and all(3.5 <= r <= 4.5 for r in ratios)


def test_demo_scene_renders():
    repo = AssetRepository.demo()
    layout = SceneLayout.empty()
    insert_object(layout, repo.get("table"), instance_id="table")
    E = CameraPose.look_at((0, -3, 2), (0, 0, 0.4))
    v = render_view(layout, K64, E)
    assert v.pixel_count(1) > 100 and math.isfinite(v.depth[32, 32])
