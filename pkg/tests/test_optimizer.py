import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import fsum_mean
from scenesynth.assets import AssetRecord, AssetRepository, SpatialConstraint
from scenesynth.errors import NoVerdicts
from scenesynth.gateway import MockGateway
from scenesynth.geometry import CameraIntrinsics, CameraPose, Vec3, project
from scenesynth.layout import SceneLayout, insert_object, move_instance
from scenesynth.optimizer import (
    GatewayJudge,
    GatewayLocator,
    JudgeVerdict,
    aggregate_scores,
    camera_ring,
    constraint_holds,
    geometric_judge,
    misplacement_cameras,
    optimize_layout,
    passes,
    propose_relocation,
)
from scenesynth.render import render_view

REPO = AssetRepository.demo()
ON = SpatialConstraint("on", "cup", "table")


def cup_on(support="table", lift=0.0):
    layout = SceneLayout.empty()
    layout.add_constraint(SpatialConstraint("on", "cup", support))
    insert_object(layout, REPO.get(support), instance_id=support)
    insert_object(layout, REPO.get("cup"), instance_id="cup")
    if lift:
        move_instance(layout, "cup", layout.get("cup").position + Vec3(0, 0, lift))
    return layout


def verdicts(scores):
    return [JudgeVerdict(ON, i, s) for i, s in enumerate(scores)]


def test_aggregate_examples():
    assert aggregate_scores(verdicts([1.0, 1.0])) == 1.0
    assert aggregate_scores(verdicts([0.9, 0.7])) == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(NoVerdicts):
        aggregate_scores([])


def test_aggregate_vs_compensated_sum():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = rng.uniform(0, 1, rng.integers(1, 12)).tolist()
        assert abs(aggregate_scores(verdicts(s)) - fsum_mean(s)) < 1e-12


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=16))
def test_aggregate_within_range(scores):
    m = aggregate_scores(scores)
    assert min(scores) - 1e-15 <= m <= max(scores) + 1e-15


def test_threshold_gate():
    assert passes(0.8, 0.8) and not passes(0.8 - 1e-12, 0.8)


def test_verdict_score_range():
    with pytest.raises(ValueError):
        JudgeVerdict(ON, 0, 1.2)


def test_seated_cup_scores_one_everywhere():
    layout = cup_on()
    views = [render_view(layout, K, E, i) for i, (K, E) in enumerate(camera_ring(layout, 4))]
    assert [v.score for v in geometric_judge(layout, views, ON)] == [1.0] * 4


def box(name, w, h, d, support=None):
    return AssetRecord(name, f"{name} box", (), Vec3(w, h, d), name, support)


def test_float_aligned_view_high_side_view_low():
    # cup hovering 0.3 m over a table; one camera looks straight down the offset
    layout = cup_on(lift=0.3)
    cup = layout.get("cup")
    p = cup.position
    K = CameraIntrinsics(100, 100, 64, 64, 128, 128)
    top = CameraPose.look_at((p.x + 0.03, p.y, p.z + 1.5), (p.x, p.y, p.z - 0.3), up=(0, 1, 0))
    side = CameraPose.look_at((p.x, p.y - 1.3, 0.9), (p.x, p.y, 0.9))
    axis_angle = math.degrees(math.acos(-top.forward()[2]))
    assert axis_angle < 5.0
    # analytic projected gap of the 0.3 m offset in each image
    bc, foot = tuple(p), (p.x, p.y, 0.75)
    gaps = [math.dist(project(K, E, bc), project(K, E, foot)) for E in (top, side)]
    assert gaps[0] < 2.0 + 0.2 * 20 and gaps[1] > 2.0 + 0.8 * 20
    views = [render_view(layout, K, E, i) for i, E in enumerate((top, side))]
    s = [v.score for v in geometric_judge(layout, views, ON)]
    assert s[0] >= 0.8 and s[1] <= 0.2
    assert s[0] == pytest.approx(max(0.0, min(1.0, 1 - (gaps[0] - 2) / 20)), abs=1e-9)


def test_occluded_subject_is_uninformative():
    layout = cup_on()
    insert_object(layout, box("wall", 1.0, 0.05, 1.5), placement=Vec3(0, -0.5, 0), instance_id="wall")
    K = CameraIntrinsics(60, 60, 32, 32, 64, 64)
    E = CameraPose.look_at((0, -2.5, 0.8), (0, 0, 0.8))
    (v,) = geometric_judge(layout, [render_view(layout, K, E)], ON)
    assert v.score == 0.5 and "not visible" in v.rationale


def test_depth_order_violation_scores_zero():
    # cup below the table top, seen from above: the table hides most of it
    layout = cup_on()
    move_instance(layout, "cup", Vec3(0, 0, 0.5))
    K = CameraIntrinsics(60, 60, 32, 32, 64, 64)
    E = CameraPose.look_at((0.5, -2.0, 1.5), (0, 0, 0.6))
    v = render_view(layout, K, E)
    if v.pixel_count(2) == 0:
        (verdict,) = geometric_judge(layout, [v], ON)
        assert verdict.score == 0.5
    else:
        (verdict,) = geometric_judge(layout, [v], ON)
        assert verdict.score == 0.0


def test_single_view_blindness_then_multi_view_fix():
    layout = cup_on("book", lift=0.2)
    cams = misplacement_cameras(layout, "cup", 2)
    single, rep1 = optimize_layout(layout, cams[:1], t=0.8)
    assert rep1.passed and rep1.relocations == []
    assert not constraint_holds(single, SpatialConstraint("on", "cup", "book"))
    fixed, rep2 = optimize_layout(layout, cams, t=0.8)
    assert rep2.passed and rep2.iterations <= 2
    assert all(s >= 0.8 for s in rep2.per_view_scores["on(cup,book)"])
    assert constraint_holds(fixed, SpatialConstraint("on", "cup", "book"))
    assert abs(rep2.support_gaps_m["on(cup,book)"]) < 1e-9


def test_valid_scene_passes_first_iteration():
    layout = cup_on()
    _, rep = optimize_layout(layout, camera_ring(layout, 2))
    assert rep.passed and rep.iterations == 1 and rep.relocations == []


def test_report_deterministic():
    layout = cup_on("plate", lift=0.3)
    cams = misplacement_cameras(layout, "cup", 3)
    a = json.dumps(optimize_layout(layout, cams)[1].to_dict(), sort_keys=True)
    b = json.dumps(optimize_layout(layout, cams)[1].to_dict(), sort_keys=True)
    assert a == b


def test_input_layout_untouched():
    layout = cup_on("book", lift=0.2)
    before = layout.get("cup").position
    optimize_layout(layout, misplacement_cameras(layout, "cup", 2))
    assert layout.get("cup").position == before


def test_best_violations_never_exceed_first_round():
    rng = np.random.default_rng(2)
    for _ in range(5):
        layout = cup_on(rng.choice(["book", "plate", "tray"]), lift=float(rng.uniform(0.1, 0.5)))
        _, rep = optimize_layout(layout, misplacement_cameras(layout, "cup", 2), max_iter=3)
        first = sum(s < rep.threshold for s in rep.history[0].values())
        final = sum(s < rep.threshold for s in rep.per_constraint_scores.values())
        assert final <= first


def test_relocation_snaps_before_moving():
    layout = cup_on("table", lift=0.25)
    sid, p = propose_relocation(layout, ON)
    assert sid == "cup" and p.z == pytest.approx(0.75, abs=1e-12)
    assert (p.x, p.y) == (layout.get("cup").position.x, layout.get("cup").position.y)


def test_relocation_lateral_onto_support():
    layout = cup_on("table")
    move_instance(layout, "cup", Vec3(1.5, 1.5, 0.75))
    sid, p = propose_relocation(layout, ON)
    move_instance(layout, sid, p)
    assert constraint_holds(layout, ON)


def test_left_of_judged_in_reference_frame():
    layout = SceneLayout.empty()
    insert_object(layout, REPO.get("mug"), placement=Vec3(-0.4, 0, 0), instance_id="mug")
    insert_object(layout, REPO.get("laptop"), placement=Vec3(0.4, 0, 0), instance_id="laptop")
    cams = camera_ring(layout, 2)  # view 0 from -y, view 1 from +y
    views = [render_view(layout, K, E, i) for i, (K, E) in enumerate(cams)]
    good = geometric_judge(layout, views, SpatialConstraint("left_of", "mug", "laptop"))
    bad = geometric_judge(layout, views, SpatialConstraint("right_of", "mug", "laptop"))
    assert all(v.score == 1.0 for v in good) and all(v.score == 0.0 for v in bad)


def test_left_of_fixed_by_relocation():
    layout = SceneLayout.empty()
    c = SpatialConstraint("left_of", "mug", "laptop")
    layout.add_constraint(c)
    insert_object(layout, REPO.get("mug"), placement=Vec3(0.5, 0, 0), instance_id="mug")
    insert_object(layout, REPO.get("laptop"), placement=Vec3(0, 0, 0), instance_id="laptop")
    out, rep = optimize_layout(layout, camera_ring(layout, 2, target=Vec3(0, 0, 0), radius=0.8))
    assert rep.passed and len(rep.relocations) == 1
    assert out.get("mug").position.x < 0


def test_near_judge():
    layout = SceneLayout.empty()
    insert_object(layout, REPO.get("mug"), placement=Vec3(0.3, 0, 0), instance_id="mug")
    insert_object(layout, REPO.get("laptop"), placement=Vec3(0, 0, 0), instance_id="laptop")
    views = [render_view(layout, K, E, i) for i, (K, E) in enumerate(camera_ring(layout, 2))]
    near = geometric_judge(layout, views, SpatialConstraint("near", "mug", "laptop", 0.3))
    assert all(v.score >= 0.8 for v in near)


def test_gateway_judge_matches_geometric():
    layout = cup_on("plate", lift=0.2)
    cams = misplacement_cameras(layout, "cup", 3)
    views = [render_view(layout, K, E, i) for i, (K, E) in enumerate(cams)]
    c = layout.constraints[0]
    via_gateway = GatewayJudge(MockGateway(seed=0))(layout, views, c)
    direct = geometric_judge(layout, views, c)
    assert [v.score for v in via_gateway] == [v.score for v in direct]


def test_gateway_locator_path():
    layout = cup_on("book", lift=0.2)
    gw = MockGateway(seed=0)
    out, rep = optimize_layout(layout, misplacement_cameras(layout, "cup", 2), GatewayJudge(gw), locator=GatewayLocator(gw))
    assert rep.passed and constraint_holds(out, layout.constraints[0])
