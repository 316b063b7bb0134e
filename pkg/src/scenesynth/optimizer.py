"""Multi-view verification loop: judge every constraint in every view, average
the per-view confidences, and relocate the worst offender until all pass."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import polygon
from .assets import SpatialConstraint
from .errors import NoVerdicts, SceneSynthError, UnknownInstance
from .geometry import BEHIND_EPS, CameraIntrinsics, CameraPose, Vec3, project_array
from .layout import DEFAULT_CLEARANCE, SceneLayout, find_free_region, move_instance, resting_height
from .render import RenderedView, render_view, visible_fraction

DEFAULT_THRESHOLD = 0.8
DEFAULT_MAX_ITER = 5
EPS_PX = 2.0
DECAY_PX = 20.0
OCCLUDED_SCORE = 0.5
SUPPORT_TOL = 1e-6


@dataclass(frozen=True)
class JudgeVerdict:
    constraint: SpatialConstraint
    view_index: int
    score: float
    rationale: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0 or math.isnan(self.score):
            raise ValueError(f"score {self.score} outside [0, 1]")


def aggregate_scores(verdicts: Sequence[JudgeVerdict | float]) -> float:
    """Mean confidence over views."""
    if len(verdicts) == 0:
        raise NoVerdicts("no verdicts to aggregate")
    scores = [v.score if isinstance(v, JudgeVerdict) else float(v) for v in verdicts]
    return sum(scores) / len(scores)


def passes(score: float, t: float) -> bool:
    return score >= t


# ------------------------------------------------------------------ cameras

def content_radius(layout: SceneLayout) -> float:
    lo, hi = layout.content_bounds()
    return max(0.5 * float(np.linalg.norm(hi - lo)), 0.05)


def camera_ring(
    layout: SceneLayout,
    n: int,
    width: int = 64,
    height: int = 64,
    *,
    elevation_deg: float = 30.0,
    radius_factor: float = 1.5,
    start_azimuth_deg: float = -90.0,
    target: Vec3 | None = None,
    radius: float | None = None,
) -> list[tuple[CameraIntrinsics, CameraPose]]:
    """``n`` cameras at equal azimuths on a circle of radius ``radius_factor`` times
    the content diagonal, aimed at the content center, with a field of view that
    frames the content's bounding sphere (or one of the given ``radius``)."""
    c = layout.content_center() if target is None else target
    rad = content_radius(layout) if radius is None else radius
    dist = radius_factor * 2.0 * rad
    half = math.asin(min(rad / dist, 0.99))
    f = (min(width, height) / 2.0) / math.tan(half)
    K = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    el = math.radians(elevation_deg)
    cams = []
    for k in range(n):
        az = math.radians(start_azimuth_deg) + 2 * math.pi * k / n
        eye = (
            c.x + dist * math.cos(el) * math.cos(az),
            c.y + dist * math.cos(el) * math.sin(az),
            c.z + dist * math.sin(el),
        )
        cams.append((K, CameraPose.look_at(eye, c)))
    return cams


def aligned_camera(
    layout: SceneLayout, subject: str, width: int = 64, height: int = 64, radius_factor: float = 1.5
) -> tuple[CameraIntrinsics, CameraPose]:
    """Top-down camera directly above ``subject``: its view axis is parallel to a
    vertical offset of the subject, so such offsets project to zero pixels."""
    rad = content_radius(layout)
    dist = radius_factor * 2.0 * rad
    p = layout.get(subject).position
    lo, hi = layout.content_bounds()
    eye = (p.x, p.y, float(hi[2]) + dist)
    # frame everything: widest lateral reach from the optical axis at the lowest depth
    reach = max(float(np.max(np.abs(lo[:2] - (p.x, p.y)))), float(np.max(np.abs(hi[:2] - (p.x, p.y)))))
    depth = eye[2] - float(hi[2])
    f = (min(width, height) / 2.0) * depth / max(reach * 1.1, 1e-3)
    K = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    return K, CameraPose.look_at(eye, (p.x, p.y, float(lo[2])), up=(0.0, 1.0, 0.0))


def misplacement_cameras(layout: SceneLayout, subject: str, n: int, width: int = 64, height: int = 64):
    """View 0 aligned with vertical offsets of ``subject``; the rest on the ring."""
    cams = [aligned_camera(layout, subject, width, height)]
    if n > 1:
        cams += camera_ring(layout, n - 1, width, height)
    return cams


# ------------------------------------------------------------------ judge

def _support_polygon(ref) -> np.ndarray:
    """World corners of the reference's support rectangle (top face if it has no
    declared support surface)."""
    z_local = ref.support_surface
    local = ref.obb.local_corners()[:4].copy()  # bottom four: bit 2 clear
    local[:, 2] = z_local if z_local is not None else ref.obb.center.z + ref.obb.half_extents.z
    return ref.transform.apply_array(local)


def _point_polygon_px(p: np.ndarray, poly: np.ndarray) -> float:
    hull = polygon.convex_hull(poly)
    if len(hull) < 3:
        return float(np.min(np.linalg.norm(poly - p, axis=1)))
    if polygon.contains_points(hull, p[None])[0]:
        return 0.0
    a, b = hull, np.roll(hull, -1, axis=0)
    d = b - a
    t = np.clip(np.sum((p - a) * d, axis=1) / np.maximum(np.sum(d * d, axis=1), 1e-300), 0, 1)
    return float(np.min(np.linalg.norm(a + t[:, None] * d - p, axis=1)))


def _ramp(gap_px: float) -> float:
    return float(np.clip(1.0 - (gap_px - EPS_PX) / DECAY_PX, 0.0, 1.0))


def _signed(margin_px: float) -> float:
    return float(np.clip(0.5 + margin_px / DECAY_PX, 0.0, 1.0))


def _judge_support(layout, view: RenderedView, c: SpatialConstraint, sub_ord: int, ref_ord: int):
    a, b = layout.get(c.subject), layout.get(c.reference)
    top = b.support_top if b.support_top is not None else b.top_z
    if c.predicate == "inside":
        top = b.bottom_z
    bc = a.transform.apply(a.obb.local_bottom_center()).as_array()
    foot = bc.copy()
    foot[2] = top
    ring = _support_polygon(b) if c.predicate == "on" else b.corners()
    uv, z = project_array(view.K, view.E, np.vstack([bc, foot, ring]))
    if np.any(z[:2] <= BEHIND_EPS) or np.all(z[2:] <= BEHIND_EPS):
        return OCCLUDED_SCORE, "support points behind the camera; uninformative"
    vert = float(np.linalg.norm(uv[0] - uv[1]))
    ring_uv = uv[2:][z[2:] > BEHIND_EPS]
    lateral = _point_polygon_px(uv[1], ring_uv)
    gap = vert + lateral
    solo = view.solo_mask(sub_ord)
    covered = solo & (view.instance == ref_ord)
    if solo.any() and covered.sum() > 0.5 * solo.sum():
        return 0.0, f"{c.reference} drawn in front of {c.subject}; depth order inconsistent"
    score = _ramp(gap)
    return score, f"contact gap {gap:.2f} px (vertical {vert:.2f}, off-surface {lateral:.2f})"


def _axis_margin(view: RenderedView, pa: np.ndarray, pb: np.ndarray, axis: np.ndarray) -> tuple[float, str]:
    """Signed displacement of ``pa`` relative to ``pb`` along a world ``axis`` as seen
    in one view, in pixels. Uses the image-plane projection of the axis when it is
    visible and camera depth when the axis points along the view direction."""
    fwd = view.E.forward()
    pts = np.vstack([pa, pb, pb + axis * 0.1])
    uv, z = project_array(view.K, view.E, pts)
    if np.any(z <= BEHIND_EPS):
        return 0.0, "behind camera"
    if abs(float(axis @ fwd)) < 0.9:
        u = uv[2] - uv[1]
        n = np.linalg.norm(u)
        if n > 1e-9:
            return float((uv[0] - uv[1]) @ (u / n)), "image plane"
    scale = view.K.fx / max(float(z[1]), 1e-6)
    return float(np.sign(axis @ fwd) * (z[0] - z[1]) * scale), "depth order"


def _reference_axes(ref_pose: CameraPose) -> dict[str, np.ndarray]:
    r = ref_pose.rotation.matrix()
    right = r[0].copy()
    right[2] = 0.0
    right /= max(np.linalg.norm(right), 1e-12)
    fwd = np.array([-right[1], right[0], 0.0])  # horizontal forward, right-handed with Z up
    if fwd @ r[2] < 0:
        fwd = -fwd
    return {
        "left_of": -right,
        "right_of": right,
        "in_front_of": -fwd,
        "behind": fwd,
        "above": np.array([0.0, 0.0, 1.0]),
    }


def _judge_relation(layout, view, c, ref_pose):
    a, b = layout.get(c.subject), layout.get(c.reference)
    if c.predicate == "near":
        uv, z = project_array(view.K, view.E, np.vstack([a.center(), b.center()]))
        if np.any(z <= BEHIND_EPS):
            return OCCLUDED_SCORE, "behind camera"
        meters = float(np.linalg.norm(uv[0] - uv[1])) * float(z[1]) / view.K.fx
        limit = c.param if c.param is not None else 0.3
        ext = 0.5 * float(np.ptp(a.footprint, axis=0).max() + np.ptp(b.footprint, axis=0).max())
        gap = max(meters - ext, 0.0)
        return float(np.clip(2.0 - gap / limit, 0.0, 1.0)), f"apparent gap {gap:.3f} m"
    axis = _reference_axes(ref_pose)[c.predicate]
    if c.predicate == "above":
        pa = a.transform.apply(a.obb.local_bottom_center()).as_array()
        pb = b.center().copy()
        pb[2] = b.top_z
    else:
        pa, pb = a.center(), b.center()
    margin, how = _axis_margin(view, pa, pb, axis)
    return _signed(margin), f"{how} margin {margin:.2f} px"


def geometric_judge(
    layout: SceneLayout,
    views: Sequence[RenderedView],
    constraint: SpatialConstraint,
    *,
    ref_pose: CameraPose | None = None,
) -> list[JudgeVerdict]:
    """Analytic per-view judge. Each score uses only one view's projections and
    buffers, so a view looking straight along an offset cannot see it."""
    sub_ord = layout.ordinal(constraint.subject)
    ref_ord = layout.ordinal(constraint.reference)
    if ref_pose is None:
        ref_pose = next((v.E for v in views if v.view_index == constraint.ref_view), views[0].E if views else None)
    out = []
    for view in views:
        if visible_fraction(view, sub_ord) == 0.0:
            out.append(JudgeVerdict(constraint, view.view_index, OCCLUDED_SCORE, "subject not visible; uninformative"))
            continue
        if constraint.predicate in ("on", "inside"):
            score, why = _judge_support(layout, view, constraint, sub_ord, ref_ord)
        else:
            score, why = _judge_relation(layout, view, constraint, ref_pose)
        out.append(JudgeVerdict(constraint, view.view_index, score, why))
    return out


class GatewayJudge:
    """Judge backed by the gateway's judge role; one request per (constraint, view)."""

    def __init__(self, gateway, judge_params: dict | None = None):
        self.gateway = gateway
        self.judge_params = judge_params or {}

    def __call__(self, layout, views, constraint) -> list[JudgeVerdict]:
        from .gateway import StructuredRequest
        from .gateway.prompts import judge_prompt

        params = dict(self.judge_params)
        params.setdefault("ref_pose", next((v.E for v in views if v.view_index == constraint.ref_view), views[0].E))
        out = []
        for view in views:
            req = StructuredRequest(
                "judge",
                judge_prompt(constraint, view.view_index),
                "JudgeVerdict",
                attachments=[view_thumbnail(view)],
                context={"layout": layout, "view": view, "constraint": constraint, "judge_params": params},
            )
            reply = self.gateway.send(req)
            out.append(JudgeVerdict(constraint, view.view_index, float(reply["score"]), reply.get("rationale", "")))
        return out


def view_thumbnail(view: RenderedView):
    """8-bit instance-colored image for multimodal attachments."""
    palette = (np.arange(256, dtype=np.uint32)[:, None] * np.array([97, 57, 151]) % 256).astype(np.uint8)
    palette[0] = 0
    return palette[np.clip(view.instance, 0, 255)]


# ------------------------------------------------------------------ ground truth

def constraint_holds(layout: SceneLayout, c: SpatialConstraint, tol: float = SUPPORT_TOL) -> bool:
    """3D check of a constraint, independent of any camera."""
    a, b = layout.get(c.subject), layout.get(c.reference)
    if c.predicate == "on":
        top = b.support_top if b.support_top is not None else b.top_z
        ac = a.center()
        return abs(a.bottom_z - top) < tol and bool(polygon.contains_points(b.footprint, ac[None, :2])[0])
    if c.predicate == "inside":
        return bool(polygon.contains_points(b.footprint, a.footprint).all()) and b.bottom_z - tol <= a.bottom_z and a.top_z <= b.top_z + tol
    if c.predicate == "above":
        return a.bottom_z >= b.top_z - tol
    if c.predicate == "near":
        limit = c.param if c.param is not None else 0.3
        return footprint_gap(a.footprint, b.footprint) <= limit
    raise ValueError(f"{c.predicate} needs a reference view; use relation_holds")


def relation_holds(layout: SceneLayout, c: SpatialConstraint, ref_pose: CameraPose | None = None) -> bool:
    if c.predicate in ("on", "inside", "above", "near"):
        return constraint_holds(layout, c)
    # horizontal relations need the footprints fully separated along the axis
    axis = _reference_axes(ref_pose)[c.predicate][:2]
    a, b = layout.get(c.subject), layout.get(c.reference)
    return float((a.footprint @ axis).min()) > float((b.footprint @ axis).max())


def footprint_gap(p: np.ndarray, q: np.ndarray) -> float:
    """Distance between two convex polygons (0 when they touch or overlap)."""
    if polygon.overlap_depth(p, q) >= 0:
        return 0.0
    best = math.inf
    for v in q:
        best = min(best, _point_polygon_px(v, p))
    for v in p:
        best = min(best, _point_polygon_px(v, q))
    return best


def support_gaps(layout: SceneLayout) -> dict[str, float]:
    out = {}
    for c in layout.constraints:
        if c.predicate == "on":
            b = layout.get(c.reference)
            top = b.support_top if b.support_top is not None else b.top_z
            out[c.key()] = layout.get(c.subject).bottom_z - top
    return out


# ------------------------------------------------------------------ relocation

def propose_relocation(
    layout: SceneLayout,
    constraint: SpatialConstraint,
    *,
    clearance: float = DEFAULT_CLEARANCE,
    ref_pose: CameraPose | None = None,
) -> tuple[str, Vec3]:
    """New bottom-center for the constraint's subject. Support relations are fixed
    vertically first; only an already-seated subject is moved sideways."""
    sid = constraint.subject
    a = layout.get(sid)
    p = a.position
    if constraint.predicate in ("on", "inside"):
        z = resting_height(layout, sid) if layout.support_of(sid) == constraint.reference else _support_height(layout, constraint)
        if abs(a.bottom_z - z) > 1e-12:
            return sid, Vec3(p.x, p.y, p.z + (z - a.bottom_z))
    ref = layout.get(constraint.reference)
    local = a.footprint - (p.x, p.y)
    rc = ref.center()
    kwargs = {"ignore": (sid,), "origin": (float(rc[0]), float(rc[1]))}
    if constraint.predicate in ("on", "inside"):
        kwargs["ignore"] = (sid, constraint.reference)
        kwargs["within"] = ref.footprint
    else:

        def accept(x: float, y: float) -> bool:
            moved = layout.copy()
            move_instance(moved, sid, Vec3(x, y, p.z))
            return relation_holds(moved, constraint, ref_pose)

        kwargs["accept"] = accept
    x, y = find_free_region(layout.grid, local, clearance, **kwargs)
    return sid, Vec3(x, y, p.z)


def _support_height(layout, c: SpatialConstraint) -> float:
    b = layout.get(c.reference)
    if c.predicate == "inside":
        return b.bottom_z
    return b.support_top if b.support_top is not None else b.top_z


# ------------------------------------------------------------------ loop

@dataclass
class OptimizationReport:
    iterations: int = 0
    per_constraint_scores: dict[str, float] = field(default_factory=dict)
    per_view_scores: dict[str, list[float]] = field(default_factory=dict)
    passed: bool = False
    threshold: float = DEFAULT_THRESHOLD
    relocations: list[dict] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    history: list[dict[str, float]] = field(default_factory=list)
    support_gaps_m: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "passed": self.passed,
            "threshold": self.threshold,
            "per_constraint_scores": self.per_constraint_scores,
            "per_view_scores": self.per_view_scores,
            "relocations": self.relocations,
            "errors": self.errors,
            "history": self.history,
            "support_gaps_m": self.support_gaps_m,
        }


Judge = Callable[[SceneLayout, Sequence[RenderedView], SpatialConstraint], list]


def optimize_layout(
    layout: SceneLayout,
    cameras: Sequence[tuple[CameraIntrinsics, CameraPose]],
    judge: Judge = geometric_judge,
    t: float = DEFAULT_THRESHOLD,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    locator: Callable | None = None,
    clearance: float = DEFAULT_CLEARANCE,
) -> tuple[SceneLayout, OptimizationReport]:
    """Render, judge, aggregate; relocate the subject of the worst constraint; repeat.

    Returns the first passing layout, or the best one seen (fewest violations, then
    highest score sum) when ``max_iter`` rounds are used up.
    """
    if not cameras:
        raise ValueError("need at least one camera")
    if not 0.0 < t <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    layout = layout.copy()
    report = OptimizationReport(threshold=t)
    best = None
    for it in range(1, max_iter + 1):
        views = [render_view(layout, K, E, i) for i, (K, E) in enumerate(cameras)]
        scores: dict[str, float] = {}
        per_view: dict[str, list[float]] = {}
        for c in layout.constraints:
            verdicts = sorted(judge(layout, views, c), key=lambda v: v.view_index)
            per_view[c.key()] = [v.score for v in verdicts]
            scores[c.key()] = aggregate_scores(verdicts)
        report.iterations = it
        report.history.append(dict(scores))
        violating = [c for c in layout.constraints if not passes(scores[c.key()], t)]
        rank = (len(violating), -sum(scores.values()))
        if best is None or rank < best[0]:
            best = (rank, layout.copy(), scores, per_view)
        if not violating:
            report.passed = True
            break
        if it == max_iter:
            break
        worst = min(violating, key=lambda c: (scores[c.key()], layout.constraints.index(c)))
        try:
            if locator is not None:
                sid, new = locator(layout, worst)
            else:
                sid, new = propose_relocation(layout, worst, clearance=clearance, ref_pose=cameras[worst.ref_view % len(cameras)][1])
            old = layout.get(sid).position
            move_instance(layout, sid, new)
            report.relocations.append(
                {"iteration": it, "instance": sid, "constraint": worst.key(), "from": list(old), "to": list(new)}
            )
        except (SceneSynthError, ValueError) as exc:
            report.errors.append(f"iteration {it}: {type(exc).__name__}: {exc}")
    _, out, scores, per_view = best
    report.per_constraint_scores = scores
    report.per_view_scores = per_view
    report.support_gaps_m = support_gaps(out)
    return out, report


class GatewayLocator:
    """Relocation through the gateway's locator role."""

    def __init__(self, gateway, params: dict | None = None):
        self.gateway = gateway
        self.params = params or {}

    def __call__(self, layout, constraint):
        from .gateway import StructuredRequest
        from .gateway.prompts import locator_prompt

        a = layout.get(constraint.subject)
        objects = [f"{i.instance_id} {list(i.position)} {list(i.obb.dims)}" for i in layout.instances]
        req = StructuredRequest(
            "locator",
            locator_prompt(a.instance_id, constraint, tuple(a.position), objects),
            "RelocationProposal",
            context={"layout": layout, "constraint": constraint, "params": self.params},
        )
        reply = self.gateway.send(req)
        if reply["instance_id"] not in layout:
            raise UnknownInstance(reply["instance_id"])
        return reply["instance_id"], Vec3(*reply["position"])
