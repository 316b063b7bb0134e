"""Timed action plans, frame sampling, temporal smoothness checks and the
refinement loop that stretches actions until every frame step is within budget."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .errors import SchemaError, TooFewFrames, UnknownActor
from .geometry import CameraPose, Rotation, Transform, Vec3

DEFAULT_FPS = 24
MAX_FRAMES = 240
STRETCH_FACTOR = 0.8
KINDS = ("move_to", "rotate_to", "orbit_camera", "dolly", "hold")
_TOL = 1e-9


@dataclass(frozen=True)
class Action:
    actor: str
    kind: str
    start_s: float
    end_s: float
    target: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)) or self.end_s <= self.start_s:
            raise ValueError(f"bad interval [{self.start_s}, {self.end_s}]")
        for v in _flatten(self.target):
            if not math.isfinite(v):
                raise ValueError("non-finite action target")
        if self.kind == "orbit_camera" and not self.target["radius"] > 0:
            raise ValueError("orbit radius must be positive")

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s

    def to_dict(self) -> dict:
        return {"actor": self.actor, "kind": self.kind, "start_s": self.start_s, "end_s": self.end_s, "target": self.target}

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(d["actor"], d["kind"], float(d["start_s"]), float(d["end_s"]), dict(d.get("target", {})))


def _flatten(obj) -> list[float]:
    if isinstance(obj, dict):
        return [x for v in obj.values() for x in _flatten(v)]
    if isinstance(obj, (list, tuple)):
        return [x for v in obj for x in _flatten(v)]
    return [float(obj)] if isinstance(obj, (int, float)) else []


@dataclass(frozen=True)
class ActionPlan:
    actions: tuple[Action, ...]
    duration_s: float
    fps: int = DEFAULT_FPS

    def __post_init__(self) -> None:
        if self.fps < 1:
            raise ValueError("fps must be >= 1")
        last: dict[str, float] = {}
        for a in self.actions:
            if a.start_s < last.get(a.actor, -math.inf) - _TOL:
                raise ValueError(f"overlapping or unsorted actions for {a.actor}")
            last[a.actor] = a.end_s
        if self.actions and self.duration_s < max(a.end_s for a in self.actions) - _TOL:
            raise ValueError("duration does not cover the last action")

    @property
    def actors(self) -> list[str]:
        return sorted({a.actor for a in self.actions})

    def to_dict(self) -> dict:
        return {"fps": self.fps, "duration_s": self.duration_s, "actions": [a.to_dict() for a in self.actions]}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionPlan":
        from .gateway.schemas import validate

        validate(d, "ActionPlan")
        try:
            return cls(tuple(Action.from_dict(a) for a in d["actions"]), float(d["duration_s"]), int(d["fps"]))
        except (ValueError, KeyError) as exc:
            raise SchemaError(f"invalid action plan: {exc}") from None


@dataclass(frozen=True)
class SmoothnessBudget:
    max_rot_deg_per_frame: float = 15.0
    max_trans_m_per_frame: float = 0.15

    def __post_init__(self) -> None:
        if not (self.max_rot_deg_per_frame > 0 and self.max_trans_m_per_frame > 0):
            raise ValueError("budgets must be positive")

    def to_dict(self) -> dict:
        return {"max_rot_deg_per_frame": self.max_rot_deg_per_frame, "max_trans_m_per_frame": self.max_trans_m_per_frame}


@dataclass(frozen=True)
class ActorState:
    position: Vec3
    rotation: Rotation
    scale: Vec3 = Vec3(1.0, 1.0, 1.0)

    def transform(self) -> Transform:
        return Transform(self.position, self.rotation, self.scale)


@dataclass(frozen=True)
class FrameState:
    time_s: float
    # every actor; "camera" holds the eye position and the world-to-camera rotation
    actors: dict[str, ActorState]

    def camera(self) -> CameraPose:
        s = self.actors["camera"]
        t = -(s.rotation.matrix() @ s.position.as_array())
        return CameraPose(s.rotation, Vec3.of(t))

    def transform(self, actor: str) -> Transform:
        return self.actors[actor].transform()


@dataclass
class FrameSequence:
    frames: list[FrameState]
    fps: int
    refinement_rounds: int = 0

    def __len__(self) -> int:
        return len(self.frames)

    def to_dict(self) -> dict:
        return {
            "fps": self.fps,
            "refinement_rounds": self.refinement_rounds,
            "frames": [
                {
                    "time_s": f.time_s,
                    "actors": {
                        k: {"position": list(s.position), "rotation": list(s.rotation.as_tuple())}
                        for k, s in sorted(f.actors.items())
                    },
                }
                for f in self.frames
            ],
        }


@dataclass(frozen=True)
class Violation:
    frame_index: int
    actor: str
    rot_deg: float
    trans_m: float

    def to_dict(self) -> dict:
        return {"frame": self.frame_index, "actor": self.actor, "rot_deg": self.rot_deg, "trans_m": self.trans_m}

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        return cls(int(d["frame"]), d["actor"], float(d["rot_deg"]), float(d["trans_m"]))


# ------------------------------------------------------------------ evaluation

def initial_states(layout, camera: CameraPose) -> dict[str, ActorState]:
    states = {
        i.instance_id: ActorState(i.transform.translation, i.transform.rotation, i.transform.scale)
        for i in layout.instances
    }
    states["camera"] = ActorState(camera.center(), camera.rotation)
    return states


def _lerp(a: Vec3, b: Vec3, u: float) -> Vec3:
    return Vec3(*((1.0 - u) * x + u * y for x, y in zip(a, b)))


def _heading(actor: str, s: ActorState) -> np.ndarray:
    m = s.rotation.matrix()
    return m[2].copy() if actor == "camera" else m[:, 0].copy()


def apply_action(action: Action, s: ActorState, u: float) -> ActorState:
    """State of ``action``'s actor at fraction ``u`` of the action, starting from ``s``."""
    k, tg = action.kind, action.target
    if k == "hold" or (u == 0.0 and k != "orbit_camera"):
        return s
    if k == "move_to":
        return replace(s, position=_lerp(s.position, Vec3(*tg["position"]), u))
    if k == "rotate_to":
        return replace(s, rotation=s.rotation.slerp(Rotation(*tg["rotation"]), u))
    if k == "dolly":
        d = _heading(action.actor, s) * (tg["distance"] * u)
        return replace(s, position=Vec3.of(s.position.as_array() + d))
    if k == "orbit_camera":
        az = math.radians((1.0 - u) * tg["start_azimuth_deg"] + u * tg["end_azimuth_deg"])
        c = tg["center"]
        p = Vec3(c[0] + tg["radius"] * math.cos(az), c[1] + tg["radius"] * math.sin(az), tg["height"])
        if action.actor == "camera":
            return replace(s, position=p, rotation=CameraPose.look_at(p, c).rotation)
        return replace(s, position=p)
    raise ValueError(k)


def state_at(plan: ActionPlan, actor: str, t: float, s0: ActorState) -> ActorState:
    """Closed-form actor state at time ``t``: completed actions applied in order,
    the active one interpolated, later ones ignored."""
    s = s0
    for a in plan.actions:
        if a.actor != actor or t < a.start_s:
            continue
        u = 1.0 if t >= a.end_s else (t - a.start_s) / a.duration
        s = apply_action(a, s, u)
    return s


def frame_count(plan: ActionPlan, max_frames: int = MAX_FRAMES) -> int:
    return max(1, min(int(round(plan.duration_s * plan.fps)), max_frames))


def sample_frames(plan: ActionPlan, layout, camera: CameraPose, max_frames: int = MAX_FRAMES) -> FrameSequence:
    """Frames at ``t_k = k / fps`` for ``k < round(duration * fps)`` (capped)."""
    s0 = initial_states(layout, camera)
    for a in plan.actions:
        if a.actor not in s0:
            raise UnknownActor(a.actor)
    frames = []
    for k in range(frame_count(plan, max_frames)):
        t = k / plan.fps
        frames.append(FrameState(t, {name: state_at(plan, name, t, s) for name, s in s0.items()}))
    return FrameSequence(frames, plan.fps)


def check_temporal(seq: FrameSequence, budget: SmoothnessBudget = SmoothnessBudget()) -> list[Violation]:
    """One violation per consecutive frame pair and actor whose rotation (geodesic)
    or translation step exceeds the budget; indexed by the later frame."""
    if len(seq.frames) < 2:
        raise TooFewFrames(f"need at least 2 frames, got {len(seq.frames)}")
    out = []
    for k in range(1, len(seq.frames)):
        prev, cur = seq.frames[k - 1].actors, seq.frames[k].actors
        for actor in sorted(cur):
            a, b = prev[actor], cur[actor]
            rot = math.degrees(a.rotation.angle_to(b.rotation))
            trans = (b.position - a.position).norm()
            if rot > budget.max_rot_deg_per_frame + _TOL or trans > budget.max_trans_m_per_frame + _TOL:
                out.append(Violation(k, actor, rot, trans))
    return out


# ------------------------------------------------------------------ refinement

def action_extent(plan: ActionPlan, action: Action, s0: ActorState) -> tuple[float, float]:
    """Total rotation (degrees) and path length (meters) of one action."""
    start = s0
    for a in plan.actions:
        if a is action:
            break
        if a.actor == action.actor:
            start = apply_action(a, start, 1.0)
    end = apply_action(action, start, 1.0)
    rot = math.degrees(start.rotation.angle_to(end.rotation))
    if action.kind == "orbit_camera":
        tg = action.target
        sweep = math.radians(abs(tg["end_azimuth_deg"] - tg["start_azimuth_deg"]))
        trans = tg["radius"] * sweep
        if action.actor == "camera":
            rot = max(rot, math.degrees(sweep))
    else:
        trans = (end.position - start.position).norm()
    return rot, trans


def stretch_plan(plan, violations, budget: SmoothnessBudget, layout, camera: CameraPose) -> ActionPlan:
    """Lengthen every action active at a violation so its per-frame step is at most
    ``STRETCH_FACTOR`` of the budget; later actions shift by the added time."""
    if isinstance(plan, dict):
        plan = ActionPlan.from_dict(plan)
    violations = [Violation.from_dict(v) if isinstance(v, dict) else v for v in violations]
    s0 = initial_states(layout, camera)
    hit: set[int] = set()
    for v in violations:
        t0, t1 = (v.frame_index - 1) / plan.fps, v.frame_index / plan.fps
        for i, a in enumerate(plan.actions):
            if a.actor == v.actor and a.start_s < t1 + _TOL and a.end_s > t0 - _TOL:
                hit.add(i)
    new_durations = {}
    for i in sorted(hit):
        a = plan.actions[i]
        rot, trans = action_extent(plan, a, s0[a.actor])
        frames = max(
            rot / (STRETCH_FACTOR * budget.max_rot_deg_per_frame),
            trans / (STRETCH_FACTOR * budget.max_trans_m_per_frame),
        )
        need = math.ceil(frames - 1e-9) / plan.fps
        if need > a.duration + _TOL:
            new_durations[i] = need
    if not new_durations:
        return plan
    # shift: each action starts later by the extra time of every stretched action
    # that ended at or before its start
    actions = []
    for i, a in enumerate(plan.actions):
        shift = sum(d - plan.actions[j].duration for j, d in new_durations.items() if plan.actions[j].end_s <= a.start_s + _TOL)
        dur = new_durations.get(i, a.duration)
        actions.append(replace(a, start_s=a.start_s + shift, end_s=a.start_s + shift + dur))
    extra = sum(d - plan.actions[j].duration for j, d in new_durations.items())
    duration = max(plan.duration_s + extra, max(a.end_s for a in actions))
    return ActionPlan(tuple(actions), duration, plan.fps)


@dataclass
class RefineResult:
    sequence: FrameSequence
    rounds_used: int
    converged: bool
    plan: ActionPlan
    violations: list[Violation]
    history: list[int] = field(default_factory=list)


def refine_plan(
    plan: ActionPlan,
    layout,
    camera: CameraPose,
    budget: SmoothnessBudget = SmoothnessBudget(),
    gateway=None,
    max_rounds: int = 3,
    max_frames: int = MAX_FRAMES,
) -> RefineResult:
    """Sample, check, and revise until no violations remain or ``max_rounds``
    revisions were made. Offline (``gateway is None``) revisions stretch actions;
    otherwise the planner role receives the violations and returns a new plan."""
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    best = None
    history = []
    rounds = 0
    while True:
        seq = sample_frames(plan, layout, camera, max_frames)
        seq.refinement_rounds = rounds
        viol = check_temporal(seq, budget) if len(seq.frames) >= 2 else []
        history.append(len(viol))
        if best is None or len(viol) < len(best[2]):
            best = (seq, plan, viol)
        if not viol or rounds == max_rounds:
            break
        plan = _revise(plan, viol, budget, layout, camera, gateway)
        rounds += 1
    seq, best_plan, viol = best
    return RefineResult(seq, rounds, not viol, best_plan, viol, history)


def _revise(plan, viol, budget, layout, camera, gateway) -> ActionPlan:
    if gateway is None:
        return stretch_plan(plan, viol, budget, layout, camera)
    from .gateway import StructuredRequest
    from .gateway.prompts import planner_refine_prompt

    payload = [v.to_dict() for v in viol]
    req = StructuredRequest(
        "planner",
        planner_refine_prompt(plan.to_dict(), payload, budget.to_dict()),
        "ActionPlan",
        context={"plan": plan, "violations": payload, "budget": budget, "layout": layout, "camera": camera},
    )
    revised = ActionPlan.from_dict(gateway.send(req))
    _check_actors(revised, layout)
    return revised


def _check_actors(plan: ActionPlan, layout) -> None:
    for a in plan.actions:
        if a.actor != "camera" and a.actor not in layout:
            raise UnknownActor(a.actor)


def plan_from_instruction(instruction: str, layout, gateway, camera: CameraPose, fps: int = DEFAULT_FPS) -> ActionPlan:
    from .gateway import StructuredRequest
    from .gateway.prompts import planner_prompt

    if not instruction.strip():
        raise ValueError("empty instruction")
    objects = [
        f"{i.instance_id} {[round(c, 4) for c in i.position]} yaw={math.degrees(i.transform.rotation.yaw()):.1f}"
        for i in layout.instances
    ]
    req = StructuredRequest(
        "planner",
        planner_prompt(instruction, objects, tuple(camera.center()), fps),
        "ActionPlan",
        context={
            "instruction": instruction,
            "layout": layout,
            "camera": camera,
            "scene_center": layout.content_center(),
            "fps": fps,
        },
    )
    plan = ActionPlan.from_dict(gateway.send(req))
    _check_actors(plan, layout)
    return plan


def state_payload(seq: FrameSequence) -> list[dict[str, Any]]:
    return seq.to_dict()["frames"]
