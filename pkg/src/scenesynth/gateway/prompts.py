"""Prompt templates for the four gateway roles.

These are reconstructions written for this engine; they are not the prompts
of any published system. Rule-based mocks ignore them and read the request
context instead.
"""
from __future__ import annotations

import json

COLLECTOR = """Decompose the scene instruction below into sub-scenes.
For every object give a unique label (noun, suffixed _1, _2 ... when repeated) and a short
retrieval query. Spatial relations use predicates from: on, above, left_of, right_of,
in_front_of, behind, near, inside. Explicit coordinates become placements.
Schema: {{"sub_scenes": [{{"description": str, "assets": [{{"label": str, "query": str}}],
"constraints": [{{"predicate": str, "subject": label, "reference": label, "param": number|null}}],
"placements": [{{"label": str, "position": [x, y, z]}}]}}]}}

Instruction: {instruction}"""

JUDGE = """The attached image is view {view_index} of a synthetic scene.
Question: is the {subject} {relation} the {reference}?
Answer with your confidence that the relation holds as seen in THIS view only.
Schema: {{"score": number in [0, 1], "rationale": str}}"""

LOCATOR = """Object {instance_id} violates: {constraint}. Its bottom-center is at {position}.
Scene objects (id, bottom-center, size):
{objects}
Propose a new bottom-center position in meters (Z up).
Schema: {{"instance_id": str, "position": [x, y, z], "rationale": str}}"""

PLANNER = """Scene state (id, position, yaw in degrees):
{objects}
Camera position: {camera}
Write an executable motion plan at {fps} fps for: {instruction}
Action kinds: move_to {{position}}, rotate_to {{rotation quaternion w,x,y,z}},
orbit_camera {{center, radius, height, start_azimuth_deg, end_azimuth_deg}}, dolly {{distance}}, hold {{}}.
Schema: {{"fps": int, "duration_s": number, "actions": [{{"actor": str, "kind": str,
"start_s": number, "end_s": number, "target": object}}]}}"""

PLANNER_REFINE = """The frame sequence produced by this plan is not smooth.
Plan: {plan}
Violations (frame, actor, measured delta): {violations}
Per-frame budget: {budget}
Revise the plan: stretch the offending actions or insert intermediate steps. Reply with the full plan."""

RELATION_WORDS = {
    "on": "on",
    "above": "above",
    "left_of": "to the left of",
    "right_of": "to the right of",
    "in_front_of": "in front of",
    "behind": "behind",
    "near": "near",
    "inside": "inside",
}


def collector_prompt(instruction: str) -> str:
    return COLLECTOR.format(instruction=instruction)


def judge_prompt(constraint, view_index: int) -> str:
    return JUDGE.format(
        view_index=view_index,
        subject=constraint.subject,
        relation=RELATION_WORDS[constraint.predicate],
        reference=constraint.reference,
    )


def locator_prompt(instance_id: str, constraint, position, objects: list[str]) -> str:
    return LOCATOR.format(
        instance_id=instance_id,
        constraint=constraint.key(),
        position=json.dumps([round(c, 4) for c in position]),
        objects="\n".join(objects),
    )


def planner_prompt(instruction: str, objects: list[str], camera, fps: int) -> str:
    return PLANNER.format(
        instruction=instruction,
        objects="\n".join(objects),
        camera=json.dumps([round(c, 4) for c in camera]),
        fps=fps,
    )


def planner_refine_prompt(plan: dict, violations: list[dict], budget: dict) -> str:
    return PLANNER_REFINE.format(
        plan=json.dumps(plan, sort_keys=True), violations=json.dumps(violations), budget=json.dumps(budget)
    )
