"""Deterministic rule-table backends for every gateway role.

Collector rules
    * Sentences (split on ``. ; ! ?``) become sub-scenes.
    * A noun phrase is a determiner or count (``a an the one two ... 9``) followed by
      words up to the next preposition, conjunction or punctuation; its last word is
      the head noun, the earlier words are kept in the retrieval query.
    * Head nouns are singularized through ``NOUNS``; unknown heads pass through
      verbatim and fail retrieval later.
    * ``the <noun>`` reuses the most recent instance of that noun.
    * ``on``/``inside`` attach every earlier noun phrase of the sentence that has no
      support yet to the following phrase; every other preposition relates the
      phrase group just before it to the phrase just after it.
    * ``at (x, y, z)`` right after a phrase pins that object's position.

Planner rules (clauses split on ``then``, ``and``, ``,`` and ``.``)
    =========================================  =============================  =========
    phrase                                     action                         default
    =========================================  =============================  =========
    turns left / right / around                rotate_to yaw +90 / -90 / 180  1 s / 2 s
    moves|flies|drives|goes forward|backward   move_to along heading          2 m, 1 m/s
    moves left|right                           move_to sideways               2 m, 1 m/s
    rises|goes up / descends|goes down         move_to along Z                1 m, 1 m/s
    holds still|waits|stays                    hold                           1 s
    orbits (camera) [clockwise]                orbit_camera +360 (-360)       4 s
    ... a quarter / half turn                  sweep 90 / 180 degrees
    dollies|zooms in / out                     dolly +0.5 / -0.5 m            1 s
    =========================================  =============================  =========
    ``for N seconds`` overrides the duration and ``N m|meters`` the distance; the
    actor is the first known noun of the clause, else ``camera`` for camera verbs,
    else the previous clause's actor, else ``camera``.

Judge rules
    Delegate to the analytic geometric judge for the requested view.
"""
from __future__ import annotations

import math
import re
from typing import Any

from ..errors import SchemaError, UnknownActor, UnknownRole
from .client import ROLES, StructuredRequest
from .schemas import validate

NUMBER_WORDS = {
    "a": 1, "an": 1, "one": 1, "the": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
NOUNS = {
    "cup": "cup", "mug": "mug", "table": "table", "desk": "desk", "laptop": "laptop",
    "airplane": "airplane", "plane": "airplane", "aeroplane": "airplane", "sofa": "sofa",
    "couch": "sofa", "chair": "chair", "lamp": "lamp", "book": "book", "plant": "plant",
    "bowl": "bowl", "plate": "plate", "bottle": "bottle", "apple": "apple", "phone": "phone",
    "tray": "tray", "box": "box", "vase": "vase", "candle": "candle", "keyboard": "keyboard",
    "monitor": "monitor", "teapot": "teapot", "saucer": "saucer", "car": "car", "bed": "bed",
    "shelf": "shelf", "board": "board",
}
PREPOSITIONS = [
    ("on top of", "on"), ("to the left of", "left_of"), ("to the right of", "right_of"),
    ("in front of", "in_front_of"), ("left of", "left_of"), ("right of", "right_of"),
    ("next to", "near"), ("close to", "near"), ("onto", "on"), ("on", "on"), ("above", "above"),
    ("over", "above"), ("behind", "behind"), ("near", "near"), ("beside", "near"),
    ("inside", "inside"), ("into", "inside"), ("in", "inside"),
]
STOP = {"and", "with", "place", "put", "set", "there", "is", "are", "of", "add", "stand", "sits"}

_POS_RE = re.compile(
    r"\bat\s*\(\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)"
)


def singular(word: str) -> str:
    if word in NOUNS:
        return NOUNS[word]
    for suffix, repl in (("ies", "y"), ("es", ""), ("s", "")):
        if word.endswith(suffix) and word[: -len(suffix)] + repl in NOUNS:
            return NOUNS[word[: -len(suffix)] + repl]
    return word


def _match_prep(tokens: list[str], i: int) -> tuple[str, int] | None:
    for phrase, pred in PREPOSITIONS:
        words = phrase.split()
        if tokens[i : i + len(words)] == words:
            return pred, len(words)
    return None


def decompose(instruction: str) -> dict:
    """Collector rule table: instruction text -> SceneDecomposition payload."""
    positions: list[list[float]] = []

    def _pos(m):
        positions.append([float(m.group(k)) for k in (1, 2, 3)])
        return f" atpos{len(positions) - 1} "

    text = _POS_RE.sub(_pos, instruction)
    sentences = [s.strip() for s in re.split(r"[.;!?]", text) if s.strip()]

    instances: list[dict[str, Any]] = []  # noun, query
    last_of: dict[str, int] = {}
    subs = []
    for sent in sentences:
        tokens = re.findall(r"[a-z0-9_]+|,", sent.lower())
        items: list[tuple[str, Any]] = []  # ("np", idx) | ("prep", pred) | ("pos", k) | ("sep", None)
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            prep = _match_prep(tokens, i)
            if tok in NUMBER_WORDS or tok.isdigit():
                count = NUMBER_WORDS.get(tok) or int(tok)
                definite = tok == "the"
                j = i + 1
                words = []
                while j < len(tokens) and tokens[j] != "," and not _match_prep(tokens, j) \
                        and tokens[j] not in STOP and not tokens[j].startswith("atpos"):
                    words.append(tokens[j])
                    j += 1
                if not words:
                    i = j
                    continue
                noun = singular(words[-1])
                query = " ".join(words[:-1] + [noun])
                group = []
                if definite and noun in last_of:
                    group.append(last_of[noun])
                else:
                    for _ in range(count):
                        instances.append({"noun": noun, "query": query})
                        last_of[noun] = len(instances) - 1
                        group.append(len(instances) - 1)
                items.append(("np", group))
                i = j
            elif prep is not None:
                items.append(("prep", prep[0]))
                i += prep[1]
            elif tok.startswith("atpos"):
                items.append(("pos", int(tok[5:])))
                i += 1
            elif tok == ",":
                items.append(("sep", None))
                i += 1
            else:
                i += 1

        used: list[int] = []
        relations: list[tuple[str, int, int]] = []
        placements: list[tuple[int, list[float]]] = []
        supported: set[int] = set()
        prev_group: list[int] = []
        pending = None
        for kind, val in items:
            if kind == "np":
                for idx in val:
                    if idx not in used:
                        used.append(idx)
                if pending is not None and prev_group:
                    ref = val[0]
                    if pending in ("on", "inside"):
                        for idx in used:
                            if idx != ref and idx not in supported and idx not in val:
                                relations.append((pending, idx, ref))
                                supported.add(idx)
                    else:
                        for idx in prev_group:
                            if idx != ref:
                                relations.append((pending, idx, ref))
                    pending = None
                    prev_group = list(val)
                elif prev_group and pending is None:
                    prev_group = prev_group + list(val)
                else:
                    prev_group = list(val)
            elif kind == "prep":
                pending = val
            elif kind == "pos" and prev_group:
                placements.append((prev_group[-1], positions[val]))
        if used:
            desc = re.sub(
                r"\s*atpos(\d+)\s*",
                lambda m: " at ({}, {}, {})".format(*(f"{c:g}" for c in positions[int(m.group(1))])),
                sent,
            ).strip()
            subs.append({"description": desc, "used": used, "relations": relations, "placements": placements})

    nouns = [inst["noun"] for inst in instances]
    from ..assets import label_assets

    labels = label_assets(nouns)
    out = []
    seen: set[int] = set()
    for s in subs:
        fresh = [i for i in s["used"] if i not in seen]
        seen.update(fresh)
        out.append(
            {
                "description": s["description"],
                "assets": [{"label": labels[i], "query": instances[i]["query"]} for i in fresh],
                "constraints": [
                    {"predicate": p, "subject": labels[a], "reference": labels[b], "param": 0.3 if p == "near" else None}
                    for p, a, b in s["relations"]
                ],
                "placements": [{"label": labels[i], "position": pos} for i, pos in s["placements"]],
            }
        )
    return {"sub_scenes": out}


_DURATION_RE = re.compile(r"for (\d+(?:\.\d+)?) ?(?:s|sec|secs|second|seconds)\b")
_DISTANCE_RE = re.compile(r"(\d+(?:\.\d+)?) ?(?:m|meter|meters|metre|metres)\b")

CAMERA_VERBS = ("orbit", "dolly", "dollies", "zoom", "pan")


def _resolve_actor(word: str, layout) -> str | None:
    if word == "camera":
        return "camera"
    noun = singular(word)
    for inst in layout.instances:
        if inst.instance_id == word:
            return inst.instance_id
    for inst in layout.instances:
        if noun in (inst.category, inst.asset_id) or inst.instance_id.rsplit("_", 1)[0] == noun:
            return inst.instance_id
    return None


def plan_actions(instruction: str, layout, camera, scene_center, fps: int) -> dict:
    """Planner rule table: instruction -> ActionPlan payload with absolute targets."""
    from ..geometry import Rotation, Vec3

    clauses = [c.strip() for c in re.split(r"\bthen\b|\band\b|,|\.", instruction.lower()) if c.strip()]
    state: dict[str, dict[str, Any]] = {}
    for inst in layout.instances:
        state[inst.instance_id] = {"pos": inst.transform.translation, "rot": inst.transform.rotation}
    cam_center = camera.center()
    state["camera"] = {"pos": cam_center, "rot": camera.rotation}

    actions = []
    t = 0.0
    actor = None
    for clause in clauses:
        words = re.findall(r"[a-z0-9_.]+", clause)
        clause_actor = None
        for w in words:
            a = _resolve_actor(w, layout)
            if a is not None:
                clause_actor = a
                break
        if clause_actor is None and any(v in clause for v in CAMERA_VERBS):
            clause_actor = "camera"
        if clause_actor is None:
            known_noun = next((w for w in words if w in NOUNS or singular(w) in NOUNS.values()), None)
            if known_noun is not None:
                raise UnknownActor(known_noun)
        actor = clause_actor or actor or "camera"
        st = state[actor]
        dur_m = _DURATION_RE.search(clause)
        dist_m = _DISTANCE_RE.search(clause)
        duration = float(dur_m.group(1)) if dur_m else None
        distance = float(dist_m.group(1)) if dist_m else None

        kind = None
        target: dict[str, Any] = {}
        if "turn" in clause and "orbit" not in clause:
            deg = 180.0 if "around" in clause else (-90.0 if "right" in clause else 90.0)
            new_rot = Rotation.from_yaw_pitch_roll(math.radians(deg)) * st["rot"]
            if actor == "camera":
                # camera rotations are world-to-camera; yaw the viewing direction about world Z
                new_rot = st["rot"] * Rotation.from_yaw_pitch_roll(-math.radians(deg))
            kind, target = "rotate_to", {"rotation": list(new_rot.as_tuple())}
            duration = duration or (2.0 if deg == 180.0 else 1.0)
            st["rot"] = new_rot
        elif "orbit" in clause:
            c = scene_center
            p = st["pos"]
            dx, dy = p.x - c.x, p.y - c.y
            radius = math.hypot(dx, dy)
            start = math.degrees(math.atan2(dy, dx))
            sweep = 90.0 if "quarter" in clause else 180.0 if "half" in clause else 360.0
            if "clockwise" in clause and "counter" not in clause:
                sweep = -sweep
            kind = "orbit_camera"
            target = {
                "center": list(c), "radius": radius, "height": p.z,
                "start_azimuth_deg": start, "end_azimuth_deg": start + sweep,
            }
            duration = duration or 4.0
            end_az = math.radians(start + sweep)
            from ..geometry import CameraPose

            st["pos"] = Vec3(c.x + radius * math.cos(end_az), c.y + radius * math.sin(end_az), p.z)
            st["rot"] = CameraPose.look_at(st["pos"], c).rotation
        elif "dolly" in clause or "dollies" in clause or "zoom" in clause:
            d = distance if distance is not None else 0.5
            if "out" in clause:
                d = -d
            kind, target = "dolly", {"distance": d}
            duration = duration or 1.0
            fwd = st["rot"].matrix()[2]
            st["pos"] = Vec3(*(st["pos"].as_array() + fwd * d))
        elif any(w in clause for w in ("hold", "wait", "stay", "still", "pause")):
            kind, target = "hold", {}
            duration = duration or 1.0
        elif any(w in clause for w in ("move", "fly", "flies", "drive", "go", "slide", "rise", "climb", "descend", "walk", "roll")):
            heading = st["rot"].matrix()[:, 0] if actor != "camera" else st["rot"].matrix()[2]
            hx, hy = heading[0], heading[1]
            n = math.hypot(hx, hy) or 1.0
            fwd = (hx / n, hy / n, 0.0)
            left = (-fwd[1], fwd[0], 0.0)
            if any(w in clause for w in ("rise", "climb", " up")) or clause.endswith("up"):
                direction, default = (0.0, 0.0, 1.0), 1.0
            elif any(w in clause for w in ("descend", "down")):
                direction, default = (0.0, 0.0, -1.0), 1.0
            elif "backward" in clause or "back" in clause.split():
                direction, default = tuple(-c for c in fwd), 2.0
            elif "left" in clause:
                direction, default = left, 2.0
            elif "right" in clause:
                direction, default = tuple(-c for c in left), 2.0
            else:
                direction, default = fwd, 2.0
            d = distance if distance is not None else default
            p = st["pos"]
            new = Vec3(p.x + direction[0] * d, p.y + direction[1] * d, p.z + direction[2] * d)
            kind, target = "move_to", {"position": list(new)}
            duration = duration or d / 1.0
            st["pos"] = new
        if kind is None:
            continue
        actions.append({"actor": actor, "kind": kind, "start_s": t, "end_s": t + duration, "target": target})
        t += duration
    if not actions:
        raise SchemaError(f"no executable action in {instruction!r}")
    return {"fps": fps, "duration_s": t, "actions": actions}


class MockGateway:
    """Rule-based stand-in for every role; responses depend only on request content and seed."""

    def __init__(self, seed: int = 0, roles=ROLES):
        for r in roles:
            if r not in ROLES:
                raise UnknownRole(r)
        self.seed = seed
        self.roles = tuple(roles)
        self.requests_made = 0

    def send(self, request: StructuredRequest) -> dict:
        if request.role_tag not in self.roles:
            raise UnknownRole(request.role_tag)
        self.requests_made += 1
        handler = getattr(self, f"_{request.role_tag}")
        return validate(handler(request), request.expected_schema)

    def _collector(self, request):
        return decompose(request.context["instruction"])

    def _judge(self, request):
        from ..optimizer import geometric_judge

        ctx = request.context
        view = ctx["view"]
        (verdict,) = geometric_judge(ctx["layout"], [view], ctx["constraint"], **ctx.get("judge_params", {}))
        return {"score": verdict.score, "rationale": verdict.rationale, "view_index": verdict.view_index}

    def _locator(self, request):
        from ..optimizer import propose_relocation

        ctx = request.context
        inst_id, pos = propose_relocation(ctx["layout"], ctx["constraint"], **ctx.get("params", {}))
        return {"instance_id": inst_id, "position": list(pos), "rationale": "rule-based relocation"}

    def _planner(self, request):
        ctx = request.context
        if "violations" in ctx:
            from ..planner import stretch_plan

            return stretch_plan(ctx["plan"], ctx["violations"], ctx["budget"], ctx["layout"], ctx["camera"]).to_dict()
        return plan_actions(ctx["instruction"], ctx["layout"], ctx["camera"], ctx["scene_center"], ctx["fps"])


def mock_backend(role_tag: str, seed: int = 0) -> MockGateway:
    if role_tag not in ROLES:
        raise UnknownRole(role_tag)
    return MockGateway(seed, roles=(role_tag,))
