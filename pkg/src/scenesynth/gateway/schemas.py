"""JSON schemas for every structured payload that crosses the gateway."""
from __future__ import annotations

import jsonschema

from ..errors import SchemaError

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_quat = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_predicates = ["on", "above", "left_of", "right_of", "in_front_of", "behind", "near", "inside"]

SCENE_DECOMPOSITION = {
    "type": "object",
    "required": ["sub_scenes"],
    "properties": {
        "sub_scenes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["description", "assets"],
                "properties": {
                    "description": {"type": "string"},
                    "assets": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["label", "query"],
                            "properties": {
                                "label": {"type": "string", "minLength": 1},
                                "query": {"type": "string", "minLength": 1},
                                "asset_id": {"type": ["string", "null"]},
                            },
                        },
                    },
                    "constraints": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["predicate", "subject", "reference"],
                            "properties": {
                                "predicate": {"enum": _predicates},
                                "subject": {"type": "string"},
                                "reference": {"type": "string"},
                                "param": {"type": ["number", "null"]},
                                "ref_view": {"type": "integer", "minimum": 0},
                            },
                        },
                    },
                    "placements": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["label", "position"],
                            "properties": {"label": {"type": "string"}, "position": _vec3},
                        },
                    },
                },
            },
        }
    },
}

RELOCATION_PROPOSAL = {
    "type": "object",
    "required": ["instance_id", "position"],
    "properties": {
        "instance_id": {"type": "string"},
        "position": _vec3,
        "rationale": {"type": "string"},
    },
}

JUDGE_VERDICT = {
    "type": "object",
    "required": ["score", "rationale"],
    "properties": {
        "score": {"type": "number", "minimum": 0.0, "maximum": 1.0},
        "rationale": {"type": "string"},
        "view_index": {"type": "integer", "minimum": 0},
    },
}

_action = {
    "type": "object",
    "required": ["actor", "kind", "start_s", "end_s", "target"],
    "properties": {
        "actor": {"type": "string", "minLength": 1},
        "kind": {"enum": ["move_to", "rotate_to", "orbit_camera", "dolly", "hold"]},
        "start_s": {"type": "number", "minimum": 0},
        "end_s": {"type": "number", "minimum": 0},
        "target": {"type": "object"},
    },
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": "move_to"}}},
            "then": {"properties": {"target": {"required": ["position"], "properties": {"position": _vec3}}}},
        },
        {
            "if": {"properties": {"kind": {"const": "rotate_to"}}},
            "then": {"properties": {"target": {"required": ["rotation"], "properties": {"rotation": _quat}}}},
        },
        {
            "if": {"properties": {"kind": {"const": "orbit_camera"}}},
            "then": {
                "properties": {
                    "target": {
                        "required": ["center", "radius", "height", "start_azimuth_deg", "end_azimuth_deg"],
                        "properties": {
                            "center": _vec3,
                            "radius": {"type": "number", "exclusiveMinimum": 0},
                            "height": {"type": "number"},
                            "start_azimuth_deg": {"type": "number"},
                            "end_azimuth_deg": {"type": "number"},
                        },
                    }
                }
            },
        },
        {
            "if": {"properties": {"kind": {"const": "dolly"}}},
            "then": {"properties": {"target": {"required": ["distance"], "properties": {"distance": {"type": "number"}}}}},
        },
    ],
}

ACTION_PLAN = {
    "type": "object",
    "required": ["actions", "duration_s", "fps"],
    "properties": {
        "actions": {"type": "array", "items": _action},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "fps": {"type": "integer", "minimum": 1},
    },
}

SCHEMAS = {
    "SceneDecomposition": SCENE_DECOMPOSITION,
    "RelocationProposal": RELOCATION_PROPOSAL,
    "JudgeVerdict": JUDGE_VERDICT,
    "ActionPlan": ACTION_PLAN,
}


def validate(payload, schema_id: str) -> dict:
    try:
        schema = SCHEMAS[schema_id]
    except KeyError:
        raise SchemaError(f"unregistered schema {schema_id!r}") from None
    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{schema_id} invalid at {path}: {exc.message}") from None
    return payload
