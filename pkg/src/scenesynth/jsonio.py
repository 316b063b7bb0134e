"""Canonical JSON: sorted keys, 9-significant-digit positional floats,
scalar-only lists kept on one line, trailing newline.

The encoding is a fixed point of ``dumps(loads(x))`` so exported files can be
compared byte-for-byte against golden copies.
"""
from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

SIG_DIGITS = 9


def format_float(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite float {x!r}")
    if x == 0.0:
        return "0"
    return np.format_float_positional(x, precision=SIG_DIGITS, unique=False, fractional=False, trim="-")


def _scalar(v: Any) -> str | None:
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    return None


def _encode(v: Any, indent: int) -> str:
    s = _scalar(v)
    if s is not None:
        return s
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_encode(v[k], indent + 1)}" for k in sorted(v)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        seq = list(v)
        if not seq:
            return "[]"
        scalars = [_scalar(x) for x in seq]
        if all(x is not None for x in scalars):
            return "[" + ", ".join(scalars) + "]"
        return "[\n" + ",\n".join(pad + _encode(x, indent + 1) for x in seq) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(v).__name__}")


def dumps(obj: Any) -> str:
    return _encode(obj, 0) + "\n"


def dump_bytes(obj: Any) -> bytes:
    return dumps(obj).encode("utf-8")


def loads(data: str | bytes) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)
