"""Bit-exact dataset writers: canonical scene JSON, PFM depth, PGM masks,
camera trajectories, object poses, and the hashed bundle manifest."""
from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from . import jsonio
from .assets import AssetRepository, SpatialConstraint
from .errors import TooManyInstances
from .geometry import Obb, Rotation, Transform, Vec3
from .layout import ObjectInstance, SceneLayout
from .render import RenderedView

SCHEMA = 1


def _round9(x: float) -> float:
    return float(jsonio.format_float(x))


def canonical_quaternion(q: Rotation) -> tuple[float, float, float, float]:
    """Quaternion whose 9-digit rendering survives decode-normalize-encode unchanged."""
    cur = tuple(_round9(c) for c in q.as_tuple())
    for _ in range(8):
        nxt = tuple(_round9(c) for c in Rotation(*cur).as_tuple())
        if nxt == cur:
            break
        cur = nxt
    return cur


# ------------------------------------------------------------------ scene

def scene_dict(layout: SceneLayout) -> dict:
    return {
        "schema": SCHEMA,
        "extent": list(layout.scene_extent),
        "instances": [
            {
                "id": i.instance_id,
                "asset_id": i.asset_id,
                "position": list(i.transform.translation),
                "rotation": list(canonical_quaternion(i.transform.rotation)),
                "scale": list(i.transform.scale),
                "bbox": list(i.obb.dims),
            }
            for i in layout.instances
        ],
        "constraints": [c.to_dict() for c in layout.constraints],
    }


def export_scene(layout: SceneLayout) -> bytes:
    return jsonio.dump_bytes(scene_dict(layout))


def import_scene(data: bytes | str, repo: AssetRepository | None = None) -> SceneLayout:
    d = jsonio.loads(data)
    repo = repo or AssetRepository.demo()
    layout = SceneLayout.empty(tuple(d["extent"]))
    for c in d["constraints"]:
        layout.add_constraint(SpatialConstraint.from_dict(c))
    for e in d["instances"]:
        rec = repo.get(e["asset_id"]) if e["asset_id"] in repo else None
        half = Vec3(*(b / 2.0 for b in e["bbox"]))
        inst = ObjectInstance(
            e["id"],
            e["asset_id"],
            Obb(Vec3(0.0, 0.0, half.z), half),
            Transform(Vec3(*e["position"]), Rotation(*e["rotation"]), Vec3(*e["scale"])),
            category=rec.category if rec else "",
            description=rec.description if rec else "",
            support_surface=rec.support_surface if rec else None,
        )
        layout.instances.append(inst)
        layout.grid.mark(inst.instance_id, inst.footprint)
    for inst in layout.instances:
        layout._refresh_support(inst.instance_id)
    return layout


# ------------------------------------------------------------------ images

def encode_pfm(depth: np.ndarray) -> bytes:
    """Grayscale little-endian PFM, bottom row first; non-finite values become 0.0."""
    h, w = depth.shape
    data = np.where(np.isfinite(depth), depth, 0.0).astype("<f4")
    return f"Pf\n{w} {h}\n-1.0\n".encode("ascii") + data[::-1].tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"Pf":
        raise ValueError("not a grayscale PFM")
    w, h = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)
    return arr[::-1].astype(np.float64)


def export_depth(view: RenderedView) -> bytes:
    return encode_pfm(view.depth)


def export_mask(view: RenderedView) -> bytes:
    inst = view.instance
    if inst.size and int(inst.max()) > 255:
        raise TooManyInstances(f"{int(inst.max())} instances do not fit an 8-bit mask")
    h, w = inst.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + inst.astype(np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


# ------------------------------------------------------------------ sequences

def trajectory_list(seq, K) -> list[dict]:
    intr = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy}
    return [
        {"frame": i, "time_s": f.time_s, "extrinsic": f.camera().matrix().ravel().tolist(), "intrinsic": intr}
        for i, f in enumerate(seq.frames)
    ]


def export_trajectory(seq, K) -> bytes:
    return jsonio.dump_bytes(trajectory_list(seq, K))


def export_poses(seq, instance_ids=None) -> bytes:
    frames = []
    for i, f in enumerate(seq.frames):
        ids = instance_ids if instance_ids is not None else sorted(k for k in f.actors if k != "camera")
        frames.append(
            {
                "frame": i,
                "instances": [
                    {"id": k, "position": list(f.actors[k].position), "rotation": list(f.actors[k].rotation.as_tuple())}
                    for k in ids
                ],
            }
        )
    return jsonio.dump_bytes(frames)


# ------------------------------------------------------------------ bundle files

def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class BundleWriter:
    """Writes files under ``root`` and remembers their length and hash."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.files: dict[str, dict] = {}

    def write(self, relpath: str, data: bytes) -> None:
        write_atomic(self.root / relpath, data)
        self.files[relpath] = {"bytes": len(data), "sha256": sha256(data)}

    def manifest(self, **fields) -> dict:
        return {"schema": SCHEMA, **fields, "files": dict(sorted(self.files.items()))}

    def finish(self, **fields) -> bytes:
        data = jsonio.dump_bytes(self.manifest(**fields))
        write_atomic(self.root / "manifest.json", data)
        problems = verify_bundle(self.root)
        if problems:
            raise OSError(f"bundle self-check failed: {problems}")
        return data


def verify_bundle(root: str | Path) -> list[str]:
    """Names of manifest entries whose file is missing or differs."""
    root = Path(root)
    manifest = jsonio.loads((root / "manifest.json").read_bytes())
    bad = []
    for rel, meta in manifest["files"].items():
        p = root / rel
        if not p.is_file():
            bad.append(f"missing {rel}")
            continue
        data = p.read_bytes()
        if len(data) != meta["bytes"] or sha256(data) != meta["sha256"]:
            bad.append(f"changed {rel}")
    return bad
