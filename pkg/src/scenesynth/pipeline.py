"""End-to-end pipeline: config, per-scene stages and bundle output.

collect -> layout -> optimize -> plan -> refine -> render frames -> export.
"""
from __future__ import annotations

import dataclasses
import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from . import export, jsonio
from .assets import AssetRepository, InstructionInput, collect
from .errors import ConfigError, GatewayError, SceneSynthError
from .layout import SceneLayout, build_layout
from .optimizer import (
    GatewayJudge,
    GatewayLocator,
    camera_ring,
    misplacement_cameras,
    optimize_layout,
)
from .planner import FrameState, RefineResult, SmoothnessBudget, plan_from_instruction, refine_plan
from .render import render_view

EXIT_OK = 0
EXIT_OPTIMIZATION = 2
EXIT_REFINEMENT = 3
EXIT_GATEWAY = 4
EXIT_CONFIG = 5


# ------------------------------------------------------------------ config

@dataclass
class SceneConfig:
    instruction: str = "Place two cups on a table."
    motion: str = "the camera orbits a quarter turn around the scene for 2 seconds"
    extent: list = field(default_factory=lambda: [-3.0, -3.0, 3.0, 3.0])
    cell_size: float = 0.05
    clearance: float = 0.05
    random_yaw: bool = False
    # empty means the bundled demo manifest
    asset_manifest: str = ""


@dataclass
class RetrievalConfig:
    top_k: int = 3


@dataclass
class OptimizerConfig:
    views: int = 2
    threshold: float = 0.8
    max_iter: int = 5
    elevation_deg: float = 30.0
    radius_factor: float = 1.5


@dataclass
class PlannerConfig:
    fps: int = 24
    max_rot_deg_per_frame: float = 15.0
    max_trans_m_per_frame: float = 0.15
    max_rounds: int = 3
    max_frames: int = 240


@dataclass
class RenderConfig:
    width: int = 128
    height: int = 128


@dataclass
class GatewaySection:
    live: bool = False
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "gpt-4o"
    timeout_s: float = 30.0
    max_attempts: int = 5
    backoff_base_ms: float = 500.0
    backoff_factor: float = 2.0
    max_inflight: int = 4
    # 0 disables the request budget
    request_budget: int = 0


@dataclass
class BatchConfig:
    scenes: int = 1
    workers: int = 1


@dataclass
class MisplacementConfig:
    # replace the instruction scene with the seeded float benchmark scene
    enabled: bool = False


@dataclass
class Config:
    scene: SceneConfig = field(default_factory=SceneConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    gateway: GatewaySection = field(default_factory=GatewaySection)
    batch: BatchConfig = field(default_factory=BatchConfig)
    misplacement: MisplacementConfig = field(default_factory=MisplacementConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(jsonio.dump_bytes(self.to_dict())).hexdigest()

    def validate(self) -> "Config":
        o, p, r, b = self.optimizer, self.planner, self.render, self.batch
        checks = [
            (o.views >= 1, "optimizer.views must be >= 1"),
            (0.0 < o.threshold <= 1.0, "optimizer.threshold must be in (0, 1]"),
            (o.max_iter >= 1, "optimizer.max_iter must be >= 1"),
            (p.fps >= 1, "planner.fps must be >= 1"),
            (p.max_rounds >= 1, "planner.max_rounds must be >= 1"),
            (p.max_frames >= 2, "planner.max_frames must be >= 2"),
            (p.max_rot_deg_per_frame > 0 and p.max_trans_m_per_frame > 0, "planner budgets must be positive"),
            (r.width >= 1 and r.height >= 1, "render size must be positive"),
            (b.scenes >= 1 and b.workers >= 1, "batch.scenes and batch.workers must be >= 1"),
            (len(self.scene.extent) == 4, "scene.extent needs 4 numbers"),
            (self.scene.cell_size > 0, "scene.cell_size must be positive"),
            (self.retrieval.top_k >= 1, "retrieval.top_k must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self


def _fill(obj, values: dict, where: str) -> None:
    for key, val in values.items():
        if not hasattr(obj, key):
            raise ConfigError(f"unknown config key {where}{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key} must be a table")
            _fill(cur, val, f"{where}{key}.")
            continue
        if isinstance(cur, bool):
            ok = isinstance(val, bool)
        elif isinstance(cur, int):
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif isinstance(cur, float):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
            val = float(val)
        elif isinstance(cur, list):
            ok = isinstance(val, list) and all(isinstance(v, (int, float)) for v in val)
            val = [float(v) for v in val] if ok else val
        else:
            ok = isinstance(val, str)
        if not ok:
            raise ConfigError(f"{where}{key}: expected {type(cur).__name__}, got {val!r}")
        setattr(obj, key, val)


def parse_config(text: str | bytes = b"", overrides: dict | None = None) -> Config:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        values = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from exc
    cfg = Config()
    _fill(cfg, values, "")
    if overrides:
        _fill(cfg, overrides, "")
    return cfg.validate()


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> Config:
    if path is None:
        return parse_config("", overrides)
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data, overrides)


def demo_config_path() -> Path:
    return Path(__file__).parent / "data" / "demo.toml"


# ------------------------------------------------------------------ stages

def load_repo(cfg: Config) -> AssetRepository:
    if not cfg.scene.asset_manifest:
        return AssetRepository.demo()
    try:
        return AssetRepository.load(cfg.scene.asset_manifest)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"asset manifest does not load: {exc}") from exc


def make_gateway(cfg: Config, seed: int):
    from .gateway import GatewayConfig, LiveGateway, MockGateway
    from .gateway.client import ENV_ENDPOINT, ENV_MODEL

    g = cfg.gateway
    if not g.live:
        return MockGateway(seed)
    gc = GatewayConfig.from_env(
        timeout_s=g.timeout_s, max_attempts=g.max_attempts, backoff_base_ms=g.backoff_base_ms,
        backoff_factor=g.backoff_factor, max_inflight=g.max_inflight,
        request_budget=g.request_budget or None,
    )
    # the environment wins over the config file for endpoint and model
    if not os.environ.get(ENV_ENDPOINT):
        gc = dataclasses.replace(gc, endpoint=g.endpoint)
    if not os.environ.get(ENV_MODEL):
        gc = dataclasses.replace(gc, model=g.model)
    return LiveGateway(gc)


def stage_collect(cfg: Config, gateway, repo: AssetRepository):
    return collect(InstructionInput(cfg.scene.instruction), gateway, repo, cfg.retrieval.top_k)


def stage_layout(cfg: Config, decomposition, repo: AssetRepository, seed: int) -> SceneLayout:
    rng = np.random.default_rng(seed) if cfg.scene.random_yaw else None
    return build_layout(
        decomposition, repo, extent=tuple(cfg.scene.extent), cell_size=cfg.scene.cell_size,
        clearance=cfg.scene.clearance, rng=rng,
    )


def scene_layout(cfg: Config, seed: int, gateway, repo: AssetRepository) -> tuple[SceneLayout, str | None]:
    """Initial layout and, in misplacement mode, the lifted subject."""
    if cfg.misplacement.enabled:
        from .scenarios import misplacement_scene

        s = misplacement_scene(seed, repo, tuple(cfg.scene.extent))
        return s.layout, s.subject
    return stage_layout(cfg, stage_collect(cfg, gateway, repo), repo, seed), None


def stage_cameras(cfg: Config, layout: SceneLayout, subject: str | None = None):
    o, r = cfg.optimizer, cfg.render
    if subject is not None:
        return misplacement_cameras(layout, subject, o.views, r.width, r.height)
    return camera_ring(layout, o.views, r.width, r.height, elevation_deg=o.elevation_deg, radius_factor=o.radius_factor)


def stage_optimize(cfg: Config, layout: SceneLayout, cameras, gateway):
    return optimize_layout(
        layout, cameras, GatewayJudge(gateway), cfg.optimizer.threshold, cfg.optimizer.max_iter,
        locator=GatewayLocator(gateway), clearance=cfg.scene.clearance,
    )


def motion_camera(cfg: Config, layout: SceneLayout):
    """Start camera for the motion plan: the first ring camera at render size."""
    o, r = cfg.optimizer, cfg.render
    return camera_ring(layout, 1, r.width, r.height, elevation_deg=o.elevation_deg, radius_factor=o.radius_factor)[0]


def stage_plan(cfg: Config, layout: SceneLayout, gateway, camera) -> RefineResult:
    p = cfg.planner
    plan = plan_from_instruction(cfg.scene.motion, layout, gateway, camera, p.fps)
    budget = SmoothnessBudget(p.max_rot_deg_per_frame, p.max_trans_m_per_frame)
    return refine_plan(plan, layout, camera, budget, gateway, p.max_rounds, p.max_frames)


def layout_at(layout: SceneLayout, frame: FrameState) -> SceneLayout:
    """Render-only view of ``layout`` with every instance at its frame pose."""
    instances = [dataclasses.replace(i, transform=frame.transform(i.instance_id)) for i in layout.instances]
    return SceneLayout(layout.grid, instances, list(layout.constraints))


def render_frames(layout: SceneLayout, seq, K):
    return [render_view(layout_at(layout, f), K, f.camera(), k) for k, f in enumerate(seq.frames)]


# ------------------------------------------------------------------ scenes

@dataclass
class SceneResult:
    index: int
    seed: int
    exit_code: int = EXIT_OK
    errors: list[str] = field(default_factory=list)
    files: dict[str, bytes] = field(default_factory=dict)
    passed: bool | None = None
    converged: bool | None = None
    frames: int = 0

    def summary(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "dir": scene_dir(self.index),
            "exit_code": self.exit_code,
            "passed": self.passed,
            "converged": self.converged,
            "frames": self.frames,
            "errors": self.errors,
        }


def scene_dir(index: int) -> str:
    return f"scene_{index:04d}"


def _fail(res: SceneResult, stage: str, exc: Exception, code: int) -> SceneResult:
    res.errors.append(f"{stage}: {type(exc).__name__}: {exc}")
    res.exit_code = max(res.exit_code, code)
    return res


def run_scene(cfg: Config, index: int, seed: int, repo: AssetRepository | None = None, gateway=None) -> SceneResult:
    """All stages for one scene; files are returned, not written."""
    res = SceneResult(index, seed)
    repo = repo or load_repo(cfg)
    gateway = gateway or make_gateway(cfg, seed)
    d = scene_dir(index)
    stage = "collect"
    try:
        layout, subject = scene_layout(cfg, seed, gateway, repo)
        stage = "optimize"
        layout, report = stage_optimize(cfg, layout, stage_cameras(cfg, layout, subject), gateway)
    except GatewayError as exc:
        return _fail(res, stage, exc, EXIT_GATEWAY)
    except (SceneSynthError, ValueError) as exc:
        return _fail(res, stage, exc, EXIT_OPTIMIZATION)
    res.passed = report.passed
    res.files[f"{d}/scene.json"] = export.export_scene(layout)
    res.files[f"{d}/report.json"] = jsonio.dump_bytes(report.to_dict())
    res.errors += [f"optimize: {e}" for e in report.errors]
    if not report.passed:
        res.exit_code = EXIT_OPTIMIZATION

    K, E = motion_camera(cfg, layout)
    try:
        refined = stage_plan(cfg, layout, gateway, E)
    except GatewayError as exc:
        return _fail(res, "plan", exc, EXIT_GATEWAY)
    except (SceneSynthError, ValueError) as exc:
        return _fail(res, "plan", exc, EXIT_REFINEMENT)
    res.converged = refined.converged
    if not refined.converged:
        res.exit_code = max(res.exit_code, EXIT_REFINEMENT)
    res.files[f"{d}/plan.json"] = jsonio.dump_bytes(
        {
            "plan": refined.plan.to_dict(),
            "refinement": {
                "rounds_used": refined.rounds_used,
                "converged": refined.converged,
                "violation_history": refined.history,
                "violations": [v.to_dict() for v in refined.violations],
            },
        }
    )
    seq = refined.sequence
    try:
        for k, view in enumerate(render_frames(layout, seq, K)):
            res.files[f"{d}/depth_{k:04d}.pfm"] = export.export_depth(view)
            res.files[f"{d}/mask_{k:04d}.pgm"] = export.export_mask(view)
    except SceneSynthError as exc:
        return _fail(res, "render", exc, EXIT_REFINEMENT)
    res.frames = len(seq)
    res.files[f"{d}/trajectory.json"] = export.export_trajectory(seq, K)
    res.files[f"{d}/poses.json"] = export.export_poses(seq, layout.ids())
    return res


def _scene_worker(args) -> SceneResult:
    cfg_dict, index, seed = args
    cfg = Config()
    _fill(cfg, cfg_dict, "")
    return run_scene(cfg, index, seed)


# ------------------------------------------------------------------ bundle

@dataclass
class BundleResult:
    root: Path
    manifest: dict
    manifest_bytes: bytes
    exit_code: int
    scenes: list[SceneResult]

    @property
    def manifest_hash(self) -> str:
        return export.sha256(self.manifest_bytes)


def run_pipeline(config: str | Path | Config | None, seed: int, out_dir: str | Path, overrides: dict | None = None) -> BundleResult:
    """Run every scene of the batch and write the bundle under ``out_dir``.

    Scene ``k`` uses seed ``seed + k``. The bundle's exit code is the largest
    scene exit code, so gateway errors outrank refinement and optimization
    failures. A config that does not load raises ConfigError before anything
    is written.
    """
    cfg = config if isinstance(config, Config) else load_config(config, overrides)
    if isinstance(config, Config) and overrides:
        cfg = parse_config(b"", {**_nested_merge(cfg.to_dict(), overrides)})
    repo = load_repo(cfg)
    n = cfg.batch.scenes
    jobs = [(cfg.to_dict(), k, seed + k) for k in range(n)]
    if cfg.batch.workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=cfg.batch.workers) as pool:
            results = list(pool.map(_scene_worker, jobs))
    else:
        results = [run_scene(cfg, k, s, repo) for _, k, s in jobs]

    writer = export.BundleWriter(out_dir)
    for res in results:
        for rel, data in res.files.items():
            writer.write(rel, data)
    exit_code = max(r.exit_code for r in results)
    fields: dict[str, Any] = {
        "config_hash": cfg.hash(),
        "seed": seed,
        "exit_code": exit_code,
        "scenes": [r.summary() for r in results],
    }
    data = writer.finish(**fields)
    return BundleResult(Path(out_dir), jsonio.loads(data), data, exit_code, results)


def _nested_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _nested_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out
