"""Command-line entry point: ``scenesynth <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import export, jsonio
from .errors import ConfigError, GatewayError, SceneSynthError
from .pipeline import (
    EXIT_CONFIG,
    EXIT_GATEWAY,
    EXIT_OK,
    EXIT_OPTIMIZATION,
    EXIT_REFINEMENT,
    load_config,
    load_repo,
    make_gateway,
    motion_camera,
    run_pipeline,
    scene_layout,
    stage_cameras,
    stage_collect,
    stage_optimize,
    stage_plan,
)
from .render import render_view

COMMANDS = ("collect", "layout", "optimize", "plan", "render", "pipeline", "bench")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="TOML config file")
    parser.add_argument("--seed", type=int, default=d(0), help="base seed")
    parser.add_argument("--out", default=d(None), help="output directory")
    parser.add_argument("--views", type=int, default=d(None), help="optimization views (default 2)")
    parser.add_argument("--threshold", type=float, default=d(None), help="pass threshold (default 0.8)")
    parser.add_argument("--live", action="store_true", default=d(False), help="use the live gateway")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenesynth", description="Instruction-driven synthetic scene generator.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "bench":
            p.add_argument("--scenes", type=int, default=100, help="misplacement scenes")
            p.add_argument("--plans", type=int, default=50, help="jerky plans")
            p.add_argument("--no-plots", action="store_true", help="skip the figures")
    return parser


def _overrides(args) -> dict:
    o: dict = {}
    if args.views is not None:
        o.setdefault("optimizer", {})["views"] = args.views
    if args.threshold is not None:
        o.setdefault("optimizer", {})["threshold"] = args.threshold
    if args.live:
        o.setdefault("gateway", {})["live"] = True
    return o


def _emit(args, name: str, data: bytes) -> None:
    if args.out is None:
        sys.stdout.write(data.decode("utf-8"))
    else:
        export.write_atomic(Path(args.out) / name, data)


def _optimized(cfg, args, gateway, repo):
    layout, subject = scene_layout(cfg, args.seed, gateway, repo)
    cams = stage_cameras(cfg, layout, subject)
    out, report = stage_optimize(cfg, layout, cams, gateway)
    return out, report, cams


def _run(args) -> int:
    if args.command == "bench":
        from .bench import format_summary, run_bench

        views = (1, 2, 3) if args.views is None else tuple(range(1, args.views + 1))
        result = run_bench(
            args.out or "bench_out", args.scenes, args.plans, args.seed, views,
            threshold=0.8 if args.threshold is None else args.threshold, plots=not args.no_plots,
        )
        print(format_summary(result))
        return EXIT_OK

    cfg = load_config(args.config, _overrides(args))
    if args.command == "pipeline":
        res = run_pipeline(cfg, args.seed, args.out or "bundle")
        for s in res.manifest["scenes"]:
            print(f"{s['dir']}: exit {s['exit_code']} passed={s['passed']} converged={s['converged']} frames={s['frames']}")
            for e in s["errors"]:
                print(f"  {e}", file=sys.stderr)
        print(f"manifest sha256 {res.manifest_hash}")
        return res.exit_code

    repo = load_repo(cfg)
    gateway = make_gateway(cfg, args.seed)
    if args.command == "collect":
        _emit(args, "decomposition.json", stage_collect(cfg, gateway, repo).to_json())
        return EXIT_OK
    if args.command == "layout":
        layout, _ = scene_layout(cfg, args.seed, gateway, repo)
        _emit(args, "scene.json", export.export_scene(layout))
        return EXIT_OK

    layout, report, cams = _optimized(cfg, args, gateway, repo)
    if args.command == "optimize":
        _emit(args, "scene.json", export.export_scene(layout))
        _emit(args, "report.json", jsonio.dump_bytes(report.to_dict()))
        return EXIT_OK if report.passed else EXIT_OPTIMIZATION
    if args.command == "render":
        out = Path(args.out or "render")
        for k, (K, E) in enumerate(cams):
            view = render_view(layout, K, E, k)
            export.write_atomic(out / f"depth_{k:04d}.pfm", export.export_depth(view))
            export.write_atomic(out / f"mask_{k:04d}.pgm", export.export_mask(view))
        print(f"wrote {len(cams)} views to {out}")
        return EXIT_OK
    # plan
    K, E = motion_camera(cfg, layout)
    refined = stage_plan(cfg, layout, gateway, E)
    _emit(args, "plan.json", jsonio.dump_bytes(refined.plan.to_dict()))
    if args.out is not None:
        export.write_atomic(Path(args.out) / "trajectory.json", export.export_trajectory(refined.sequence, K))
    return EXIT_OK if refined.converged else EXIT_REFINEMENT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GatewayError as exc:
        print(f"gateway error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except (SceneSynthError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_REFINEMENT if args.command == "plan" else EXIT_OPTIMIZATION


if __name__ == "__main__":
    sys.exit(main())
