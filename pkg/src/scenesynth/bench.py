"""Desk-scale ablation benchmarks: multi-view optimization and
frame-prediction refinement."""
from __future__ import annotations

import csv
import time
from pathlib import Path

from .assets import AssetRepository
from .optimizer import camera_ring, constraint_holds, misplacement_cameras, optimize_layout
from .planner import SmoothnessBudget, refine_plan
from .scenarios import jerky_layout, jerky_plan, misplacement_scene


def multiview_bench(n_scenes: int = 100, views=(1, 2, 3), seed: int = 0, width: int = 64, height: int = 64,
                    threshold: float = 0.8, max_iter: int = 5):
    """Success means the optimizer passed and the subject really rests on its support."""
    repo = AssetRepository.demo()
    scenes = [misplacement_scene(seed + k, repo) for k in range(n_scenes)]
    summary, detail = [], []
    for n in views:
        t0 = time.perf_counter()
        ok = passed = iters = 0
        for k, s in enumerate(scenes):
            cams = misplacement_cameras(s.layout, s.subject, n, width, height)
            out, rep = optimize_layout(s.layout, cams, t=threshold, max_iter=max_iter)
            holds = constraint_holds(out, s.constraint)
            ok += rep.passed and holds
            passed += rep.passed
            iters += rep.iterations
            detail.append({
                "views": n, "seed": seed + k, "subject": s.subject, "support": s.support,
                "offset_m": round(s.offset_m, 6), "passed": rep.passed, "holds": holds,
                "iterations": rep.iterations,
            })
        summary.append({
            "views": n,
            "scenes": n_scenes,
            "success_rate": ok / n_scenes,
            "reported_pass_rate": passed / n_scenes,
            "mean_iterations": iters / n_scenes,
            "runtime_s": round(time.perf_counter() - t0, 3),
        })
    return summary, detail


def frame_bench(n_plans: int = 50, seed: int = 0, max_rounds: int = 3, budget: SmoothnessBudget = SmoothnessBudget()):
    layout = jerky_layout()
    _, cam = camera_ring(layout, 1)[0]
    rows = []
    for k in range(n_plans):
        res = refine_plan(jerky_plan(seed + k), layout, cam, budget, max_rounds=max_rounds)
        rows.append({
            "plan": k,
            "violations_before": res.history[0],
            "violations_after": len(res.violations),
            "rounds_used": res.rounds_used,
            "converged": res.converged,
        })
    return rows


def frame_summary(rows: list[dict], runtime_s: float) -> dict:
    n = len(rows)
    return {
        "plans": n,
        "mean_violations_before": sum(r["violations_before"] for r in rows) / n,
        "mean_violations_after": sum(r["violations_after"] for r in rows) / n,
        "converged_rate": sum(r["converged"] for r in rows) / n,
        "max_rounds_used": max(r["rounds_used"] for r in rows),
        "runtime_s": round(runtime_s, 3),
    }


def write_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def run_bench(out_dir: str | Path, n_scenes: int = 100, n_plans: int = 50, seed: int = 0,
              views=(1, 2, 3), threshold: float = 0.8, plots: bool = True) -> dict:
    """Run both benchmarks, write CSVs and figures under ``out_dir``; return the summaries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mv, mv_detail = multiview_bench(n_scenes, views, seed, threshold=threshold)
    t0 = time.perf_counter()
    fp = frame_bench(n_plans, seed)
    fp_sum = frame_summary(fp, time.perf_counter() - t0)
    write_csv(out / "multiview.csv", mv)
    write_csv(out / "multiview_scenes.csv", mv_detail)
    write_csv(out / "frame_prediction.csv", fp)
    write_csv(out / "frame_prediction_summary.csv", [fp_sum])
    if plots:
        from .plotting import plot_frame_prediction, plot_multiview

        plot_multiview(mv, out / "multiview.png")
        plot_frame_prediction(fp, out / "frame_prediction.png")
    return {"multiview": mv, "frame_prediction": fp_sum}


def format_summary(result: dict) -> str:
    lines = ["multi-view optimization", f"{'views':>5} {'success':>8} {'reported':>9} {'iters':>6} {'time_s':>7}"]
    for r in result["multiview"]:
        lines.append(
            f"{r['views']:>5} {r['success_rate']:>8.2f} {r['reported_pass_rate']:>9.2f} "
            f"{r['mean_iterations']:>6.2f} {r['runtime_s']:>7.2f}"
        )
    f = result["frame_prediction"]
    lines += [
        "frame prediction refinement",
        f"plans {f['plans']}  violations before {f['mean_violations_before']:.2f}  "
        f"after {f['mean_violations_after']:.2f}  converged {f['converged_rate']:.2f}  "
        f"max rounds {f['max_rounds_used']}  time {f['runtime_s']:.2f}s",
    ]
    return "\n".join(lines)
