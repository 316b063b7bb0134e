"""Seeded desk-scale scene and plan generators shared by the benchmarks,
the pipeline's misplacement mode and the tests."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assets import AssetRepository, SpatialConstraint
from .geometry import Rotation, Vec3
from .layout import SceneLayout, insert_object, move_instance
from .planner import Action, ActionPlan

# Thin supports keep the aligned camera's view of a floating subject nearly
# indistinguishable from a seated one; see the decisions ledger.
SUPPORTS = ("book", "plate", "saucer")
SUBJECTS = ("cup", "mug", "apple", "candle")
OFFSET_RANGE_M = (0.1, 0.5)


@dataclass(frozen=True)
class MisplacementScene:
    layout: SceneLayout
    subject: str
    support: str
    offset_m: float

    @property
    def constraint(self) -> SpatialConstraint:
        return self.layout.constraints[0]


def misplacement_scene(seed: int, repo: AssetRepository | None = None, extent=None) -> MisplacementScene:
    """One subject that should rest on a support, lifted by a random vertical offset."""
    repo = repo or AssetRepository.demo()
    rng = np.random.default_rng(seed)
    sup = SUPPORTS[rng.integers(len(SUPPORTS))]
    sub = SUBJECTS[rng.integers(len(SUBJECTS))]
    layout = SceneLayout.empty() if extent is None else SceneLayout.empty(extent)
    layout.add_constraint(SpatialConstraint("on", sub, sup))
    insert_object(layout, repo.get(sup), instance_id=sup, rng=rng)
    insert_object(layout, repo.get(sub), instance_id=sub, rng=rng)
    off = float(rng.uniform(*OFFSET_RANGE_M))
    move_instance(layout, sub, layout.get(sub).position + Vec3(0.0, 0.0, off))
    return MisplacementScene(layout, sub, sup, off)


def jerky_layout(repo: AssetRepository | None = None) -> SceneLayout:
    repo = repo or AssetRepository.demo()
    layout = SceneLayout.empty()
    insert_object(layout, repo.get("airplane"), instance_id="airplane")
    return layout


def jerky_plan(seed: int, fps: int = 24) -> ActionPlan:
    """Airplane plan of abrupt turns and dashes, each squeezed into a few frames,
    separated by holds."""
    rng = np.random.default_rng(seed)
    t = 0.0
    yaw = 0.0
    pos = np.zeros(3)
    actions = []
    for _ in range(int(rng.integers(2, 5))):
        frames = int(rng.integers(1, 4))
        end = t + frames / fps
        if rng.random() < 0.5:
            yaw += float(rng.choice([-1.0, 1.0]) * rng.uniform(60.0, 170.0))
            rot = Rotation.from_yaw_pitch_roll(math.radians(yaw))
            actions.append(Action("airplane", "rotate_to", t, end, {"rotation": list(rot.as_tuple())}))
        else:
            heading = np.array([math.cos(math.radians(yaw)), math.sin(math.radians(yaw)), 0.0])
            pos = pos + heading * float(rng.uniform(0.5, 2.0))
            actions.append(Action("airplane", "move_to", t, end, {"position": pos.tolist()}))
        hold = int(rng.integers(4, 13)) / fps
        actions.append(Action("airplane", "hold", end, end + hold))
        t = end + hold
    return ActionPlan(tuple(actions), t, fps)
