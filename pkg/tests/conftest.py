from __future__ import annotations

import numpy as np
import pytest

from vidplan.plan import (
    AlphaSetting,
    BoundingBox,
    ConsistencyGroups,
    EntityTrack,
    Keyframe,
    SceneSpec,
    VideoPlan,
)


def linear_track(entity_id: str, name: str, start: BoundingBox, end: BoundingBox, n: int = 9,
                 description: str = "") -> EntityTrack:
    """Keyframes lerped between two boxes; coordinates need not be on-grid."""
    keyframes = []
    for k in range(n):
        u = k / (n - 1)
        keyframes.append(
            Keyframe(
                frame=k,
                box=BoundingBox(
                    start.x0 + (end.x0 - start.x0) * u,
                    start.y0 + (end.y0 - start.y0) * u,
                    start.x1 + (end.x1 - start.x1) * u,
                    start.y1 + (end.y1 - start.y1) * u,
                ),
            )
        )
    return EntityTrack(entity_id=entity_id, name=name, description=description, keyframes=keyframes)


def static_track(entity_id: str, name: str, box: BoundingBox, n: int = 9) -> EntityTrack:
    return linear_track(entity_id, name, box, box, n)


@pytest.fixture
def chef_plan() -> VideoPlan:
    """Four kitchen scenes; chef appears in all, oven only in the first."""
    chef_box = BoundingBox(0.1, 0.2, 0.45, 0.95)
    oven_box = BoundingBox(0.55, 0.3, 0.95, 0.9)
    scenes = [
        SceneSpec(
            index=1,
            description="A chef preheats the oven.",
            background="kitchen",
            entities=[
                static_track("s1-chef", "chef", chef_box),
                static_track("s1-oven", "oven", oven_box),
            ],
        )
    ]
    for i in (2, 3, 4):
        scenes.append(
            SceneSpec(
                index=i,
                description=f"The chef works on step {i}.",
                background="kitchen",
                entities=[static_track(f"s{i}-chef", "chef", chef_box)],
            )
        )
    return VideoPlan(
        source_prompt="make caraway cakes",
        scenes=scenes,
        consistency=ConsistencyGroups(
            {"chef": [1, 2, 3, 4], "oven": [1], "kitchen": [1, 2, 3, 4]}
        ),
        alpha=AlphaSetting("static", 0.1),
    )


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
    return float(np.linalg.norm(analytic - numeric) / denom)
