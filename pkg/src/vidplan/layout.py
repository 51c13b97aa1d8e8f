"""Dense layout synthesis from keyframes plus the box geometry used by
grounding and evaluation.

Keyframes are remapped onto the target timeline endpoints-inclusive
(keyframe k of K lands on dense frame k*(T-1)/(K-1)) and each coordinate is
interpolated linearly and independently. Interpolated boxes are NOT
re-snapped to the quantization grid; grounding consumes continuous
coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .plan import BoundingBox, EntityTrack, PlanError, SceneSpec, VideoPlan


class EmptyTrackError(PlanError):
    code = "EMPTY_TRACK"


@dataclass
class FrameBox:
    entity_id: str
    name: str
    box: BoundingBox


@dataclass
class DenseLayout:
    """Per-frame box lists for one scene."""

    scene_index: int
    frames: list[list[FrameBox]] = field(default_factory=list)
    fps_hint: float | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def boxes_for(self, frame: int, name: str) -> list[BoundingBox]:
        return [fb.box for fb in self.frames[frame] if fb.name == name]


def _lerp_box(a: BoundingBox, b: BoundingBox, u: float) -> BoundingBox:
    return BoundingBox(
        a.x0 + (b.x0 - a.x0) * u,
        a.y0 + (b.y0 - a.y0) * u,
        a.x1 + (b.x1 - a.x1) * u,
        a.y1 + (b.y1 - a.y1) * u,
    )


def interpolate_layouts(
    track: EntityTrack, target_frames: int, diagnostics: list[str] | None = None
) -> list[BoundingBox]:
    """Expand a keyframed track to ``target_frames`` boxes.

    Keyframe ordinals (not stored frame labels) are spread uniformly over the
    target timeline, endpoints inclusive, so the first/last outputs equal the
    first/last keyframes exactly.
    """
    boxes = track.boxes()
    if not boxes:
        raise EmptyTrackError(f"entity {track.entity_id!r} has no keyframes")
    if len(boxes) == 1:
        if diagnostics is not None:
            diagnostics.append(
                f"entity {track.entity_id!r}: single keyframe extended to {target_frames} constant frames"
            )
        return [boxes[0]] * target_frames
    if target_frames < 2:
        raise ValueError(f"target_frames must be >= 2, got {target_frames}")
    if target_frames == len(boxes):
        return list(boxes)

    K = len(boxes)
    span = (target_frames - 1) / (K - 1)
    out: list[BoundingBox] = []
    seg = 0
    for j in range(target_frames):
        # advance to the segment [seg, seg+1] whose remapped keyframe
        # positions bracket output frame j
        while seg < K - 2 and (seg + 1) * span < j:
            seg += 1
        p0 = seg * span
        u = (j - p0) / span
        u = min(1.0, max(0.0, u))
        out.append(_lerp_box(boxes[seg], boxes[seg + 1], u))
    # endpoints must be bit-exact, not just within rounding
    out[0] = boxes[0]
    out[-1] = boxes[-1]
    return out


def dense_scene_layout(scene: SceneSpec, target_frames: int | None = None) -> DenseLayout:
    """Interpolate every track of a scene into one per-frame structure."""
    T = target_frames if target_frames is not None else scene.target_frames
    frames: list[list[FrameBox]] = [[] for _ in range(T)]
    for entity in scene.entities:
        for j, box in enumerate(interpolate_layouts(entity, T)):
            frames[j].append(FrameBox(entity.entity_id, entity.name, box))
    return DenseLayout(scene_index=scene.index, frames=frames)


def dense_plan_layout(plan: VideoPlan, target_frames: int | None = None) -> list[DenseLayout]:
    return [dense_scene_layout(s, target_frames) for s in plan.scenes]


# --- box geometry ----------------------------------------------------------


def box_center(b: BoundingBox) -> tuple[float, float]:
    return ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0)


def box_area(b: BoundingBox) -> float:
    return max(0.0, b.x1 - b.x0) * max(0.0, b.y1 - b.y0)


def to_center_point_layout(dense: DenseLayout) -> DenseLayout:
    """Collapse every box to a zero-area box at its center (layout
    representation ablation)."""
    frames = []
    for frame in dense.frames:
        collapsed = []
        for fb in frame:
            cx, cy = box_center(fb.box)
            collapsed.append(FrameBox(fb.entity_id, fb.name, BoundingBox(cx, cy, cx, cy)))
        frames.append(collapsed)
    return DenseLayout(scene_index=dense.scene_index, frames=frames, fps_hint=dense.fps_hint)


# --- Fourier box features --------------------------------------------------

DEFAULT_FOURIER_BANDS = 8


def fourier_features(b: BoundingBox, bands: int = DEFAULT_FOURIER_BANDS) -> list[float]:
    """NeRF-style positional encoding of the four box coordinates.

    Coordinate-major, band-minor, sin before cos:
    [sin(2^0 pi x0), cos(2^0 pi x0), ..., sin(2^(L-1) pi x0), cos(...), sin(2^0 pi y0), ...]
    Length is 8 * bands.
    """
    if bands < 1:
        raise ValueError("bands must be >= 1")
    out: list[float] = []
    for c in b.as_tuple():
        for j in range(bands):
            angle = (2.0**j) * math.pi * c
            out.append(math.sin(angle))
            out.append(math.cos(angle))
    return out


# --- export format ---------------------------------------------------------
#
# Per-frame records consumed by the layout-oracle detector and the editing UI.


def dense_layouts_to_doc(layouts: list[DenseLayout]) -> dict[str, Any]:
    return {
        "schema": "vdgpt-dense/1",
        "scenes": [
            {
                "index": d.scene_index,
                "frame_count": d.frame_count,
                "frames": [
                    [
                        {
                            "id": fb.entity_id,
                            "name": fb.name,
                            "x0": fb.box.x0,
                            "y0": fb.box.y0,
                            "x1": fb.box.x1,
                            "y1": fb.box.y1,
                        }
                        for fb in frame
                    ]
                    for frame in d.frames
                ],
            }
            for d in layouts
        ],
    }


def serialize_dense_layouts(layouts: list[DenseLayout]) -> bytes:
    return (json.dumps(dense_layouts_to_doc(layouts), ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def dense_layouts_from_doc(doc: Any) -> list[DenseLayout]:
    out = []
    for raw in doc.get("scenes", []):
        frames = [
            [
                FrameBox(e["id"], e["name"], BoundingBox(e["x0"], e["y0"], e["x1"], e["y1"]))
                for e in frame
            ]
            for frame in raw["frames"]
        ]
        out.append(DenseLayout(scene_index=raw["index"], frames=frames))
    return out
