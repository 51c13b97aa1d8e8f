"""vidplan: compile text prompts into validated multi-scene video plans,
exercise layout-grounded generation at desk scale, and score plans/videos
with layout, movement, and cross-scene consistency metrics."""

from .plan import (
    AlphaSetting,
    BoundingBox,
    ConsistencyGroups,
    EntityTrack,
    Keyframe,
    SceneSpec,
    ValidationReport,
    VideoPlan,
    deserialize_plan,
    quantize_box,
    serialize_plan,
    validate_plan,
)

__all__ = [
    "AlphaSetting",
    "BoundingBox",
    "ConsistencyGroups",
    "EntityTrack",
    "Keyframe",
    "SceneSpec",
    "ValidationReport",
    "VideoPlan",
    "deserialize_plan",
    "quantize_box",
    "serialize_plan",
    "validate_plan",
]
