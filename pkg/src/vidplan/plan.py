"""Video-plan data model, validation, and the "vdgpt-plan/1" document format.

A plan is a multi-scene script: per-scene descriptions, entities with
keyframe bounding boxes, backgrounds, cross-scene consistency groups, and
a layout-guidance strength setting. Everything here is a pure value type;
plans are safe to share read-only across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterator

SCHEMA_VERSION = "vdgpt-plan/1"

QUANT_UNIT = 0.05
QUANT_TOL = 1e-9

DEFAULT_NUM_KEYFRAMES = 9
DEFAULT_TARGET_FRAMES = 16


class PlanError(Exception):
    """Base class for plan-model errors; carries a machine-readable code."""

    code = "PLAN_ERROR"


class InvalidCoordinateError(PlanError):
    code = "INVALID_COORDINATE"


class PlanParseError(PlanError):
    """Raised when a plan document cannot be decoded. ``path`` points at the
    offending field (or ``line:col`` for raw JSON errors)."""

    code = "PARSE_ERROR"

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with coordinates normalized to [0, 1], y-down."""

    x0: float
    y0: float
    x1: float
    y1: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def is_ordered(self) -> bool:
        return 0.0 <= self.x0 <= self.x1 <= 1.0 and 0.0 <= self.y0 <= self.y1 <= 1.0

    def is_on_grid(self, unit: float = QUANT_UNIT, tol: float = QUANT_TOL) -> bool:
        for c in self.as_tuple():
            n = round(c / unit)
            if abs(c - n * unit) > tol:
                return False
        return True


@dataclass(frozen=True)
class Keyframe:
    frame: int
    box: BoundingBox


@dataclass
class EntityTrack:
    """One entity's identity and its keyframed layout within a scene."""

    entity_id: str
    name: str
    description: str = ""
    keyframes: list[Keyframe] = field(default_factory=list)

    def frame_indices(self) -> list[int]:
        return [k.frame for k in self.keyframes]

    def boxes(self) -> list[BoundingBox]:
        return [k.box for k in self.keyframes]


@dataclass
class SceneSpec:
    index: int
    description: str
    background: str = ""
    entities: list[EntityTrack] = field(default_factory=list)
    num_keyframes: int = DEFAULT_NUM_KEYFRAMES
    target_frames: int = DEFAULT_TARGET_FRAMES

    def entity_names(self) -> list[str]:
        return [e.name for e in self.entities]


@dataclass
class ConsistencyGroups:
    """Map from entity/background name to the sorted scene indices where the
    exact name string occurs."""

    groups: dict[str, list[int]] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.groups

    def __getitem__(self, name: str) -> list[int]:
        return self.groups[name]

    def items(self) -> Iterator[tuple[str, list[int]]]:
        return iter(self.groups.items())


@dataclass
class AlphaSetting:
    """Layout-guidance strength: fraction of denoising steps that apply the
    guided spatial attention path."""

    mode: str = "static"  # "static" | "llm_dynamic"
    value: float = 0.1


@dataclass
class ProvenanceEntry:
    step: str  # "step1" | "step2" | "dynamic_alpha"
    scene: int | None
    attempt: int
    response: str


@dataclass
class Provenance:
    model_id: str = ""
    created_at: str = ""
    responses: list[ProvenanceEntry] = field(default_factory=list)


@dataclass
class VideoPlan:
    source_prompt: str
    scenes: list[SceneSpec] = field(default_factory=list)
    consistency: ConsistencyGroups = field(default_factory=ConsistencyGroups)
    alpha: AlphaSetting = field(default_factory=AlphaSetting)
    provenance: Provenance | None = None

    def scene(self, index: int) -> SceneSpec:
        for s in self.scenes:
            if s.index == index:
                return s
        raise KeyError(index)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    scene: int | None = None
    subject: str | None = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "message": self.message,
            "scene": self.scene,
            "subject": self.subject,
        }


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def as_dict(self) -> dict[str, Any]:
        return {"valid": self.valid, "violations": [v.as_dict() for v in self.violations]}


def _round_to_grid(value: float, unit: float) -> float:
    # Ties round half away from zero; inputs are clamped non-negative first,
    # so this is plain half-up on the scaled value.
    n = math.floor(value / unit + 0.5)
    return round(n * unit, 12)


def quantize_box(b: BoundingBox, unit: float = QUANT_UNIT) -> BoundingBox:
    """Snap each coordinate to the nearest multiple of ``unit`` and repair
    the ordering invariant if the input violated it."""
    coords = b.as_tuple()
    if not all(math.isfinite(c) for c in coords):
        raise InvalidCoordinateError(f"non-finite box coordinates: {coords}")

    clamped = [min(1.0, max(0.0, c)) for c in coords]
    x0, y0, x1, y1 = (_round_to_grid(c, unit) for c in clamped)
    if x0 > x1:
        x0 = x1 = _round_to_grid((x0 + x1) / 2.0, unit)
    if y0 > y1:
        y0 = y1 = _round_to_grid((y0 + y1) / 2.0, unit)
    return BoundingBox(x0, y0, x1, y1)


def validate_plan(plan: VideoPlan) -> ValidationReport:
    """Check every structural invariant; violations are data, not failures."""
    out: list[Violation] = []

    if not plan.scenes:
        out.append(Violation("SCENE_INDEX_GAP", "plan has no scenes"))
    else:
        indices = [s.index for s in plan.scenes]
        if indices != list(range(1, len(plan.scenes) + 1)):
            out.append(
                Violation(
                    "SCENE_INDEX_GAP",
                    f"scene indices {indices} are not exactly 1..{len(plan.scenes)}",
                )
            )

    for scene in plan.scenes:
        if scene.num_keyframes < 2 or scene.target_frames < scene.num_keyframes:
            out.append(
                Violation(
                    "BAD_FRAME_PARAMS",
                    f"num_keyframes={scene.num_keyframes}, target_frames={scene.target_frames}",
                    scene=scene.index,
                )
            )

        seen_ids: set[str] = set()
        for entity in scene.entities:
            if entity.entity_id in seen_ids:
                out.append(
                    Violation(
                        "DUPLICATE_ENTITY_ID",
                        f"entity id {entity.entity_id!r} repeated",
                        scene=scene.index,
                        subject=entity.entity_id,
                    )
                )
            seen_ids.add(entity.entity_id)

            frames = entity.frame_indices()
            if any(b <= a for a, b in zip(frames, frames[1:])):
                out.append(
                    Violation(
                        "BAD_KEYFRAME_ORDER",
                        f"keyframe indices {frames} not strictly increasing",
                        scene=scene.index,
                        subject=entity.name,
                    )
                )
            if len(entity.keyframes) != scene.num_keyframes:
                out.append(
                    Violation(
                        "MISSING_KEYFRAMES",
                        f"entity has {len(entity.keyframes)} keyframes, expected {scene.num_keyframes}",
                        scene=scene.index,
                        subject=entity.name,
                    )
                )
            for kf in entity.keyframes:
                if not kf.box.is_ordered():
                    out.append(
                        Violation(
                            "BOX_OUT_OF_RANGE",
                            f"frame {kf.frame}: box {kf.box.as_tuple()} violates 0<=x0<=x1<=1, 0<=y0<=y1<=1",
                            scene=scene.index,
                            subject=entity.name,
                        )
                    )

        covered = {kf.frame for e in scene.entities for kf in e.keyframes}
        empty = [f for f in range(scene.num_keyframes) if f not in covered]
        if empty:
            out.append(
                Violation(
                    "EMPTY_FRAME",
                    f"frames {empty} contain no boxes",
                    scene=scene.index,
                )
            )

    known_names: set[str] = set()
    for scene in plan.scenes:
        known_names.update(scene.entity_names())
        if scene.background:
            known_names.add(scene.background)
    valid_indices = {s.index for s in plan.scenes}

    for name, members in plan.consistency.items():
        if name not in known_names:
            out.append(
                Violation(
                    "UNKNOWN_GROUP_ENTITY",
                    f"group name {name!r} matches no entity or background",
                    subject=name,
                )
            )
        bad = [i for i in members if i not in valid_indices]
        if bad:
            out.append(
                Violation(
                    "UNKNOWN_GROUP_SCENE",
                    f"group {name!r} references missing scenes {bad}",
                    subject=name,
                )
            )
        if members != sorted(set(members)):
            out.append(
                Violation(
                    "GROUP_NOT_SORTED",
                    f"group {name!r} scene list {members} not sorted/deduplicated",
                    subject=name,
                )
            )

    a = plan.alpha
    if a.mode == "llm_dynamic":
        if not (0.0 <= a.value <= 0.3):
            out.append(Violation("ALPHA_OUT_OF_RANGE", f"llm_dynamic alpha {a.value} outside [0, 0.3]"))
    elif a.mode == "static":
        if not (0.0 <= a.value <= 1.0):
            out.append(Violation("ALPHA_OUT_OF_RANGE", f"static alpha {a.value} outside [0, 1]"))
    else:
        out.append(Violation("ALPHA_OUT_OF_RANGE", f"unknown alpha mode {a.mode!r}"))

    return ValidationReport(out)


# --- document format -------------------------------------------------------
#
# Field names below are the wire contract; key order is fixed so serialized
# bytes are deterministic, and the output stays hand-editable (indent=2).


def plan_to_doc(plan: VideoPlan) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "source_prompt": plan.source_prompt,
        "scenes": [
            {
                "index": s.index,
                "description": s.description,
                "background": s.background,
                "num_keyframes": s.num_keyframes,
                "target_frames": s.target_frames,
                "entities": [
                    {
                        "id": e.entity_id,
                        "name": e.name,
                        "description": e.description,
                        "keyframes": [
                            {
                                "frame": k.frame,
                                "x0": k.box.x0,
                                "y0": k.box.y0,
                                "x1": k.box.x1,
                                "y1": k.box.y1,
                            }
                            for k in e.keyframes
                        ],
                    }
                    for e in s.entities
                ],
            }
            for s in plan.scenes
        ],
        "consistency": {name: list(members) for name, members in plan.consistency.items()},
        "alpha": {"mode": plan.alpha.mode, "value": plan.alpha.value},
    }
    if plan.provenance is not None:
        doc["provenance"] = {
            "model_id": plan.provenance.model_id,
            "created_at": plan.provenance.created_at,
            "responses": [
                {"step": r.step, "scene": r.scene, "attempt": r.attempt, "response": r.response}
                for r in plan.provenance.responses
            ],
        }
    return doc


def serialize_plan(plan: VideoPlan) -> bytes:
    return (json.dumps(plan_to_doc(plan), ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def _expect(doc: dict[str, Any], key: str, kind: type | tuple[type, ...], path: str) -> Any:
    if key not in doc:
        raise PlanParseError("missing required field", f"{path}{key}" if path else key)
    value = doc[key]
    if not isinstance(value, kind):
        raise PlanParseError(
            f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}",
            f"{path}{key}" if path else key,
        )
    return value


def _num(doc: dict[str, Any], key: str, path: str) -> float:
    value = _expect(doc, key, (int, float), path)
    if isinstance(value, bool):
        raise PlanParseError("expected number, got bool", f"{path}{key}")
    return float(value)


def plan_from_doc(doc: Any) -> VideoPlan:
    if not isinstance(doc, dict):
        raise PlanParseError("document root must be an object")
    schema = _expect(doc, "schema", str, "")
    if schema != SCHEMA_VERSION:
        raise PlanParseError(f"unsupported schema {schema!r}", "schema")
    source_prompt = _expect(doc, "source_prompt", str, "")
    raw_scenes = _expect(doc, "scenes", list, "")

    scenes: list[SceneSpec] = []
    for i, raw in enumerate(raw_scenes):
        spath = f"scenes[{i}]."
        if not isinstance(raw, dict):
            raise PlanParseError("scene must be an object", f"scenes[{i}]")
        entities: list[EntityTrack] = []
        for j, eraw in enumerate(_expect(raw, "entities", list, spath)):
            epath = f"{spath}entities[{j}]."
            if not isinstance(eraw, dict):
                raise PlanParseError("entity must be an object", epath.rstrip("."))
            keyframes: list[Keyframe] = []
            for k, kraw in enumerate(_expect(eraw, "keyframes", list, epath)):
                kpath = f"{epath}keyframes[{k}]."
                if not isinstance(kraw, dict):
                    raise PlanParseError("keyframe must be an object", kpath.rstrip("."))
                keyframes.append(
                    Keyframe(
                        frame=int(_num(kraw, "frame", kpath)),
                        box=BoundingBox(
                            _num(kraw, "x0", kpath),
                            _num(kraw, "y0", kpath),
                            _num(kraw, "x1", kpath),
                            _num(kraw, "y1", kpath),
                        ),
                    )
                )
            entities.append(
                EntityTrack(
                    entity_id=_expect(eraw, "id", str, epath),
                    name=_expect(eraw, "name", str, epath),
                    description=str(eraw.get("description", "")),
                    keyframes=keyframes,
                )
            )
        scenes.append(
            SceneSpec(
                index=int(raw.get("index", i + 1)),
                description=_expect(raw, "description", str, spath),
                background=_expect(raw, "background", str, spath),
                entities=entities,
                num_keyframes=int(raw.get("num_keyframes", DEFAULT_NUM_KEYFRAMES)),
                target_frames=int(raw.get("target_frames", DEFAULT_TARGET_FRAMES)),
            )
        )

    raw_groups = doc.get("consistency", {})
    if not isinstance(raw_groups, dict):
        raise PlanParseError("expected object", "consistency")
    groups: dict[str, list[int]] = {}
    for name, members in raw_groups.items():
        if not isinstance(members, list) or not all(isinstance(m, int) for m in members):
            raise PlanParseError("group members must be a list of scene indices", f"consistency[{name!r}]")
        groups[str(name)] = list(members)

    raw_alpha = doc.get("alpha", {"mode": "static", "value": 0.1})
    if not isinstance(raw_alpha, dict):
        raise PlanParseError("expected object", "alpha")
    mode = str(raw_alpha.get("mode", "static"))
    if mode not in ("static", "llm_dynamic"):
        raise PlanParseError(f"unknown mode {mode!r}", "alpha.mode")
    alpha = AlphaSetting(mode=mode, value=_num(raw_alpha, "value", "alpha."))

    provenance = None
    if "provenance" in doc:
        praw = doc["provenance"]
        if not isinstance(praw, dict):
            raise PlanParseError("expected object", "provenance")
        provenance = Provenance(
            model_id=str(praw.get("model_id", "")),
            created_at=str(praw.get("created_at", "")),
            responses=[
                ProvenanceEntry(
                    step=str(r.get("step", "")),
                    scene=r.get("scene"),
                    attempt=int(r.get("attempt", 0)),
                    response=str(r.get("response", "")),
                )
                for r in praw.get("responses", [])
                if isinstance(r, dict)
            ],
        )

    return VideoPlan(
        source_prompt=source_prompt,
        scenes=scenes,
        consistency=ConsistencyGroups(groups),
        alpha=alpha,
        provenance=provenance,
    )


def deserialize_plan(data: bytes | str) -> VideoPlan:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise PlanParseError(f"invalid JSON: {e.msg}", f"{e.lineno}:{e.colno}") from e
    return plan_from_doc(doc)


def with_quantized_boxes(plan: VideoPlan, unit: float = QUANT_UNIT) -> VideoPlan:
    """Copy of ``plan`` with every keyframe box snapped to the grid."""
    scenes = []
    for s in plan.scenes:
        entities = [
            replace(e, keyframes=[Keyframe(k.frame, quantize_box(k.box, unit)) for k in e.keyframes])
            for e in s.entities
        ]
        scenes.append(replace(s, entities=entities))
    return replace(plan, scenes=scenes)
