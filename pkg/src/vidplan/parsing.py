"""Parsers for the two planning-step responses.

Completions are expected to carry a fenced block in the canonical line
format the templates ask for; the parsers first look for the fence, then
fall back to line-oriented heuristics. Recoverable deviations (missing
fence, loose scene numbering, off-grid coordinates, skipped frames) are
normalized and downgrade the outcome from "ok" to "repaired"; anything
unrecoverable is "invalid" with diagnostics, never an exception.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .plan import (
    DEFAULT_NUM_KEYFRAMES,
    DEFAULT_TARGET_FRAMES,
    BoundingBox,
    EntityTrack,
    Keyframe,
    SceneSpec,
    quantize_box,
)

OK = "ok"
REPAIRED = "repaired"
INVALID = "invalid"


@dataclass
class ParseOutcome:
    status: str
    fragment: object | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def usable(self) -> bool:
        return self.status in (OK, REPAIRED)


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)

_SCENE_HEADER_RE = re.compile(r"^\s*[-*]?\s*scene\s*(\d+)\s*:?\s*$", re.IGNORECASE)
_SCENE_INLINE_RE = re.compile(r"^\s*[-*]?\s*scene\s*(\d+)\s*:\s*(\S.*)$", re.IGNORECASE)
_SCENE_NUMBERED_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*)$")
_DESCRIPTION_RE = re.compile(r"^\s*[-*]?\s*description\s*:\s*(.*)$", re.IGNORECASE)
_BACKGROUND_RE = re.compile(r"^\s*[-*]?\s*background\s*:\s*(.*)$", re.IGNORECASE)
_ENTITY_RE = re.compile(r"^\s*[-*]?\s*entity\s*:\s*(.*)$", re.IGNORECASE)
_ENTITIES_RE = re.compile(r"^\s*[-*]?\s*entities\s*:\s*(.*)$", re.IGNORECASE)

_FRAME_RE = re.compile(r"^\s*[-*]?\s*frame\s*(\d+)\s*:\s*(.*)$", re.IGNORECASE)
_BOX_RE = re.compile(
    r"^\s*(.+?)\s*:?\s*[\[(]\s*([-+\d.eE]+)\s*,\s*([-+\d.eE]+)\s*,\s*([-+\d.eE]+)\s*,\s*([-+\d.eE]+)\s*[\])]\s*$"
)

_NUMBER_RE = re.compile(r"[-+]?\d*\.\d+|[-+]?\d+")


def _slug(name: str) -> str:
    cleaned = re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-")
    return cleaned or "entity"


def _extract_fence(raw: str) -> tuple[str, bool]:
    m = _FENCE_RE.search(raw)
    if m:
        return m.group(1), True
    return raw, False


def _split_entity_payload(payload: str) -> tuple[str, str]:
    if "|" in payload:
        name, _, desc = payload.partition("|")
        return name.strip(), desc.strip()
    return payload.strip(), ""


def parse_step1_response(
    raw: str,
    num_keyframes: int = DEFAULT_NUM_KEYFRAMES,
    target_frames: int = DEFAULT_TARGET_FRAMES,
) -> ParseOutcome:
    """Extract per-scene (description, entities, background) drafts."""
    diagnostics: list[str] = []
    if not raw.strip():
        return ParseOutcome(INVALID, diagnostics=["empty response"])

    body, fenced = _extract_fence(raw)
    repaired = not fenced
    if not fenced:
        diagnostics.append("no fenced block found; parsed the whole response body")

    scenes_raw: list[dict] = []
    current: dict | None = None

    def open_scene(label: int | None):
        nonlocal current
        current = {"label": label, "description": "", "background": "", "entities": []}
        scenes_raw.append(current)

    for line in body.splitlines():
        if not line.strip():
            continue
        m = _SCENE_HEADER_RE.match(line)
        if m:
            open_scene(int(m.group(1)))
            continue
        m = _SCENE_INLINE_RE.match(line)
        if m:
            open_scene(int(m.group(1)))
            current["description"] = m.group(2).strip()
            repaired = True
            diagnostics.append(f"scene {m.group(1)}: inline description after header")
            continue
        m = _SCENE_NUMBERED_RE.match(line)
        if m and (current is None or _looks_like_new_scene(m.group(2))):
            open_scene(int(m.group(1)))
            rest = m.group(2).strip()
            if rest:
                current["description"] = rest
            repaired = True
            diagnostics.append(f"scene header {m.group(1)!r} used bare numbering")
            continue
        if current is None:
            continue  # surrounding prose before the first scene
        m = _DESCRIPTION_RE.match(line)
        if m:
            current["description"] = m.group(1).strip()
            continue
        m = _BACKGROUND_RE.match(line)
        if m:
            current["background"] = m.group(1).strip()
            continue
        m = _ENTITY_RE.match(line)
        if m:
            current["entities"].append(_split_entity_payload(m.group(1)))
            continue
        m = _ENTITIES_RE.match(line)
        if m:
            for part in m.group(1).split(";"):
                if part.strip():
                    current["entities"].append(_split_entity_payload(part))
            repaired = True
            diagnostics.append("entities given on a single line")
            continue

    if not scenes_raw:
        return ParseOutcome(INVALID, diagnostics=diagnostics + ["no recognizable scene list"])

    labels = [s["label"] for s in scenes_raw]
    if labels != list(range(1, len(scenes_raw) + 1)):
        repaired = True
        diagnostics.append(f"scene numbering {labels} normalized to 1..{len(scenes_raw)}")

    scenes: list[SceneSpec] = []
    for i, s in enumerate(scenes_raw, start=1):
        if not s["entities"]:
            return ParseOutcome(
                INVALID, diagnostics=diagnostics + [f"scene {i} lists no entities"]
            )
        if not s["description"]:
            repaired = True
            diagnostics.append(f"scene {i} has no description line")
        used_ids: set[str] = set()
        entities = []
        for name, desc in s["entities"]:
            base = f"s{i}-{_slug(name)}"
            entity_id = base
            bump = 2
            while entity_id in used_ids:
                entity_id = f"{base}-{bump}"
                bump += 1
            used_ids.add(entity_id)
            entities.append(EntityTrack(entity_id=entity_id, name=name, description=desc))
        scenes.append(
            SceneSpec(
                index=i,
                description=s["description"],
                background=s["background"],
                entities=entities,
                num_keyframes=num_keyframes,
                target_frames=target_frames,
            )
        )

    return ParseOutcome(REPAIRED if repaired else OK, fragment=scenes, diagnostics=diagnostics)


def _looks_like_new_scene(rest: str) -> bool:
    # bare "1. ..." numbering counts as a scene header only when the line
    # isn't one of the keyed lines
    probe = rest.strip().lower()
    return not probe.startswith(("description", "background", "entity", "entities", "frame"))


def parse_step2_response(raw: str, scene: SceneSpec) -> ParseOutcome:
    """Fill keyframe boxes for a scene's entities from a layout completion.

    Boxes are snapped to the quantization grid at parse time. The outcome is
    invalid when fewer than ``scene.num_keyframes`` frames parse or any frame
    carries zero boxes.
    """
    diagnostics: list[str] = []
    if not raw.strip():
        return ParseOutcome(INVALID, diagnostics=["empty response"])

    body, fenced = _extract_fence(raw)
    repaired = not fenced
    if not fenced:
        diagnostics.append("no fenced block found; parsed the whole response body")

    known = {e.name: e for e in scene.entities}
    frames: list[tuple[int | None, list[tuple[str, BoundingBox]]]] = []

    for line in body.splitlines():
        if not line.strip():
            continue
        m = _FRAME_RE.match(line)
        if m:
            label: int | None = int(m.group(1))
            payload = m.group(2)
        elif "[" in line and "," in line:
            label = None
            payload = line
            repaired = True
            diagnostics.append(f"unlabeled frame line {line.strip()[:40]!r}")
        else:
            continue

        boxes: list[tuple[str, BoundingBox]] = []
        for part in payload.split(";"):
            part = part.strip()
            if not part:
                continue
            bm = _BOX_RE.match(part)
            if not bm:
                diagnostics.append(f"unparseable box segment {part[:40]!r}")
                repaired = True
                continue
            name = bm.group(1).strip()
            try:
                coords = [float(bm.group(j)) for j in range(2, 6)]
            except ValueError:
                diagnostics.append(f"bad coordinates in {part[:40]!r}")
                repaired = True
                continue
            if not all(math.isfinite(c) for c in coords):
                diagnostics.append(f"non-finite coordinates in {part[:40]!r}")
                repaired = True
                continue
            if name not in known:
                diagnostics.append(f"unknown entity {name!r} ignored")
                repaired = True
                continue
            box = BoundingBox(*coords)
            snapped = quantize_box(box)
            if snapped != box:
                repaired = True
                diagnostics.append(f"{name}: coordinates snapped to 0.05 grid")
            boxes.append((name, snapped))
        frames.append((label, boxes))

    n = scene.num_keyframes
    if len(frames) < n:
        return ParseOutcome(
            INVALID,
            diagnostics=diagnostics
            + [f"MISSING_KEYFRAMES: found {len(frames)} frames, need {n}"],
        )
    if len(frames) > n:
        repaired = True
        diagnostics.append(f"{len(frames)} frame lines; keeping the first {n}")
        frames = frames[:n]

    labels = [label for label, _ in frames]
    if labels != list(range(1, n + 1)):
        repaired = True
        diagnostics.append(f"frame labels {labels} normalized to 1..{n}")

    empty = [i + 1 for i, (_, boxes) in enumerate(frames) if not boxes]
    if empty:
        return ParseOutcome(
            INVALID, diagnostics=diagnostics + [f"EMPTY_FRAME: frames {empty} have no boxes"]
        )

    tracks: list[EntityTrack] = []
    for entity in scene.entities:
        per_frame: list[BoundingBox | None] = []
        for _, boxes in frames:
            found = [b for name, b in boxes if name == entity.name]
            per_frame.append(found[0] if found else None)
        if all(b is None for b in per_frame):
            repaired = True
            diagnostics.append(f"entity {entity.name!r} received no boxes; dropped from scene")
            continue
        filled: list[BoundingBox] = []
        for i, b in enumerate(per_frame):
            if b is None:
                repaired = True
                diagnostics.append(f"entity {entity.name!r} missing in frame {i + 1}; carried nearest box")
                b = _nearest(per_frame, i)
            filled.append(b)
        tracks.append(
            EntityTrack(
                entity_id=entity.entity_id,
                name=entity.name,
                description=entity.description,
                keyframes=[Keyframe(frame=i, box=b) for i, b in enumerate(filled)],
            )
        )

    return ParseOutcome(REPAIRED if repaired else OK, fragment=tracks, diagnostics=diagnostics)


def _nearest(values: list, i: int):
    for offset in range(1, len(values)):
        for j in (i - offset, i + offset):
            if 0 <= j < len(values) and values[j] is not None:
                return values[j]
    raise AssertionError("caller guarantees at least one value")


def parse_alpha_reply(raw: str) -> float | None:
    m = _NUMBER_RE.search(raw)
    if not m:
        return None
    try:
        return float(m.group(0))
    except ValueError:  # pragma: no cover - regex guarantees float syntax
        return None
