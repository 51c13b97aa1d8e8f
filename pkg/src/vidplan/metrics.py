"""Layout, movement, and cross-scene consistency metrics over pluggable
detector/embedding providers.

All scoring is pure given provider outputs. Image coordinates are y-down,
so "top to bottom" means the center's y increases. A missing detection
scores 0 with reason NO_DETECTION rather than failing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .embeddings import EmbeddingVector
from .layout import DenseLayout, box_area, box_center
from .plan import BoundingBox, PlanError

DIRECTION_PHRASES = ("left to right", "right to left", "top to bottom", "bottom to top")

# phrase -> (axis, sign of the required center delta); y grows downward
_DIRECTION_AXES = {
    "left to right": (0, +1.0),
    "right to left": (0, -1.0),
    "top to bottom": (1, +1.0),
    "bottom to top": (1, -1.0),
}

SPATIAL_RELATIONS = ("left", "right", "above", "below")
SCALE_RELATIONS = ("bigger", "smaller", "same")

NO_DETECTION = "NO_DETECTION"


class InsufficientScenesError(PlanError):
    code = "INSUFFICIENT_SCENES"


@dataclass(frozen=True)
class Detection:
    label: str
    box: BoundingBox
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


class DetectorProvider(Protocol):
    def detect(self, frame: object, label: str) -> list[Detection]: ...


def best_detection(detections: Sequence[Detection]) -> Detection | None:
    """Highest score wins; ties break toward the larger box."""
    if not detections:
        return None
    return max(detections, key=lambda d: (d.score, box_area(d.box)))


# --- movement ----------------------------------------------------------------


def movement_direction_score(
    first: Detection | None,
    last: Detection | None,
    direction: str,
    epsilon: float = 0.0,
) -> int:
    """Binary check that the detected center moved the prompted way between
    the first and last frames."""
    if direction not in _DIRECTION_AXES:
        raise ValueError(f"unknown direction {direction!r}")
    if first is None or last is None:
        return 0
    axis, sign = _DIRECTION_AXES[direction]
    delta = box_center(last.box)[axis] - box_center(first.box)[axis]
    return 1 if sign * delta > epsilon else 0


# --- cross-scene consistency --------------------------------------------------


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    # sqrt(dot*dot) instead of norm*norm so identical vectors give exactly 1.0
    num = float(a @ b)
    denom = float(np.sqrt((a @ a) * (b @ b)))
    if denom == 0.0:
        return 0.0
    return num / denom


def object_consistency(
    embeddings: Sequence[EmbeddingVector | np.ndarray],
    literal_paper_denominator: bool = False,
) -> float:
    """Mean cosine similarity over adjacent scene pairs.

    Default divides the N-1 pair terms by N-1 (a true mean); the literal
    mode divides by N instead, matching the published formula's 1/N
    prefactor over N-1 summands.
    """
    if len(embeddings) < 2:
        raise InsufficientScenesError(f"need >= 2 scene embeddings, got {len(embeddings)}")
    vectors = [e.values if isinstance(e, EmbeddingVector) else np.asarray(e, dtype=float) for e in embeddings]
    total = sum(_cosine(a, b) for a, b in zip(vectors, vectors[1:]))
    n = len(vectors)
    return total / (n if literal_paper_denominator else n - 1)


# --- layout skill checks --------------------------------------------------------

SCALE_BIGGER_FACTOR = 1.2
SCALE_SAME_BAND = 1.1


def vpeval_object(detections: Sequence[Detection], target: str) -> int:
    return 1 if any(d.label == target for d in detections) else 0


def vpeval_count(detections: Sequence[Detection], target: str, k: int) -> int:
    return 1 if sum(1 for d in detections if d.label == target) == k else 0


def vpeval_spatial(detections: Sequence[Detection], a: str, relation: str, b: str) -> int:
    """Dominant-axis rule: left/right need |dx| > |dy| with the right sign;
    above/below mirror on y (y-down)."""
    if relation not in SPATIAL_RELATIONS:
        raise ValueError(f"unknown spatial relation {relation!r}")
    da = best_detection([d for d in detections if d.label == a])
    db = best_detection([d for d in detections if d.label == b])
    if da is None or db is None:
        return 0
    ax, ay = box_center(da.box)
    bx, by = box_center(db.box)
    dx, dy = ax - bx, ay - by
    if relation == "left":
        return 1 if dx < 0 and abs(dx) > abs(dy) else 0
    if relation == "right":
        return 1 if dx > 0 and abs(dx) > abs(dy) else 0
    if relation == "above":
        return 1 if dy < 0 and abs(dy) > abs(dx) else 0
    return 1 if dy > 0 and abs(dy) > abs(dx) else 0


def vpeval_scale(detections: Sequence[Detection], a: str, relation: str, b: str) -> int:
    if relation not in SCALE_RELATIONS:
        raise ValueError(f"unknown scale relation {relation!r}")
    da = best_detection([d for d in detections if d.label == a])
    db = best_detection([d for d in detections if d.label == b])
    if da is None or db is None:
        return 0
    area_a, area_b = box_area(da.box), box_area(db.box)
    if relation == "bigger":
        return 1 if area_a > SCALE_BIGGER_FACTOR * area_b else 0
    if relation == "smaller":
        return 1 if area_b > SCALE_BIGGER_FACTOR * area_a else 0
    if area_a == 0.0 and area_b == 0.0:
        return 1
    if area_a == 0.0 or area_b == 0.0:
        return 0
    ratio = area_a / area_b
    return 1 if 1.0 / SCALE_SAME_BAND <= ratio <= SCALE_SAME_BAND else 0


# --- layout-oracle detector -----------------------------------------------------


class LayoutOracleDetector:
    """Echoes the plan's own boxes with score 1.0; the frame handle is the
    frame index into the dense layout."""

    def __init__(self, dense: DenseLayout):
        self.dense = dense

    def detect(self, frame: object, label: str) -> list[Detection]:
        index = int(frame)  # type: ignore[arg-type]
        return [
            Detection(label=fb.name, box=fb.box, score=1.0)
            for fb in self.dense.frames[index]
            if fb.name == label
        ]

    def detect_all(self, frame: object) -> list[Detection]:
        index = int(frame)  # type: ignore[arg-type]
        return [Detection(label=fb.name, box=fb.box, score=1.0) for fb in self.dense.frames[index]]


def layout_oracle_detector(dense: DenseLayout) -> LayoutOracleDetector:
    return LayoutOracleDetector(dense)


# --- reports ---------------------------------------------------------------------


@dataclass
class MetricItem:
    prompt_id: str
    metric: str
    score: float
    details: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "prompt_id": self.prompt_id,
            "metric": self.metric,
            "score": self.score,
            "details": self.details,
        }


@dataclass
class MetricReport:
    per_item: list[MetricItem]
    aggregates: dict[str, float]
    counts: dict[str, int]

    def as_dict(self) -> dict[str, Any]:
        return {
            "per_item": [i.as_dict() for i in self.per_item],
            "aggregates": self.aggregates,
            "counts": self.counts,
        }

    def render_table(self) -> str:
        rows = [("metric", "mean", "n")]
        for metric in sorted(self.counts):
            rows.append((metric, f"{self.aggregates[metric]:.4f}", str(self.counts[metric])))
        if "overall" in self.aggregates:
            rows.append(("overall", f"{self.aggregates['overall']:.4f}", "-"))
        widths = [max(len(r[c]) for r in rows) for c in range(3)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines)


def aggregate(items: Iterable[MetricItem]) -> MetricReport:
    """Per-metric means in exact rational arithmetic, plus the overall mean
    of the per-metric means."""
    items = list(items)
    sums: dict[str, Fraction] = {}
    counts: dict[str, int] = {}
    for item in items:
        sums[item.metric] = sums.get(item.metric, Fraction(0)) + Fraction(item.score)
        counts[item.metric] = counts.get(item.metric, 0) + 1

    aggregates: dict[str, float] = {}
    means: list[Fraction] = []
    for metric in sorted(sums):
        mean = sums[metric] / counts[metric]
        means.append(mean)
        aggregates[metric] = float(mean)
    if means:
        aggregates["overall"] = float(sum(means) / len(means))
    return MetricReport(per_item=items, aggregates=aggregates, counts=counts)


# --- detection exchange format -----------------------------------------------


def write_detections(path: str | Path, records: Iterable[tuple[str, int, Detection]]) -> None:
    """One JSONL row per detection: {prompt_id, frame, label, x0..y1, score}."""
    lines = []
    for prompt_id, frame, det in records:
        lines.append(
            json.dumps(
                {
                    "prompt_id": prompt_id,
                    "frame": frame,
                    "label": det.label,
                    "x0": det.box.x0,
                    "y0": det.box.y0,
                    "x1": det.box.x1,
                    "y1": det.box.y1,
                    "score": det.score,
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_detections(path: str | Path) -> dict[str, dict[int, list[Detection]]]:
    out: dict[str, dict[int, list[Detection]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        det = Detection(
            label=r["label"],
            box=BoundingBox(r["x0"], r["y0"], r["x1"], r["y1"]),
            score=r.get("score", 1.0),
        )
        out.setdefault(r["prompt_id"], {}).setdefault(int(r["frame"]), []).append(det)
    return out
