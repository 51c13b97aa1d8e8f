"""Evaluation prompt-set generators: direction-balanced movement prompts,
coreference-across-scenes episodes, and step-suffixed multi-scene baselines.

Seed captions, episode templates, and the pronoun table ship as small
synthetic asset files; all generators are deterministic given their inputs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

from .metrics import DIRECTION_PHRASES
from .plan import PlanError
from .templates import TemplateError


class ArgError(PlanError):
    code = "ARG_ERROR"


@dataclass
class PromptRecord:
    id: str
    text: str
    expected_direction: str | None = None
    target_entity: str | None = None
    episode_id: str | None = None
    skill: str | None = None
    args: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "text": self.text}
        for key in ("expected_direction", "target_entity", "episode_id", "skill"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.args:
            out["args"] = self.args
        return out


def write_prompt_set(path: str | Path, records: Iterable[PromptRecord]) -> None:
    lines = [json.dumps(r.as_dict(), ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_prompt_set(path: str | Path) -> list[PromptRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        records.append(
            PromptRecord(
                id=str(doc["id"]),
                text=doc["text"],
                expected_direction=doc.get("expected_direction"),
                target_entity=doc.get("target_entity"),
                episode_id=doc.get("episode_id"),
                skill=doc.get("skill"),
                args=doc.get("args", {}),
            )
        )
    return records


# --- movement-direction prompts ------------------------------------------------


def gen_actionbench_direction(
    seed_captions: Iterable[str],
) -> tuple[list[PromptRecord], list[str]]:
    """Four direction variants per seed caption.

    Each caption must contain a direction phrase; the phrase is substituted
    by each of the four directions while every other byte of the caption is
    preserved. Captions without a phrase are skipped with a diagnostic.
    """
    records: list[PromptRecord] = []
    skipped: list[str] = []
    for i, caption in enumerate(seed_captions):
        found = None
        for phrase in DIRECTION_PHRASES:
            pos = caption.find(phrase)
            if pos >= 0:
                found = (pos, phrase)
                break
        if found is None:
            skipped.append(f"seed {i}: no direction phrase in {caption[:50]!r}")
            continue
        pos, phrase = found
        for direction in DIRECTION_PHRASES:
            text = caption[:pos] + direction + caption[pos + len(phrase):]
            records.append(
                PromptRecord(
                    id=f"ab-{i:04d}-{direction.replace(' ', '_')}",
                    text=text,
                    expected_direction=direction,
                )
            )
    return records, skipped


# --- coreference episodes --------------------------------------------------------

CHARACTER_SLOT = "{character}"
PRONOUN_SLOT = "{pronoun}"


@dataclass
class EpisodeTemplate:
    """Multi-scene story skeleton: exactly one first-mention slot, then
    pronoun slots referencing it."""

    episode_id: str
    scene_sentences: list[str]
    pronoun_map: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        joined = "\n".join(self.scene_sentences)
        if joined.count(CHARACTER_SLOT) != 1:
            raise TemplateError(
                f"episode {self.episode_id!r} must contain exactly one {CHARACTER_SLOT} slot"
            )
        first = joined.find(CHARACTER_SLOT)
        pronoun = joined.find(PRONOUN_SLOT)
        if 0 <= pronoun < first:
            raise TemplateError(
                f"episode {self.episode_id!r} references the character before introducing it"
            )


@dataclass
class Episode:
    episode_id: str
    template_id: str
    target_entity: str
    sentences: list[str]


def _slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def gen_coref_sv(
    templates: list[EpisodeTemplate],
    entities: list[str],
    pronouns: dict[str, str] | None = None,
) -> list[Episode]:
    """Cartesian product of templates and entities: the first mention becomes
    the entity string, later mentions its pronoun."""
    pronouns = pronouns or load_pronoun_table()
    episodes = []
    for template in templates:
        template.validate()
        for entity in entities:
            pronoun = template.pronoun_map.get(entity) or pronouns.get(entity, "it")
            sentences = [
                s.replace(CHARACTER_SLOT, entity).replace(PRONOUN_SLOT, pronoun)
                for s in template.scene_sentences
            ]
            episodes.append(
                Episode(
                    episode_id=f"{template.episode_id}-{_slugify(entity)}",
                    template_id=template.episode_id,
                    target_entity=entity,
                    sentences=sentences,
                )
            )
    return episodes


def episodes_to_prompt_records(episodes: list[Episode]) -> list[PromptRecord]:
    return [
        PromptRecord(
            id=e.episode_id,
            text=" ".join(e.sentences),
            target_entity=e.target_entity,
            episode_id=e.template_id,
        )
        for e in episodes
    ]


# --- multi-scene baseline prompting ----------------------------------------------


def hirest_scene_prompts(task_prompt: str, n_scenes: int) -> list[str]:
    """Baseline per-scene prompts: the task with a ", step n/N" suffix."""
    if n_scenes < 1:
        raise ArgError(f"n_scenes must be >= 1, got {n_scenes}")
    return [f"{task_prompt}, step {n}/{n_scenes}" for n in range(1, n_scenes + 1)]


# --- assets ----------------------------------------------------------------------


def _asset_text(name: str) -> str:
    return resources.files("vidplan.assets").joinpath(name).read_text(encoding="utf-8")


def load_seed_captions(path: str | Path | None = None) -> list[str]:
    text = Path(path).read_text(encoding="utf-8") if path else _asset_text("seed_captions.txt")
    return [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]


def load_pronoun_table(path: str | Path | None = None) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8") if path else _asset_text("pronouns.json")
    return json.loads(text)


def load_episode_templates(path: str | Path | None = None) -> list[EpisodeTemplate]:
    text = Path(path).read_text(encoding="utf-8") if path else _asset_text("episode_templates.json")
    return [
        EpisodeTemplate(episode_id=doc["episode_id"], scene_sentences=list(doc["scene_sentences"]))
        for doc in json.loads(text)
    ]


def default_coref_entities() -> list[str]:
    return ["person", "dog", "cat", "mouse", "rabbit", "bear", "bird", "horse", "monkey", "elephant"]
