"""Prompt templates for the two planning steps and the dynamic guidance-
strength query.

Templates ship as editable JSON assets; the wording is ours and nothing
downstream asserts on it. Rendering is strict: every placeholder in the
template text must be bound, and rendering is byte-deterministic for fixed
inputs.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .plan import PlanError, SceneSpec

TEMPLATE_IDS = ("step1", "step2", "dynamic_alpha")


class TemplateError(PlanError):
    code = "TEMPLATE_ERROR"


@dataclass
class PromptTemplate:
    template_id: str
    text: str
    in_context_examples: list[str]

    def __post_init__(self):
        if self.template_id not in TEMPLATE_IDS:
            raise TemplateError(f"unknown template id {self.template_id!r}")


def load_template(template_id: str, path: str | Path | None = None) -> PromptTemplate:
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
    else:
        raw = (
            resources.files("vidplan.assets")
            .joinpath(f"{template_id}_template.json")
            .read_text(encoding="utf-8")
        )
    doc = json.loads(raw)
    return PromptTemplate(
        template_id=doc["template_id"],
        text=doc["text"],
        in_context_examples=list(doc.get("in_context_examples", [])),
    )


def _render(template: PromptTemplate, bindings: dict[str, str]) -> str:
    fields = {
        name for _, name, _, _ in string.Formatter().parse(template.text) if name is not None
    }
    missing = fields - bindings.keys()
    if missing:
        raise TemplateError(
            f"template {template.template_id!r} has unbound placeholders: {sorted(missing)}"
        )
    return template.text.format(**{k: bindings[k] for k in fields})


def render_step1_prompt(source_prompt: str, template: PromptTemplate) -> str:
    if template.template_id != "step1":
        raise TemplateError(f"expected step1 template, got {template.template_id!r}")
    return _render(
        template,
        {"task": source_prompt, "examples": "\n\n".join(template.in_context_examples)},
    )


def frame_slot_line(num_keyframes: int) -> str:
    return "Frames to fill: " + " | ".join(f"frame {k}" for k in range(1, num_keyframes + 1))


def render_step2_prompt(scene: SceneSpec, template: PromptTemplate) -> str:
    if template.template_id != "step2":
        raise TemplateError(f"expected step2 template, got {template.template_id!r}")
    entities = "; ".join(
        f"{e.name} | {e.description}" if e.description else e.name for e in scene.entities
    )
    return _render(
        template,
        {
            "examples": "\n\n".join(template.in_context_examples),
            "description": scene.description,
            "background": scene.background,
            "entities": entities,
            "num_keyframes": str(scene.num_keyframes),
            "frame_slots": frame_slot_line(scene.num_keyframes),
        },
    )


def render_alpha_prompt(source_prompt: str, template: PromptTemplate) -> str:
    if template.template_id != "dynamic_alpha":
        raise TemplateError(f"expected dynamic_alpha template, got {template.template_id!r}")
    return _render(
        template,
        {"task": source_prompt, "examples": "\n\n".join(template.in_context_examples)},
    )
