"""Two-step plan compilation: scene drafting, exact-match consistency
grouping, per-scene layout generation, optional LLM-chosen guidance
strength, and final validation.

Failed parses are re-prompted with the diagnostics appended, up to a
bounded number of repair attempts per step. Per-scene layout requests fan
out concurrently when the backend allows it; assembly is a single-writer
reduction in scene order, so a replay backend gives byte-deterministic
plans end to end (with an injected clock).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from .backends import BackendError, DecodingParams, LlmBackend
from .parsing import INVALID, ParseOutcome, parse_alpha_reply, parse_step1_response, parse_step2_response
from .plan import (
    AlphaSetting,
    ConsistencyGroups,
    PlanError,
    Provenance,
    ProvenanceEntry,
    SceneSpec,
    ValidationReport,
    VideoPlan,
    validate_plan,
)
from .templates import (
    PromptTemplate,
    load_template,
    render_alpha_prompt,
    render_step1_prompt,
    render_step2_prompt,
)

ALPHA_MIN, ALPHA_MAX = 0.0, 0.3
ALPHA_FALLBACK = 0.1


class CompileFailed(PlanError):
    code = "COMPILE_FAILED"

    def __init__(self, message: str, plan: VideoPlan | None, report: "CompileReport"):
        super().__init__(message)
        self.plan = plan
        self.report = report


@dataclass
class PlannerConfig:
    alpha_mode: str = "static"  # "static" | "llm"
    static_alpha: float = 0.1
    max_repair_attempts: int = 2  # re-prompts per failed step
    fanout: int = 4  # concurrent step-2 requests
    num_keyframes: int = 9
    target_frames: int = 16
    decoding: DecodingParams = field(default_factory=DecodingParams)
    normalize_names: bool = False  # lowercase names before grouping
    clock: Callable[[], str] | None = None


@dataclass
class AttemptRecord:
    step: str
    scene: int | None
    attempt: int
    status: str
    diagnostics: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "step": self.step,
            "scene": self.scene,
            "attempt": self.attempt,
            "status": self.status,
            "diagnostics": self.diagnostics,
        }


@dataclass
class CompileReport:
    attempts: list[AttemptRecord] = field(default_factory=list)
    validation: ValidationReport | None = None
    valid: bool = False
    failure: str | None = None

    @property
    def retry_count(self) -> int:
        return sum(1 for a in self.attempts if a.attempt > 0)

    def scene_failures(self) -> list[int]:
        return sorted(
            {a.scene for a in self.attempts if a.scene is not None and a.status == INVALID}
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "failure": self.failure,
            "retry_count": self.retry_count,
            "attempts": [a.as_dict() for a in self.attempts],
            "validation": self.validation.as_dict() if self.validation else None,
        }


def build_consistency_groups(
    scenes: Sequence[SceneSpec],
    include_backgrounds: bool = True,
    normalize_names: bool = False,
) -> ConsistencyGroups:
    """Exact-match grouping: every entity (and background) name maps to the
    sorted scene indices where the identical string occurs.

    Matching is case-sensitive by default; ``normalize_names`` lowercases
    first as an opt-in pre-pass.
    """
    groups: dict[str, list[int]] = {}

    def add(name: str, index: int):
        if not name:
            return
        key = name.lower() if normalize_names else name
        members = groups.setdefault(key, [])
        if index not in members:
            members.append(index)

    for scene in scenes:
        for entity in scene.entities:
            add(entity.name, scene.index)
        if include_backgrounds:
            add(scene.background, scene.index)
    return ConsistencyGroups({name: sorted(members) for name, members in groups.items()})


def request_dynamic_alpha(
    source_prompt: str,
    backend: LlmBackend,
    template: PromptTemplate | None = None,
    decoding: DecodingParams | None = None,
) -> tuple[AlphaSetting, list[str]]:
    """Ask the backend for a guidance-strength value in [0, 0.3].

    The reply is clamped into range; an unparseable reply falls back to the
    static default with a diagnostic. Transport failures propagate as
    BACKEND_ERROR (the backend retries internally).
    """
    template = template or load_template("dynamic_alpha")
    prompt = render_alpha_prompt(source_prompt, template)
    reply = backend.complete(prompt, decoding or DecodingParams())
    value = parse_alpha_reply(reply)
    if value is None:
        return (
            AlphaSetting("static", ALPHA_FALLBACK),
            [f"unparseable guidance-strength reply {reply[:40]!r}; fell back to static {ALPHA_FALLBACK}"],
        )
    diagnostics = []
    clamped = min(ALPHA_MAX, max(ALPHA_MIN, value))
    if clamped != value:
        diagnostics.append(f"reply {value} clamped into [{ALPHA_MIN}, {ALPHA_MAX}]")
    return AlphaSetting("llm_dynamic", clamped), diagnostics


@dataclass
class _StepResult:
    outcome: ParseOutcome
    attempts: list[AttemptRecord]
    responses: list[ProvenanceEntry]


def _attempt_step(
    step: str,
    scene_index: int | None,
    prompt: str,
    parse: Callable[[str], ParseOutcome],
    backend: LlmBackend,
    config: PlannerConfig,
) -> _StepResult:
    attempts: list[AttemptRecord] = []
    responses: list[ProvenanceEntry] = []
    current_prompt = prompt
    outcome = ParseOutcome(INVALID, diagnostics=["no attempt made"])
    for attempt in range(config.max_repair_attempts + 1):
        raw = backend.complete(current_prompt, config.decoding)
        responses.append(ProvenanceEntry(step=step, scene=scene_index, attempt=attempt, response=raw))
        outcome = parse(raw)
        attempts.append(
            AttemptRecord(step, scene_index, attempt, outcome.status, list(outcome.diagnostics))
        )
        if outcome.usable:
            break
        # re-prompt with the diagnostics appended so the model can repair
        problems = "; ".join(outcome.diagnostics) or "unparseable reply"
        current_prompt = (
            f"{prompt}\n\nYour previous reply could not be used ({problems}). "
            "Answer again using exactly the required fenced format."
        )
    return _StepResult(outcome=outcome, attempts=attempts, responses=responses)


def compile_plan(
    source_prompt: str,
    backend: LlmBackend,
    config: PlannerConfig | None = None,
    step1_template: PromptTemplate | None = None,
    step2_template: PromptTemplate | None = None,
    alpha_template: PromptTemplate | None = None,
) -> tuple[VideoPlan, CompileReport]:
    """Run the full pipeline; raises CompileFailed (with the partial plan
    attached) when any step stays invalid after the repair attempts."""
    config = config or PlannerConfig()
    step1_template = step1_template or load_template("step1")
    step2_template = step2_template or load_template("step2")
    report = CompileReport()
    provenance = Provenance(
        model_id=backend.model_id,
        created_at=(config.clock or _utc_now)(),
    )

    def fail(message: str, plan: VideoPlan | None) -> CompileFailed:
        report.failure = message
        return CompileFailed(message, plan, report)

    # step 1: scene drafting
    step1 = _attempt_step(
        "step1",
        None,
        render_step1_prompt(source_prompt, step1_template),
        lambda raw: parse_step1_response(raw, config.num_keyframes, config.target_frames),
        backend,
        config,
    )
    report.attempts.extend(step1.attempts)
    provenance.responses.extend(step1.responses)
    if not step1.outcome.usable:
        raise fail("step1 produced no usable scene list", None)
    scenes: list[SceneSpec] = step1.outcome.fragment

    groups = build_consistency_groups(scenes, normalize_names=config.normalize_names)
    partial = VideoPlan(
        source_prompt=source_prompt,
        scenes=scenes,
        consistency=groups,
        alpha=AlphaSetting("static", config.static_alpha),
        provenance=provenance,
    )

    # step 2: per-scene layouts, bounded fan-out, reduced in scene order
    workers = config.fanout if backend.concurrency_safe else 1

    def run_scene(scene: SceneSpec) -> _StepResult:
        return _attempt_step(
            "step2",
            scene.index,
            render_step2_prompt(scene, step2_template),
            lambda raw: parse_step2_response(raw, scene),
            backend,
            config,
        )

    if workers > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_scene, scenes))
    else:
        results = [run_scene(scene) for scene in scenes]

    failed_scenes = []
    for scene, result in zip(scenes, results):
        report.attempts.extend(result.attempts)
        provenance.responses.extend(result.responses)
        if result.outcome.usable:
            scene.entities = result.outcome.fragment
        else:
            failed_scenes.append(scene.index)
    if failed_scenes:
        raise fail(f"step2 failed for scenes {failed_scenes}", partial)

    # groups may reference entities dropped during layout repair
    partial.consistency = build_consistency_groups(scenes, normalize_names=config.normalize_names)

    # guidance strength
    if config.alpha_mode == "llm":
        alpha, diags = request_dynamic_alpha(source_prompt, backend, alpha_template, config.decoding)
        provenance.responses.append(
            ProvenanceEntry(step="dynamic_alpha", scene=None, attempt=0, response=f"{alpha.value}")
        )
        report.attempts.append(
            AttemptRecord("dynamic_alpha", None, 0, "ok" if alpha.mode == "llm_dynamic" else "repaired", diags)
        )
        partial.alpha = alpha
    else:
        partial.alpha = AlphaSetting("static", config.static_alpha)

    report.validation = validate_plan(partial)
    if not report.validation.valid:
        raise fail(f"assembled plan failed validation: {report.validation.codes()}", partial)
    report.valid = True
    return partial, report


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


@dataclass
class BatchReport:
    """Per-batch compile bookkeeping; ``n_valid`` is the count of prompts
    whose layouts parsed into a valid plan."""

    n_prompts: int = 0
    n_valid: int = 0
    failures: dict[int, str] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return {
            "n_prompts": self.n_prompts,
            "n_valid": self.n_valid,
            "failures": {str(k): v for k, v in self.failures.items()},
        }


def compile_batch(
    prompts: Sequence[str],
    backend_factory: Callable[[int, str], LlmBackend],
    config: PlannerConfig | None = None,
    keep_plans: bool = False,
) -> tuple[BatchReport, list[VideoPlan | None]]:
    """Compile every prompt with a fresh backend from the factory; counts
    how many produce valid plans."""
    report = BatchReport(n_prompts=len(prompts))
    plans: list[VideoPlan | None] = []
    for i, prompt in enumerate(prompts):
        backend = backend_factory(i, prompt)
        try:
            plan, _ = compile_plan(prompt, backend, config)
        except (CompileFailed, BackendError) as e:
            report.failures[i] = str(e)
            plans.append(None)
            continue
        report.n_valid += 1
        plans.append(plan if keep_plans else None)
    return report, plans
