"""Pluggable LLM backends: an OpenAI-compatible HTTP client, a
replay-from-file backend, and a deterministic rule-based mock.

Backends declare whether they tolerate concurrent use; the replay backend
is order-sensitive and therefore serial. Completion calls are side-effect
free with respect to the plan store.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock
from typing import Protocol

import httpx

from .metrics import DIRECTION_PHRASES as DIRECTIONS
from .plan import PlanError


class BackendError(PlanError):
    code = "BACKEND_ERROR"


@dataclass
class DecodingParams:
    temperature: float = 0.0  # reproducibility default
    max_tokens: int = 1024


class LlmBackend(Protocol):
    model_id: str
    concurrency_safe: bool

    def complete(self, prompt: str, params: DecodingParams) -> str: ...


class HttpChatBackend:
    """OpenAI-compatible chat-completion client.

    The API key comes from an environment variable (default OPENAI_API_KEY);
    transport failures are retried with backoff before raising BACKEND_ERROR.
    """

    concurrency_safe = True

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 2,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model_id = model
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, prompt: str, params: DecodingParams) -> str:
        headers = {}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(0.2 * attempt)
            try:
                resp = self._client.post(
                    f"{self.base_url}/chat/completions", json=body, headers=headers
                )
                if resp.status_code >= 500:
                    last_error = BackendError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except httpx.TransportError as e:
                last_error = e
            except (httpx.HTTPStatusError, KeyError, ValueError) as e:
                raise BackendError(f"bad completion response: {e}") from e
        raise BackendError(f"transport failed after {self.max_retries + 1} attempts: {last_error}")


class ReplayBackend:
    """Replays ordered prompt->response pairs from a JSONL file: one
    ``{"prompt": ..., "response": ...}`` object per line."""

    concurrency_safe = False  # order is the contract

    def __init__(self, path: str | Path, strict: bool = False, model_id: str = "replay"):
        self.model_id = model_id
        self.strict = strict
        self._pairs: list[tuple[str, str]] = []
        self._cursor = 0
        self._lock = Lock()
        for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                self._pairs.append((record["prompt"], record["response"]))
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise BackendError(f"{path}:{i + 1}: bad replay record: {e}") from e

    def complete(self, prompt: str, params: DecodingParams) -> str:
        with self._lock:
            if self._cursor >= len(self._pairs):
                raise BackendError(f"replay exhausted after {len(self._pairs)} completions")
            recorded_prompt, response = self._pairs[self._cursor]
            if self.strict and recorded_prompt != prompt:
                raise BackendError(
                    f"replay prompt mismatch at index {self._cursor}: "
                    f"expected {recorded_prompt[:60]!r}..., got {prompt[:60]!r}..."
                )
            self._cursor += 1
            return response


def write_replay_file(path: str | Path, pairs: list[tuple[str, str]]) -> None:
    lines = [json.dumps({"prompt": p, "response": r}, ensure_ascii=False) for p, r in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- rule-based mock ----------------------------------------------------------

_STOPWORDS = {"moving", "sliding", "rolling", "drifting", "going", "flying", "moves", "slides"}

_CHEF_STEP1 = """```
scene 1
description: A chef gathers flour, butter, and caraway seeds on the counter.
background: kitchen
entity: chef | wearing a white uniform and apron
entity: oven | stainless steel, door slightly open

scene 2
description: The chef mixes the batter in a large bowl.
background: kitchen
entity: chef | wearing a white uniform and apron

scene 3
description: The chef pours the batter into a loaf tin.
background: kitchen
entity: chef | wearing a white uniform and apron

scene 4
description: The chef takes the golden cake out of the oven to cool.
background: kitchen
entity: chef | wearing a white uniform and apron
```"""


def extract_moving_object(text: str) -> str:
    """Noun phrase ahead of the direction clause: 'pushing a glass from left
    to right' -> 'glass'."""
    lowered = text.lower()
    idx = len(lowered)
    for phrase in DIRECTIONS:
        pos = lowered.find(phrase)
        if pos >= 0:
            idx = min(idx, pos)
    head = re.sub(r"[^a-z0-9 ]", " ", lowered[:idx])
    words = [w for w in head.split() if w not in ("a", "an", "the", "from")]
    while words and words[-1] in _STOPWORDS:
        words.pop()
    return words[-1] if words else "object"


def direction_in(text: str) -> str | None:
    lowered = text.lower()
    for phrase in DIRECTIONS:
        if phrase in lowered:
            return phrase
    return None


@dataclass
class RuleBasedMockBackend:
    """Deterministic scripted planner used by tests and the closed loop.

    Recognizes the markers of the shipped templates, answers step 1 with a
    scene list, step 2 with grid-aligned 9-frame layouts (moving the object
    along the prompted direction), and the guidance-strength query with a
    fixed decimal. ``reverse_directions`` flips every trajectory (the
    adversarial configuration); ``corrupt_step2`` replaces layout responses
    with garbage so compilation fails.
    """

    model_id: str = "rule-mock"
    concurrency_safe: bool = True
    alpha_reply: str = "0.2"
    n_generic_scenes: int = 2
    reverse_directions: bool = False
    corrupt_step2: bool = False
    calls: list[str] = field(default_factory=list)

    def complete(self, prompt: str, params: DecodingParams) -> str:
        self.calls.append(prompt)
        if "Scene description:" in prompt and "Answer:" in prompt:
            return self._step2(prompt)
        if "Prompt:" in prompt and "layout guidance" in prompt:
            return self.alpha_reply
        if "Task:" in prompt:
            return self._step1(prompt)
        raise BackendError(f"mock cannot classify prompt: {prompt[:80]!r}")

    # step 1 ----------------------------------------------------------------

    def _step1(self, prompt: str) -> str:
        task = prompt.rstrip().rsplit("Task:", 1)[1].splitlines()[0].strip()
        if "caraway cakes" in task.lower():
            return _CHEF_STEP1
        direction = direction_in(task)
        if direction is not None:
            obj = extract_moving_object(task)
            return (
                "```\n"
                "scene 1\n"
                f"description: {task}\n"
                "background: plain backdrop\n"
                f"entity: {obj} | clearly visible\n"
                "```"
            )
        subject = extract_moving_object(task)
        blocks = []
        for i in range(1, self.n_generic_scenes + 1):
            blocks.append(
                f"scene {i}\n"
                f"description: {task}, part {i}\n"
                "background: simple set\n"
                f"entity: {subject} | clearly visible"
            )
        return "```\n" + "\n\n".join(blocks) + "\n```"

    # step 2 ----------------------------------------------------------------

    def _step2(self, prompt: str) -> str:
        if self.corrupt_step2:
            return "sorry, I cannot lay that out as boxes."
        description = prompt.rsplit("Scene description:", 1)[1].splitlines()[0].strip()
        entities_line = prompt.rsplit("Entities:", 1)[1].splitlines()[0].strip()
        names = [part.split("|")[0].strip() for part in entities_line.split(";") if part.strip()]
        frames_m = re.search(r"exactly (\d+) frames", prompt)
        n = int(frames_m.group(1)) if frames_m else 9

        direction = direction_in(description)
        if direction is not None and self.reverse_directions:
            flip = {
                "left to right": "right to left",
                "right to left": "left to right",
                "top to bottom": "bottom to top",
                "bottom to top": "top to bottom",
            }
            direction = flip[direction]

        lines = []
        for k in range(n):
            boxes = []
            for j, name in enumerate(names):
                if j == 0 and direction is not None:
                    boxes.append(f"{name} {self._moving_box(direction, k, n)}")
                else:
                    boxes.append(f"{name} {self._static_box(j)}")
            lines.append(f"frame {k + 1}: " + "; ".join(boxes))
        return "```\n" + "\n".join(lines) + "\n```"

    @staticmethod
    def _moving_box(direction: str, k: int, n: int) -> str:
        lo, hi, size = 0.05, 0.85, 0.15
        pos = round(lo + (hi - lo) * k / (n - 1), 2)
        if direction == "left to right":
            x0, y0 = pos, 0.40
        elif direction == "right to left":
            x0, y0 = round(hi + lo - pos, 2), 0.40
        elif direction == "top to bottom":
            x0, y0 = 0.40, pos
        else:  # bottom to top
            x0, y0 = 0.40, round(hi + lo - pos, 2)
        return f"[{x0:.2f}, {y0:.2f}, {x0 + size:.2f}, {y0 + size:.2f}]"

    @staticmethod
    def _static_box(slot: int) -> str:
        x0 = 0.55 + 0.1 * (slot % 4)
        return f"[{x0:.2f}, 0.30, {x0 + 0.1:.2f}, 0.90]"
