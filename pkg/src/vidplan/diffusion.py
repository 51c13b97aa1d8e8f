"""Toy latent-diffusion state: variance schedule, closed-form forward
noising, and deterministic reverse sampling with a two-stage guidance split.

The first round(alpha * N) reverse steps route the spatial block through
guided attention with the grounding tokens; the remaining steps bypass the
gated branch entirely. The default sampler is DDIM with eta=0; a PLMS-style
linear multistep is available as an option.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .grounding import (
    GatedAttentionParams,
    GroundingConfig,
    GroundingMlpParams,
    GroundingToken,
    GuidedAttentionParams,
    ShapeError,
    _guided_backward,
    _guided_forward,
    _stack_grounding,
    _xavier,
)
from .plan import PlanError


class StepError(PlanError):
    code = "STEP_ERROR"


def guided_step_count(alpha: float, n_steps: int) -> int:
    # half-up so the split is platform independent
    return int(math.floor(alpha * n_steps + 0.5))


@dataclass
class DenoiseSchedule:
    betas: np.ndarray  # (N,), each in (0, 1)
    alpha_bar: np.ndarray  # (N,), strictly decreasing cumulative products
    guided_steps: int

    @property
    def t_steps(self) -> int:
        return int(self.betas.shape[0])

    @classmethod
    def linear(
        cls,
        t_steps: int = 50,
        alpha: float = 0.1,
        beta_start: float = 1e-4,
        beta_end: float = 2e-2,
    ) -> "DenoiseSchedule":
        betas = np.linspace(beta_start, beta_end, t_steps)
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        alpha_bar = np.cumprod(1.0 - betas)
        guided = guided_step_count(alpha, t_steps)
        if not 0 <= guided <= t_steps:
            raise ValueError(f"guided steps {guided} outside [0, {t_steps}]")
        return cls(betas=betas, alpha_bar=alpha_bar, guided_steps=guided)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative product after ``t`` forward steps; t=0 is the clean latent."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])


def forward_diffuse(
    z0: np.ndarray, t: int, schedule: DenoiseSchedule, noise: np.ndarray
) -> np.ndarray:
    """Closed-form jump to step ``t``: sqrt(abar_t) z0 + sqrt(1 - abar_t) noise.

    Equivalent to composing the stepwise Gaussian kernel t times.
    """
    if not 1 <= t <= schedule.t_steps:
        raise StepError(f"t={t} outside 1..{schedule.t_steps}")
    if noise.shape != z0.shape:
        raise ShapeError(f"noise shape {noise.shape} != latent shape {z0.shape}")
    abar = schedule.alpha_bar_at(t)
    return math.sqrt(abar) * z0 + math.sqrt(1.0 - abar) * noise


# --- toy denoiser ------------------------------------------------------------


@dataclass
class LatentConfig:
    frames: int = 4
    channels: int = 4
    height: int = 8
    width: int = 8

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.frames, self.channels, self.height, self.width)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


def time_embedding(t: int, dim: int) -> np.ndarray:
    emb = np.zeros(dim)
    half = dim // 2
    for j in range(half):
        freq = math.exp(-math.log(10000.0) * (2 * j) / dim)
        emb[2 * j] = math.sin(t * freq)
        emb[2 * j + 1] = math.cos(t * freq)
    return emb


class Denoiser(Protocol):
    def predict(
        self,
        z: np.ndarray,
        t: int,
        grounding: Sequence[Sequence[GroundingToken | np.ndarray]] | None,
        text_tokens: np.ndarray,
        guided: bool,
    ) -> np.ndarray: ...


@dataclass
class ToyDenoiser:
    """Spatial-only noise predictor: per frame, latent pixels become tokens,
    pass through the guided attention block, and project back to channels.

    Only the grounding MLP and the gated attention layer train; the
    input/output projections and the self/cross attention weights stay
    frozen (the parameter-efficient premise: an untrained gate reproduces
    the frozen backbone exactly).
    """

    gconfig: GroundingConfig
    lconfig: LatentConfig
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    guided: GuidedAttentionParams
    mlp: GroundingMlpParams
    text_proj: np.ndarray = field(default=None)  # type: ignore[assignment]

    @classmethod
    def init(
        cls,
        gconfig: GroundingConfig | None = None,
        lconfig: LatentConfig | None = None,
        seed: int = 0,
    ) -> "ToyDenoiser":
        gconfig = gconfig or GroundingConfig()
        lconfig = lconfig or LatentConfig()
        rng = np.random.default_rng(seed)
        d = gconfig.d_model
        return cls(
            gconfig=gconfig,
            lconfig=lconfig,
            w_in=_xavier(rng, lconfig.channels, d),
            b_in=np.zeros(d),
            w_out=_xavier(rng, d, lconfig.channels),
            b_out=np.zeros(lconfig.channels),
            guided=GuidedAttentionParams.init(d, rng),
            mlp=GroundingMlpParams.init(gconfig, rng),
            text_proj=_xavier(rng, gconfig.d_embed, d),
        )

    # -- parameter bookkeeping

    def trainable_items(self) -> list[tuple[str, np.ndarray]]:
        return [(f"mlp.{n}", a) for n, a in self.mlp.param_items()] + [
            (f"guided.gated.{n}", a) for n, a in self.guided.gated.param_items()
        ]

    def frozen_items(self) -> list[tuple[str, np.ndarray]]:
        return (
            [("w_in", self.w_in), ("b_in", self.b_in), ("w_out", self.w_out), ("b_out", self.b_out)]
            + [(f"guided.self_attn.{n}", a) for n, a in self.guided.self_attn.param_items()]
            + [(f"guided.cross.{n}", a) for n, a in self.guided.cross.param_items()]
            + [("text_proj", self.text_proj)]
        )

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return self.frozen_items() + self.trainable_items()

    def trainable_fraction(self) -> float:
        trainable = sum(a.size for _, a in self.trainable_items())
        total = sum(a.size for _, a in self.param_items())
        return trainable / total

    # -- forward/backward

    def frame_forward(
        self,
        z_frame: np.ndarray,
        t: int,
        grounding: np.ndarray,
        text: np.ndarray,
        guided: bool,
    ):
        c, h, w = self.lconfig.frame_shape
        if z_frame.shape != (c, h, w):
            raise ShapeError(f"frame shape {z_frame.shape} != {(c, h, w)}")
        pixels = z_frame.reshape(c, h * w).T
        x = pixels @ self.w_in + self.b_in + time_embedding(t, self.gconfig.d_model)
        y, block_cache = _guided_forward(x, grounding, text, self.guided, use_gated=guided)
        eps = (y @ self.w_out + self.b_out).T.reshape(c, h, w)
        return eps, (block_cache, y)

    def frame_backward(self, d_eps: np.ndarray, cache, grads: GuidedAttentionParams) -> np.ndarray:
        block_cache, _y = cache
        c, h, w = self.lconfig.frame_shape
        d_y = d_eps.reshape(c, h * w).T @ self.w_out.T
        _d_x, d_grounding = _guided_backward(d_y, block_cache, self.guided, grads)
        return d_grounding

    def predict(
        self,
        z: np.ndarray,
        t: int,
        grounding: Sequence[Sequence[GroundingToken | np.ndarray]] | None,
        text_tokens: np.ndarray,
        guided: bool,
    ) -> np.ndarray:
        frames = z.shape[0]
        d = self.gconfig.d_model
        text = np.asarray(text_tokens, dtype=float) if len(text_tokens) else np.zeros((0, d))
        out = np.empty_like(z)
        for f in range(frames):
            if guided and grounding is not None:
                per_frame = grounding[f] if f < len(grounding) else grounding[-1]
                g = _stack_grounding(list(per_frame), d)
            else:
                g = np.zeros((0, d))
            out[f], _ = self.frame_forward(z[f], t, g, text, guided=guided and grounding is not None)
        return out

    def text_tokens(self, embeddings: Sequence[np.ndarray]) -> np.ndarray:
        if not len(embeddings):
            return np.zeros((0, self.gconfig.d_model))
        return np.stack([np.asarray(e) for e in embeddings]) @ self.text_proj


# --- reverse sampling ---------------------------------------------------------


@dataclass
class SampleTrace:
    sampler: str
    t_steps: int
    guided_steps_planned: int
    guided_steps_executed: int = 0
    steps: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "sampler": self.sampler,
            "t_steps": self.t_steps,
            "guided_steps_planned": self.guided_steps_planned,
            "guided_steps_executed": self.guided_steps_executed,
            "steps": self.steps,
        }


def _ddim_update(z_t: np.ndarray, eps: np.ndarray, abar_t: float, abar_prev: float) -> np.ndarray:
    z0_hat = (z_t - math.sqrt(1.0 - abar_t) * eps) / math.sqrt(abar_t)
    return math.sqrt(abar_prev) * z0_hat + math.sqrt(1.0 - abar_prev) * eps


def denoise_sample(
    scene_tokens: Sequence[Sequence[GroundingToken | np.ndarray]] | None,
    text_tokens: np.ndarray,
    schedule: DenoiseSchedule,
    model: Denoiser,
    latent_shape: tuple[int, ...] | None = None,
    z_init: np.ndarray | None = None,
    sampler: str = "ddim",
    seed: int = 0,
) -> tuple[np.ndarray, SampleTrace]:
    """Run the full reverse process and return the final latent plus an
    instrumented trace of which steps used layout guidance."""
    if sampler not in ("ddim", "plms"):
        raise ValueError(f"unknown sampler {sampler!r}")
    if z_init is not None:
        z = np.array(z_init, dtype=float)
    else:
        if latent_shape is None:
            if hasattr(model, "lconfig"):
                latent_shape = model.lconfig.shape
            else:
                raise ValueError("latent_shape required when model carries no shape")
        z = np.random.default_rng(seed).standard_normal(latent_shape)

    n = schedule.t_steps
    trace = SampleTrace(sampler=sampler, t_steps=n, guided_steps_planned=schedule.guided_steps)
    eps_history: list[np.ndarray] = []

    for i, t in enumerate(range(n, 0, -1)):
        guided = i < schedule.guided_steps
        eps = model.predict(z, t, scene_tokens if guided else None, text_tokens, guided=guided)
        if guided:
            trace.guided_steps_executed += 1
        trace.steps.append({"t": t, "guided": guided})

        if sampler == "plms":
            eps_history.append(eps)
            if len(eps_history) == 1:
                eps_used = eps
            elif len(eps_history) == 2:
                eps_used = (3 * eps_history[-1] - eps_history[-2]) / 2
            elif len(eps_history) == 3:
                eps_used = (23 * eps_history[-1] - 16 * eps_history[-2] + 5 * eps_history[-3]) / 12
            else:
                eps_used = (
                    55 * eps_history[-1]
                    - 59 * eps_history[-2]
                    + 37 * eps_history[-3]
                    - 9 * eps_history[-4]
                ) / 24
                eps_history.pop(0)
        else:
            eps_used = eps

        z = _ddim_update(z, eps_used, schedule.alpha_bar_at(t), schedule.alpha_bar_at(t - 1))

    return z, trace


class OracleDenoiser:
    """Analytic noise predictor for a known target latent; DDIM sampling with
    it must reconstruct the target exactly."""

    def __init__(self, target: np.ndarray, schedule: DenoiseSchedule):
        self.target = target
        self.schedule = schedule

    def predict(self, z, t, grounding, text_tokens, guided):
        abar = self.schedule.alpha_bar_at(t)
        return (z - math.sqrt(abar) * self.target) / math.sqrt(1.0 - abar)
