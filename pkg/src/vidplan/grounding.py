"""Layout-grounded attention at desk scale.

Entity grounding tokens fuse projected image/text embeddings with a Fourier
encoding of the entity's box through a 2-layer MLP. Tokens condition the
visual stream via gated self-attention (residual, scaled by tanh of a
learnable gate initialized to zero, so the untrained layer is an exact
identity on visual tokens), followed by text cross-attention.

Everything runs in float64 numpy with hand-written backward passes; the
test suite checks every gradient against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingProvider, EmbeddingVector
from .layout import DEFAULT_FOURIER_BANDS, dense_scene_layout, fourier_features
from .plan import BoundingBox, PlanError, VideoPlan


class ShapeError(PlanError):
    code = "SHAPE_ERROR"


GROUNDING_VARIANTS = ("image_text", "image_only", "text_only")


@dataclass
class GroundingConfig:
    """Desk-scale dimensions: small enough for seconds-fast tests while
    exercising every code path."""

    d_embed: int = 32  # provider embedding width
    d_proj: int = 16  # projected image/text slot width
    d_model: int = 32  # token width shared by visual/grounding/text tokens
    mlp_hidden: int = 64
    fourier_bands: int = DEFAULT_FOURIER_BANDS

    @property
    def fourier_dim(self) -> int:
        return 8 * self.fourier_bands

    @property
    def mlp_in(self) -> int:
        return 2 * self.d_proj + self.fourier_dim


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal((fan_in, fan_out)) * std


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation; smooth and cheap, derivative below must match
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    c = math.sqrt(2.0 / math.pi)
    u = c * (x + 0.044715 * x**3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * c * (1.0 + 3 * 0.044715 * x**2)


# --- grounding-token MLP ----------------------------------------------------


@dataclass
class GroundingMlpParams:
    p_img: np.ndarray  # (d_embed, d_proj)
    p_text: np.ndarray  # (d_embed, d_proj)
    w1: np.ndarray  # (mlp_in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, d_model)
    b2: np.ndarray  # (d_model,)

    @classmethod
    def init(cls, config: GroundingConfig, rng: np.random.Generator) -> "GroundingMlpParams":
        return cls(
            p_img=_xavier(rng, config.d_embed, config.d_proj),
            p_text=_xavier(rng, config.d_embed, config.d_proj),
            w1=_xavier(rng, config.mlp_in, config.mlp_hidden),
            b1=np.zeros(config.mlp_hidden),
            w2=_xavier(rng, config.mlp_hidden, config.d_model),
            b2=np.zeros(config.d_model),
        )

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("p_img", self.p_img),
            ("p_text", self.p_text),
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
        ]

    def zeros_like(self) -> "GroundingMlpParams":
        return GroundingMlpParams(*(np.zeros_like(a) for _, a in self.param_items()))


@dataclass
class TokenSource:
    projected_img: np.ndarray
    projected_text: np.ndarray
    fourier: np.ndarray


@dataclass
class GroundingToken:
    vector: np.ndarray  # (d_model,)
    entity_id: str
    source: TokenSource


def _mlp_forward(img: np.ndarray, txt: np.ndarray, fourier: np.ndarray, p: GroundingMlpParams):
    proj_img = img @ p.p_img
    proj_txt = txt @ p.p_text
    x = np.concatenate([proj_img, proj_txt, fourier])
    h1 = x @ p.w1 + p.b1
    a1 = gelu(h1)
    out = a1 @ p.w2 + p.b2
    cache = (img, txt, x, h1, a1)
    return out, proj_img, proj_txt, cache


def _mlp_backward(d_out: np.ndarray, cache, p: GroundingMlpParams, grads: GroundingMlpParams):
    img, txt, x, h1, a1 = cache
    n_proj = p.p_img.shape[1]
    grads.w2 += np.outer(a1, d_out)
    grads.b2 += d_out
    d_a1 = p.w2 @ d_out
    d_h1 = d_a1 * gelu_grad(h1)
    grads.w1 += np.outer(x, d_h1)
    grads.b1 += d_h1
    d_x = p.w1 @ d_h1
    grads.p_img += np.outer(img, d_x[:n_proj])
    grads.p_text += np.outer(txt, d_x[n_proj : 2 * n_proj])


def grounding_token(
    img_emb: EmbeddingVector,
    txt_emb: EmbeddingVector,
    box: BoundingBox,
    params: GroundingMlpParams,
    entity_id: str = "",
    bands: int | None = None,
    variant: str = "image_text",
) -> GroundingToken:
    """Fuse entity embeddings and box geometry into one grounding token.

    ``variant`` selects the embedding ablation: "image_only"/"text_only"
    zero out the other slot before projection.
    """
    if img_emb.kind != "image" or txt_emb.kind != "text":
        raise ShapeError(f"embedding kinds ({img_emb.kind}, {txt_emb.kind}) do not match slots")
    if img_emb.dim != params.p_img.shape[0] or txt_emb.dim != params.p_text.shape[0]:
        raise ShapeError(
            f"embedding dims ({img_emb.dim}, {txt_emb.dim}) do not match projections "
            f"({params.p_img.shape[0]}, {params.p_text.shape[0]})"
        )
    if variant not in GROUNDING_VARIANTS:
        raise ValueError(f"unknown grounding variant {variant!r}")

    if bands is None:
        bands = (params.w1.shape[0] - 2 * params.p_img.shape[1]) // 8
    fourier = np.asarray(fourier_features(box, bands))
    if 2 * params.p_img.shape[1] + fourier.shape[0] != params.w1.shape[0]:
        raise ShapeError(f"fourier dim {fourier.shape[0]} incompatible with MLP input {params.w1.shape[0]}")

    img = img_emb.values if variant != "text_only" else np.zeros_like(img_emb.values)
    txt = txt_emb.values if variant != "image_only" else np.zeros_like(txt_emb.values)
    out, proj_img, proj_txt, _ = _mlp_forward(img, txt, fourier, params)
    return GroundingToken(
        vector=out,
        entity_id=entity_id,
        source=TokenSource(projected_img=proj_img, projected_text=proj_txt, fourier=fourier),
    )


# --- attention layers -------------------------------------------------------


@dataclass
class AttentionParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(*(_xavier(rng, d_model, d_model) for _ in range(4)))

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)]

    def zeros_like(self) -> "AttentionParams":
        return AttentionParams(*(np.zeros_like(a) for _, a in self.param_items()))


@dataclass
class GatedAttentionParams:
    attn: AttentionParams
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(1))  # scalar gate, starts closed

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "GatedAttentionParams":
        return cls(attn=AttentionParams.init(d_model, rng), gamma=np.zeros(1))

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [(f"attn.{n}", a) for n, a in self.attn.param_items()] + [("gamma", self.gamma)]

    def zeros_like(self) -> "GatedAttentionParams":
        return GatedAttentionParams(attn=self.attn.zeros_like(), gamma=np.zeros(1))


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _attention_forward(xq: np.ndarray, xkv: np.ndarray, p: AttentionParams):
    d = xq.shape[1]
    if xkv.shape[1] != d or p.wq.shape != (d, d):
        raise ShapeError(f"attention dims mismatch: xq {xq.shape}, xkv {xkv.shape}, wq {p.wq.shape}")
    q = xq @ p.wq
    k = xkv @ p.wk
    v = xkv @ p.wv
    scores = q @ k.T / math.sqrt(d)
    a = _softmax_rows(scores)
    h = a @ v
    out = h @ p.wo
    return out, (xq, xkv, q, k, v, a, h)


def _attention_backward(d_out: np.ndarray, cache, p: AttentionParams, grads: AttentionParams):
    xq, xkv, q, k, v, a, h = cache
    d = xq.shape[1]
    grads.wo += h.T @ d_out
    d_h = d_out @ p.wo.T
    d_a = d_h @ v.T
    d_v = a.T @ d_h
    d_s = a * (d_a - (d_a * a).sum(axis=1, keepdims=True))
    d_q = d_s @ k / math.sqrt(d)
    d_k = d_s.T @ q / math.sqrt(d)
    grads.wq += xq.T @ d_q
    grads.wk += xkv.T @ d_k
    grads.wv += xkv.T @ d_v
    d_xq = d_q @ p.wq.T
    d_xkv = d_k @ p.wk.T + d_v @ p.wv.T
    return d_xq, d_xkv


def _stack_grounding(grounding: Sequence[GroundingToken | np.ndarray], d_model: int) -> np.ndarray:
    rows = []
    for g in grounding:
        vec = g.vector if isinstance(g, GroundingToken) else np.asarray(g)
        if vec.shape != (d_model,):
            raise ShapeError(f"grounding token shape {vec.shape} != ({d_model},)")
        rows.append(vec)
    if not rows:
        return np.zeros((0, d_model))
    return np.stack(rows)


def _gated_forward(visual: np.ndarray, g: np.ndarray, p: GatedAttentionParams):
    n_v = visual.shape[0]
    seq = np.vstack([visual, g]) if g.shape[0] else visual
    att_out, att_cache = _attention_forward(seq, seq, p.attn)
    o_v = att_out[:n_v]
    t = math.tanh(float(p.gamma[0]))
    # visual.copy() (not visual + 0) keeps the closed gate a bitwise identity
    out = visual + t * o_v if t != 0.0 else visual.copy()
    return out, (n_v, o_v, att_cache, t)


def _gated_backward(d_out: np.ndarray, cache, p: GatedAttentionParams, grads: GatedAttentionParams):
    n_v, o_v, att_cache, t = cache
    d_visual = d_out.copy()
    grads.gamma[0] += (1.0 - t * t) * float(np.sum(d_out * o_v))
    d_att_out = np.zeros((att_cache[0].shape[0], d_out.shape[1]))
    d_att_out[:n_v] = t * d_out
    d_xq, d_xkv = _attention_backward(d_att_out, att_cache, p.attn, grads.attn)
    d_seq = d_xq + d_xkv
    d_visual += d_seq[:n_v]
    d_grounding = d_seq[n_v:]
    return d_visual, d_grounding


def gated_self_attention(
    visual: np.ndarray,
    grounding: Sequence[GroundingToken | np.ndarray],
    params: GatedAttentionParams,
) -> np.ndarray:
    """Residual self-attention over [visual || grounding], scaled by tanh of
    the gate; only the visual positions are returned."""
    visual = np.asarray(visual, dtype=float)
    if visual.ndim != 2:
        raise ShapeError(f"visual tokens must be 2D, got {visual.shape}")
    g = _stack_grounding(grounding, visual.shape[1])
    out, _ = _gated_forward(visual, g, params)
    return out


# --- guided 2D attention ----------------------------------------------------


@dataclass
class GuidedAttentionParams:
    self_attn: AttentionParams
    gated: GatedAttentionParams
    cross: AttentionParams

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "GuidedAttentionParams":
        return cls(
            self_attn=AttentionParams.init(d_model, rng),
            gated=GatedAttentionParams.init(d_model, rng),
            cross=AttentionParams.init(d_model, rng),
        )

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return (
            [(f"self_attn.{n}", a) for n, a in self.self_attn.param_items()]
            + [(f"gated.{n}", a) for n, a in self.gated.param_items()]
            + [(f"cross.{n}", a) for n, a in self.cross.param_items()]
        )

    def zeros_like(self) -> "GuidedAttentionParams":
        return GuidedAttentionParams(
            self_attn=self.self_attn.zeros_like(),
            gated=self.gated.zeros_like(),
            cross=self.cross.zeros_like(),
        )


def _guided_forward(
    x: np.ndarray,
    g: np.ndarray,
    text: np.ndarray,
    p: GuidedAttentionParams,
    use_gated: bool = True,
):
    sa_out, sa_cache = _attention_forward(x, x, p.self_attn)
    x1 = x + sa_out
    if use_gated:
        x2, gated_cache = _gated_forward(x1, g, p.gated)
    else:
        x2, gated_cache = x1, None
    if text.shape[0]:
        ca_out, ca_cache = _attention_forward(x2, text, p.cross)
        x3 = x2 + ca_out
    else:
        x3, ca_cache = x2, None
    return x3, (sa_cache, gated_cache, ca_cache)


def _guided_backward(d_out: np.ndarray, cache, p: GuidedAttentionParams, grads: GuidedAttentionParams):
    sa_cache, gated_cache, ca_cache = cache
    if ca_cache is not None:
        d_xq, _d_text = _attention_backward(d_out, ca_cache, p.cross, grads.cross)
        d_x2 = d_out + d_xq
    else:
        d_x2 = d_out
    if gated_cache is not None:
        d_x1, d_grounding = _gated_backward(d_x2, gated_cache, p.gated, grads.gated)
    else:
        d_x1, d_grounding = d_x2, np.zeros((0, d_out.shape[1]))
    d_xq, d_xkv = _attention_backward(d_x1, sa_cache, p.self_attn, grads.self_attn)
    d_x = d_x1 + d_xq + d_xkv
    return d_x, d_grounding


def guided_2d_attention(
    latent_frame: np.ndarray,
    grounding: Sequence[GroundingToken | np.ndarray],
    text_tokens: np.ndarray | Sequence[np.ndarray],
    params: GuidedAttentionParams,
) -> np.ndarray:
    """Self-attention, gated grounding attention, then text cross-attention,
    each residual, over one frame's token grid.

    Accepts tokens either flat ``(n, d)`` or as a grid ``(h, w, d)``; the
    output matches the input shape.
    """
    x = np.asarray(latent_frame, dtype=float)
    grid_shape = None
    if x.ndim == 3:
        grid_shape = x.shape
        x = x.reshape(-1, x.shape[2])
    elif x.ndim != 2:
        raise ShapeError(f"latent frame must be (n, d) or (h, w, d), got {x.shape}")

    d_model = x.shape[1]
    g = _stack_grounding(list(grounding), d_model)
    text = np.asarray(text_tokens, dtype=float) if len(text_tokens) else np.zeros((0, d_model))
    if text.ndim == 1:
        text = text.reshape(1, -1)
    if text.shape[0] and text.shape[1] != d_model:
        raise ShapeError(f"text token dim {text.shape[1]} != {d_model}")

    out, _ = _guided_forward(x, g, text, params)
    return out.reshape(grid_shape) if grid_shape else out


# --- per-scene token assembly ------------------------------------------------


class SharedEmbeddingCache:
    """Computes each consistency-group root embedding pair once and reuses it
    for every scene in the group."""

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider
        self._pairs: dict[str, tuple[EmbeddingVector, EmbeddingVector]] = {}

    def pair_for(self, name: str, description: str = "") -> tuple[EmbeddingVector, EmbeddingVector]:
        if name not in self._pairs:
            text = f"{name}, {description}" if description else name
            txt = self.provider.embed_text(text)
            img = self.provider.prior_text_to_image(txt)
            self._pairs[name] = (img, txt)
        return self._pairs[name]


def tokens_for_scene(
    plan: VideoPlan,
    scene_index: int,
    provider: EmbeddingProvider,
    params: GroundingMlpParams,
    cache: SharedEmbeddingCache | None = None,
    target_frames: int | None = None,
    variant: str = "image_text",
    bands: int | None = None,
) -> list[list[GroundingToken]]:
    """Grounding tokens per dense frame for one scene.

    Embeddings are keyed by the group root (the entity's exact name and the
    description from its first appearance), so entities in one consistency
    group carry identical embedding vectors in every member scene; per-frame
    tokens then differ only through the box term.
    """
    if cache is None:
        cache = SharedEmbeddingCache(provider)
    root_desc: dict[str, str] = {}
    for scene in plan.scenes:
        for entity in scene.entities:
            root_desc.setdefault(entity.name, entity.description)

    scene = plan.scene(scene_index)
    dense = dense_scene_layout(scene, target_frames)
    out: list[list[GroundingToken]] = []
    for frame in dense.frames:
        tokens = []
        for fb in frame:
            img, txt = cache.pair_for(fb.name, root_desc.get(fb.name, ""))
            tokens.append(
                grounding_token(
                    img, txt, fb.box, params, entity_id=fb.entity_id, bands=bands, variant=variant
                )
            )
        out.append(tokens)
    return out
