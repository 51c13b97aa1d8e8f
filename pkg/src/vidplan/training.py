"""Parameter-efficient toy training on synthetic box-annotated latents.

Only the grounding MLP and the gated-attention layer receive gradients;
every other parameter of the toy denoiser is frozen and must come out of
training bitwise unchanged. The objective is the plain noise-prediction MSE
over single-frame (image-level) latents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import DenoiseSchedule, ToyDenoiser, forward_diffuse
from .embeddings import EmbeddingProvider, EmbeddingVector
from .grounding import _mlp_backward, _mlp_forward
from .layout import fourier_features
from .plan import BoundingBox, PlanError, quantize_box


class TrainingDiverged(PlanError):
    code = "TRAINING_DIVERGED"

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainingSample:
    latent: np.ndarray  # (C, H, W) clean latent
    boxes: list[BoundingBox]
    entity_ids: list[str]
    img_embs: list[EmbeddingVector]
    txt_embs: list[EmbeddingVector]


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def initial_loss(self) -> float:
        return self.loss_trace[0]

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


def make_rectangle_dataset(
    provider: EmbeddingProvider,
    lconfig,
    n_samples: int,
    entity_names: tuple[str, ...] = ("red block", "blue ball"),
    seed: int = 0,
) -> list[TrainingSample]:
    """Colored-rectangle latents with known boxes: each entity paints its
    fixed per-channel color into its box region."""
    rng = np.random.default_rng(seed)
    colors = {name: rng.standard_normal(lconfig.channels) for name in entity_names}
    pairs = {}
    for name in entity_names:
        txt = provider.embed_text(name)
        pairs[name] = (provider.prior_text_to_image(txt), txt)

    samples = []
    for _ in range(n_samples):
        latent = np.zeros(lconfig.frame_shape)
        boxes = []
        for name in entity_names:
            x0, y0 = rng.uniform(0.0, 0.5, size=2)
            w, h = rng.uniform(0.2, 0.5, size=2)
            box = quantize_box(BoundingBox(x0, y0, min(1.0, x0 + w), min(1.0, y0 + h)))
            boxes.append(box)
            c0 = int(box.x0 * lconfig.width)
            c1 = max(c0 + 1, int(round(box.x1 * lconfig.width)))
            r0 = int(box.y0 * lconfig.height)
            r1 = max(r0 + 1, int(round(box.y1 * lconfig.height)))
            latent[:, r0:r1, c0:c1] += colors[name][:, None, None]
        samples.append(
            TrainingSample(
                latent=latent,
                boxes=boxes,
                entity_ids=list(entity_names),
                img_embs=[pairs[n][0] for n in entity_names],
                txt_embs=[pairs[n][1] for n in entity_names],
            )
        )
    return samples


def _grounding_matrix_cached(sample: TrainingSample, model: ToyDenoiser):
    vectors, caches = [], []
    for img, txt, box in zip(sample.img_embs, sample.txt_embs, sample.boxes):
        fourier = np.asarray(fourier_features(box, model.gconfig.fourier_bands))
        out, _, _, cache = _mlp_forward(img.values, txt.values, fourier, model.mlp)
        vectors.append(out)
        caches.append(cache)
    return np.stack(vectors), caches


def _loss_and_grads(model: ToyDenoiser, sample: TrainingSample, t: int, noise: np.ndarray,
                    schedule: DenoiseSchedule, mlp_grads, guided_grads) -> float:
    z_t = forward_diffuse(sample.latent, t, schedule, noise)
    g, token_caches = _grounding_matrix_cached(sample, model)
    text = np.zeros((0, model.gconfig.d_model))  # image-level data carries no caption tokens
    eps_hat, cache = model.frame_forward(z_t, t, g, text, guided=True)
    diff = eps_hat - noise
    loss = float(np.mean(diff**2))
    d_eps = 2.0 * diff / diff.size
    d_grounding = model.frame_backward(d_eps, cache, guided_grads)
    for i, token_cache in enumerate(token_caches):
        _mlp_backward(d_grounding[i], token_cache, model.mlp, mlp_grads)
    return loss


def evaluate_loss(
    model: ToyDenoiser,
    dataset: list[TrainingSample],
    schedule: DenoiseSchedule,
    n_draws: int = 64,
    seed: int = 1234,
) -> float:
    """Mean objective over a fixed probe set of (sample, t, noise) draws."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_draws):
        sample = dataset[int(rng.integers(len(dataset)))]
        t = int(rng.integers(1, schedule.t_steps + 1))
        noise = rng.standard_normal(sample.latent.shape)
        z_t = forward_diffuse(sample.latent, t, schedule, noise)
        g, _ = _grounding_matrix_cached(sample, model)
        eps_hat, _ = model.frame_forward(
            z_t, t, g, np.zeros((0, model.gconfig.d_model)), guided=True
        )
        total += float(np.mean((eps_hat - noise) ** 2))
    return total / n_draws


def train_toy(
    model: ToyDenoiser,
    dataset: list[TrainingSample],
    steps: int,
    schedule: DenoiseSchedule | None = None,
    lr: float = 0.05,
    batch_size: int = 4,
    seed: int = 0,
) -> TrainResult:
    """SGD on the noise-prediction MSE; updates only the trainable subset."""
    if schedule is None:
        schedule = DenoiseSchedule.linear(t_steps=1000, alpha=0.0)
    rng = np.random.default_rng(seed)
    result = TrainResult()

    trainable = model.trainable_items()
    for step in range(steps):
        mlp_grads = model.mlp.zeros_like()
        guided_grads = model.guided.zeros_like()
        batch_loss = 0.0
        for _ in range(batch_size):
            sample = dataset[int(rng.integers(len(dataset)))]
            t = int(rng.integers(1, schedule.t_steps + 1))
            noise = rng.standard_normal(sample.latent.shape)
            batch_loss += _loss_and_grads(
                model, sample, t, noise, schedule, mlp_grads, guided_grads
            )
        batch_loss /= batch_size
        if not np.isfinite(batch_loss):
            raise TrainingDiverged(step, batch_loss)
        result.loss_trace.append(batch_loss)
        result.steps = step + 1

        grad_items = dict(
            [(f"mlp.{n}", a) for n, a in mlp_grads.param_items()]
            + [(f"guided.gated.{n}", a) for n, a in guided_grads.gated.param_items()]
        )
        for name, array in trainable:
            array -= (lr / batch_size) * grad_items[name]

    return result
