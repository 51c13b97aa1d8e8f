"""Versioned parameter checkpoints: a JSON header naming each tensor's shape
and offset, followed by raw little-endian float64 payloads."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT = "vidplan-params/1"
_SEPARATOR = b"\n\x00"


def save_params(path: str | Path, params: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    tensors = []
    payload = bytearray()
    for name, array in params.items():
        arr = np.ascontiguousarray(array, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = {"format": FORMAT, "meta": meta or {}, "tensors": tensors}
    raw = json.dumps(header, ensure_ascii=False).encode("utf-8") + _SEPARATOR + bytes(payload)
    Path(path).write_bytes(raw)


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    raw = Path(path).read_bytes()
    split = raw.find(_SEPARATOR)
    if split < 0:
        raise ValueError(f"{path}: not a parameter checkpoint (missing header separator)")
    header = json.loads(raw[:split].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    payload = raw[split + len(_SEPARATOR) :]
    params: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape)
        params[spec["name"]] = arr.astype(float)  # writable copy, native order
    return params, header.get("meta", {})


def save_denoiser(path: str | Path, model) -> None:
    meta = {
        "kind": "toy-denoiser",
        "grounding": {
            "d_embed": model.gconfig.d_embed,
            "d_proj": model.gconfig.d_proj,
            "d_model": model.gconfig.d_model,
            "mlp_hidden": model.gconfig.mlp_hidden,
            "fourier_bands": model.gconfig.fourier_bands,
        },
        "latent": {
            "frames": model.lconfig.frames,
            "channels": model.lconfig.channels,
            "height": model.lconfig.height,
            "width": model.lconfig.width,
        },
    }
    save_params(path, dict(model.param_items()), meta)


def load_denoiser(path: str | Path):
    from .diffusion import LatentConfig, ToyDenoiser
    from .grounding import GroundingConfig

    params, meta = load_params(path)
    if meta.get("kind") != "toy-denoiser":
        raise ValueError(f"{path}: checkpoint is not a toy-denoiser (kind={meta.get('kind')!r})")
    model = ToyDenoiser.init(
        GroundingConfig(**meta["grounding"]), LatentConfig(**meta["latent"]), seed=0
    )
    for name, array in model.param_items():
        if name not in params:
            raise ValueError(f"{path}: checkpoint missing tensor {name!r}")
        if params[name].shape != array.shape:
            raise ValueError(
                f"{path}: tensor {name!r} shape {params[name].shape} != expected {array.shape}"
            )
        array[...] = params[name]
    return model
