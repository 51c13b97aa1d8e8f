from __future__ import annotations

import numpy as np
import pytest

from vidplan.checkpoint import load_denoiser, load_params, save_denoiser, save_params
from vidplan.diffusion import LatentConfig, ToyDenoiser
from vidplan.grounding import GroundingConfig


def test_params_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    params = {
        "weights": rng.standard_normal((3, 5)),
        "bias": rng.standard_normal(7),
        "gate": np.array([0.25]),
    }
    path = tmp_path / "params.bin"
    save_params(path, params, meta={"note": "test"})
    loaded, meta = load_params(path)
    assert meta == {"note": "test"}
    assert set(loaded) == set(params)
    for name in params:
        assert loaded[name].shape == params[name].shape
        assert loaded[name].tobytes() == params[name].tobytes()
    loaded["bias"][0] = 99.0  # loaded arrays must be writable copies


def test_little_endian_payload(tmp_path):
    path = tmp_path / "p.bin"
    save_params(path, {"x": np.array([1.0])})
    raw = path.read_bytes()
    assert raw.endswith(np.array([1.0]).astype("<f8").tobytes())


def test_rejects_foreign_files(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_params(path)


def test_denoiser_round_trip(tmp_path):
    gconfig = GroundingConfig(d_embed=8, d_proj=4, d_model=8, mlp_hidden=6, fourier_bands=2)
    lconfig = LatentConfig(frames=2, channels=3, height=4, width=4)
    model = ToyDenoiser.init(gconfig, lconfig, seed=42)
    model.guided.gated.gamma[0] = 0.5
    path = tmp_path / "model.bin"
    save_denoiser(path, model)
    loaded = load_denoiser(path)
    assert loaded.gconfig == gconfig
    assert loaded.lconfig == lconfig
    for (name, a), (_, b) in zip(model.param_items(), loaded.param_items()):
        assert a.tobytes() == b.tobytes(), name
