from __future__ import annotations

import math

import numpy as np
import pytest

from vidplan.diffusion import (
    DenoiseSchedule,
    LatentConfig,
    OracleDenoiser,
    StepError,
    ToyDenoiser,
    denoise_sample,
    forward_diffuse,
    guided_step_count,
)
from vidplan.embeddings import HashEmbeddingProvider
from vidplan.grounding import GroundingConfig, GroundingMlpParams, SharedEmbeddingCache, tokens_for_scene

GCONFIG = GroundingConfig(d_embed=8, d_proj=4, d_model=8, mlp_hidden=6, fourier_bands=2)
LCONFIG = LatentConfig(frames=2, channels=3, height=4, width=4)


class TestSchedule:
    def test_alpha_bar_strictly_decreasing(self):
        s = DenoiseSchedule.linear(t_steps=50, alpha=0.1)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all((s.betas > 0) & (s.betas < 1))

    @pytest.mark.parametrize("alpha,expected", [(0.1, 5), (0.2, 10), (0.3, 15)])
    def test_guided_step_mapping(self, alpha, expected):
        assert guided_step_count(alpha, 50) == expected
        assert DenoiseSchedule.linear(t_steps=50, alpha=alpha).guided_steps == expected

    def test_guided_step_zero(self):
        assert DenoiseSchedule.linear(t_steps=50, alpha=0.0).guided_steps == 0


class TestForwardDiffuse:
    def test_no_noise_limit(self):
        s = DenoiseSchedule.linear(t_steps=10, beta_start=1e-12, beta_end=1e-12)
        z0 = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
        noise = np.random.default_rng(1).standard_normal(z0.shape)
        zt = forward_diffuse(z0, 10, s, noise)
        assert np.allclose(zt, z0, atol=1e-5)

    def test_step_out_of_range(self):
        s = DenoiseSchedule.linear(t_steps=10)
        z0 = np.zeros((1, 1, 2, 2))
        with pytest.raises(StepError):
            forward_diffuse(z0, 0, s, z0)
        with pytest.raises(StepError):
            forward_diffuse(z0, 11, s, z0)

    def test_monte_carlo_variance(self):
        # z0 = 0: sample variance of z_t must match 1 - alpha_bar_t within 2%
        s = DenoiseSchedule.linear(t_steps=50)
        rng = np.random.default_rng(123)
        t = 30
        n_draws = 100_000
        draws = np.array(
            [forward_diffuse(np.zeros(1), t, s, rng.standard_normal(1))[0] for _ in range(n_draws)]
        )
        target = 1.0 - s.alpha_bar_at(t)
        assert abs(draws.var() - target) / target < 0.02

    def test_closed_form_equals_stepwise_composition(self):
        # mean coefficient: prod sqrt(1-beta_s) == sqrt(alpha_bar); variance:
        # composing the stepwise kernel telescopes to 1 - alpha_bar
        s = DenoiseSchedule.linear(t_steps=10)
        t = 3
        mean_coef = 1.0
        var = 0.0
        for step in range(1, t + 1):
            b = s.betas[step - 1]
            mean_coef *= math.sqrt(1.0 - b)
            var = (1.0 - b) * var + b
        assert abs(mean_coef - math.sqrt(s.alpha_bar_at(t))) < 1e-12
        assert abs(var - (1.0 - s.alpha_bar_at(t))) < 1e-12


def _scene_tokens(chef_plan):
    provider = HashEmbeddingProvider(dim=GCONFIG.d_embed, seed=0)
    params = GroundingMlpParams.init(GCONFIG, np.random.default_rng(0))
    cache = SharedEmbeddingCache(provider)
    tokens = tokens_for_scene(chef_plan, 1, provider, params, cache=cache,
                              target_frames=LCONFIG.frames, bands=GCONFIG.fourier_bands)
    return tokens


class TestDenoiseSample:
    def test_guided_step_counter(self, chef_plan):
        model = ToyDenoiser.init(GCONFIG, LCONFIG, seed=0)
        tokens = _scene_tokens(chef_plan)
        for alpha, expected in ((0.1, 5), (0.2, 10), (0.3, 15)):
            schedule = DenoiseSchedule.linear(t_steps=50, alpha=alpha)
            _, trace = denoise_sample(tokens, np.zeros((0, GCONFIG.d_model)), schedule, model, seed=1)
            assert trace.guided_steps_executed == expected
            assert sum(1 for s in trace.steps if s["guided"]) == expected
            # guidance applies to the first reverse steps only
            flags = [s["guided"] for s in trace.steps]
            assert flags == sorted(flags, reverse=True)

    def test_alpha_zero_identical_to_no_grounding(self, chef_plan):
        model = ToyDenoiser.init(GCONFIG, LCONFIG, seed=0)
        tokens = _scene_tokens(chef_plan)
        schedule = DenoiseSchedule.linear(t_steps=20, alpha=0.0)
        text = np.zeros((0, GCONFIG.d_model))
        with_tokens, _ = denoise_sample(tokens, text, schedule, model, seed=2)
        without, _ = denoise_sample(None, text, schedule, model, seed=2)
        assert np.array_equal(with_tokens, without)

    def test_ddim_reconstructs_oracle_target(self):
        schedule = DenoiseSchedule.linear(t_steps=50, alpha=0.0)
        rng = np.random.default_rng(7)
        target = rng.standard_normal(LCONFIG.shape)
        oracle = OracleDenoiser(target, schedule)
        z0, trace = denoise_sample(None, np.zeros((0, 8)), schedule, oracle,
                                   latent_shape=LCONFIG.shape, seed=3)
        assert np.max(np.abs(z0 - target)) < 1e-6
        assert trace.guided_steps_executed == 0

    def test_plms_reconstructs_oracle_target(self):
        schedule = DenoiseSchedule.linear(t_steps=50, alpha=0.0)
        target = np.random.default_rng(8).standard_normal(LCONFIG.shape)
        oracle = OracleDenoiser(target, schedule)
        z0, _ = denoise_sample(None, np.zeros((0, 8)), schedule, oracle,
                               latent_shape=LCONFIG.shape, sampler="plms", seed=4)
        assert np.max(np.abs(z0 - target)) < 1e-6

    def test_run_is_deterministic(self, chef_plan):
        model = ToyDenoiser.init(GCONFIG, LCONFIG, seed=0)
        tokens = _scene_tokens(chef_plan)
        schedule = DenoiseSchedule.linear(t_steps=10, alpha=0.2)
        text = np.zeros((0, GCONFIG.d_model))
        a, _ = denoise_sample(tokens, text, schedule, model, seed=5)
        b, _ = denoise_sample(tokens, text, schedule, model, seed=5)
        assert np.array_equal(a, b)

    def test_guided_run_differs_from_unguided(self, chef_plan):
        model = ToyDenoiser.init(GCONFIG, LCONFIG, seed=0)
        model.guided.gated.gamma[0] = 1.0  # open the gate so guidance matters
        tokens = _scene_tokens(chef_plan)
        text = np.zeros((0, GCONFIG.d_model))
        guided, _ = denoise_sample(tokens, text, DenoiseSchedule.linear(20, alpha=0.5), model, seed=6)
        unguided, _ = denoise_sample(tokens, text, DenoiseSchedule.linear(20, alpha=0.0), model, seed=6)
        assert not np.array_equal(guided, unguided)
