"""Tests for the U-Net score model and the latent fusion variants."""

import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from voxdiff.scorenet import (
    FUSION_VARIANTS,
    CrossAttentionFusion,
    GaussianFourierBasis,
    LatentTokenizer,
    ResBlock,
    ScoreNet,
    ScoreNetSpec,
    channels_to_complex,
    complex_to_channels,
    positional_encode,
    sinusoidal_positions,
    time_embed,
    zero_fusion_output_projections,
)
from voxdiff.sde import OuveSchedule, kernel_std

from gradcheck import fd_gradient, max_grad_indices

SMALL = dict(
    n_levels=2,
    base_channels=8,
    channel_multipliers=(1, 2),
    attn_dim=16,
    time_embed_dim=16,
    latent_width=12,
    init_seed=3,
)


def small_spec(**kw) -> ScoreNetSpec:
    return ScoreNetSpec(**{**SMALL, **kw})


def rand_inputs(spec, b=2, f=8, t=8, n_tok=6, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(b, 2, f, t, generator=gen, dtype=dtype)
    y = torch.randn(b, 2, f, t, generator=gen, dtype=dtype)
    lat = torch.randn(b, n_tok, spec.latent_width, generator=gen, dtype=dtype)
    tv = torch.rand(b, generator=gen, dtype=dtype) * 0.9 + 0.05
    return x, y, tv, lat


class TestSpec:
    def test_defaults(self):
        spec = ScoreNetSpec()
        assert spec.n_levels == 3
        assert spec.channels == (16, 32, 32)
        assert spec.downsample_factor == 4
        assert spec.fusion == "bottleneck_cross_attn"
        assert spec.scale_by_sigma

    def test_dict_roundtrip(self):
        spec = small_spec(fusion="transformer_block", latent_tokens="pooled")
        again = ScoreNetSpec.from_dict(spec.to_dict())
        assert again == spec
        assert isinstance(spec.to_dict()["channel_multipliers"], list)

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_levels": 1, "channel_multipliers": (1,)},
            {"channel_multipliers": (1, 2, 4)},
            {"fusion": "film"},
            {"attn_dim": 0},
            {"time_embed_dim": 15},
            {"latent_tokens": "mean"},
            {"latent_width": 0},
            {"gamma": 0.0},
            {"sigma_min": 0.0},
            {"sigma_min": 0.6, "sigma_max": 0.5},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_spec(**kw)

    def test_scale_by_sigma_needs_distinct_sigmas(self):
        small_spec(sigma_min=0.3, sigma_max=0.3, scale_by_sigma=False)
        with pytest.raises(ValueError, match="scale_by_sigma"):
            small_spec(sigma_min=0.3, sigma_max=0.3, scale_by_sigma=True)


class TestComplexChannels:
    def test_roundtrip(self):
        gen = torch.Generator().manual_seed(0)
        z = torch.randn(3, 4, 5, generator=gen, dtype=torch.float64) + 1j * torch.randn(
            3, 4, 5, generator=gen, dtype=torch.float64
        )
        ch = complex_to_channels(z)
        assert ch.shape == (3, 2, 4, 5)
        assert torch.equal(channels_to_complex(ch), z)

    def test_promotes_2d(self):
        z = torch.ones(4, 5, dtype=torch.complex64)
        assert complex_to_channels(z).shape == (1, 2, 4, 5)

    def test_rejects_real_input(self):
        with pytest.raises(ValueError, match="complex"):
            complex_to_channels(torch.ones(2, 3, 4))

    def test_rejects_bad_channel_count(self):
        with pytest.raises(ValueError, match="expected"):
            channels_to_complex(torch.ones(1, 3, 4, 5))


class TestTimeEmbedding:
    def test_fourier_shape_and_determinism(self):
        basis = GaussianFourierBasis(32, seed=7)
        t = torch.tensor([0.1, 0.5, 0.9])
        out = basis(t)
        assert out.shape == (3, 32)
        assert torch.equal(out, GaussianFourierBasis(32, seed=7)(t))
        assert not torch.equal(out, GaussianFourierBasis(32, seed=8)(t))

    def test_scalar_promoted(self):
        basis = GaussianFourierBasis(16)
        assert basis(torch.tensor(0.3)).shape == (1, 16)

    def test_sin_cos_structure(self):
        basis = GaussianFourierBasis(16)
        out = basis(torch.tensor([0.0]))
        assert torch.allclose(out[0, :8], torch.zeros(8))
        assert torch.allclose(out[0, 8:], torch.ones(8))

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            GaussianFourierBasis(15)

    def test_time_embed_wrapper(self):
        basis = GaussianFourierBasis(16, seed=1)
        t = torch.tensor([0.25, 0.75])
        assert torch.equal(time_embed(t, basis), basis(t))


class TestPositions:
    def test_table_shape_and_range(self):
        table = sinusoidal_positions(10, 8)
        assert table.shape == (10, 8)
        assert float(table.abs().max()) <= 1.0

    def test_first_row(self):
        table = sinusoidal_positions(4, 6)
        assert torch.allclose(table[0, 0::2], torch.zeros(3))
        assert torch.allclose(table[0, 1::2], torch.ones(3))

    def test_rows_distinct(self):
        table = sinusoidal_positions(16, 8)
        assert not torch.allclose(table[3], table[4])

    def test_encode_adds_table(self):
        gen = torch.Generator().manual_seed(0)
        tokens = torch.randn(2, 5, 8, generator=gen)
        out = positional_encode(tokens)
        table = sinusoidal_positions(5, 8).expand(2, 5, 8)
        assert torch.allclose(out - tokens, table, atol=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            sinusoidal_positions(0, 8)


class TestResBlock:
    def setup_method(self):
        torch.manual_seed(0)

    def test_same_channels_shape(self):
        blk = ResBlock(8, 8, emb_dim=16)
        out = blk(torch.randn(2, 8, 8, 6), torch.randn(2, 16))
        assert out.shape == (2, 8, 8, 6)

    def test_channel_change_uses_skip(self):
        blk = ResBlock(8, 12, emb_dim=16)
        assert blk.skip is not None
        assert blk(torch.randn(2, 8, 8, 6), torch.randn(2, 16)).shape == (2, 12, 8, 6)

    def test_downsample_halves(self):
        blk = ResBlock(8, 8, emb_dim=16, resample="down")
        assert blk(torch.randn(1, 8, 8, 6), torch.randn(1, 16)).shape == (1, 8, 4, 3)

    def test_upsample_doubles(self):
        blk = ResBlock(8, 8, emb_dim=16, resample="up")
        assert blk(torch.randn(1, 8, 4, 3), torch.randn(1, 16)).shape == (1, 8, 8, 6)

    def test_embedding_conditions_output(self):
        blk = ResBlock(8, 8, emb_dim=16)
        x = torch.randn(1, 8, 8, 6)
        out1 = blk(x, torch.zeros(1, 16))
        out2 = blk(x, torch.ones(1, 16))
        assert not torch.allclose(out1, out2)

    def test_bad_resample(self):
        with pytest.raises(ValueError):
            ResBlock(8, 8, emb_dim=16, resample="avg")


class TestLatentTokenizer:
    def test_frames_mode(self):
        tok = LatentTokenizer(12, 16, "frames")
        out = tok(torch.randn(2, 7, 12))
        assert out.shape == (2, 7, 16)

    def test_pooled_mode_single_token(self):
        tok = LatentTokenizer(12, 16, "pooled")
        out = tok(torch.randn(2, 7, 12))
        assert out.shape == (2, 1, 16)

    def test_promotes_2d(self):
        tok = LatentTokenizer(12, 16, "frames")
        assert tok(torch.randn(7, 12)).shape == (1, 7, 16)

    def test_width_mismatch(self):
        tok = LatentTokenizer(12, 16, "frames")
        with pytest.raises(ValueError, match="latent width"):
            tok(torch.randn(2, 7, 13))


class TestCrossAttentionFusion:
    def setup_method(self):
        torch.manual_seed(0)

    def test_preserves_shape(self):
        blk = CrossAttentionFusion(8, 16)
        out = blk(torch.randn(2, 8, 4, 6), torch.randn(2, 5, 16))
        assert out.shape == (2, 8, 4, 6)

    @pytest.mark.parametrize("feed_forward", [False, True])
    def test_zeroed_projections_are_identity(self, feed_forward):
        blk = CrossAttentionFusion(8, 16, feed_forward=feed_forward)
        x = torch.randn(2, 8, 4, 6)
        tokens = torch.randn(2, 5, 16)
        assert not torch.equal(blk(x, tokens), x)
        with torch.no_grad():
            for layer in blk.output_projections():
                layer.weight.zero_()
                layer.bias.zero_()
        assert torch.equal(blk(x, tokens), x)

    def test_feed_forward_adds_layers(self):
        assert len(CrossAttentionFusion(8, 16, feed_forward=True).output_projections()) == 2
        assert len(CrossAttentionFusion(8, 16).output_projections()) == 1


class TestScoreNetForward:
    @pytest.mark.parametrize("fusion", FUSION_VARIANTS + ("none",))
    def test_output_shape(self, fusion):
        spec = small_spec(fusion=fusion)
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec)
        out = model(x, y, t, None if fusion == "none" else lat)
        assert out.shape == (2, 2, 8, 8)
        assert bool(torch.isfinite(out).all())

    @pytest.mark.parametrize("fusion", FUSION_VARIANTS)
    def test_missing_latent_rejected(self, fusion):
        spec = small_spec(fusion=fusion)
        model = ScoreNet(spec)
        x, y, t, _ = rand_inputs(spec)
        with pytest.raises(ValueError, match="latent"):
            model(x, y, t, None)

    def test_latent_free_ignores_latent(self):
        spec = small_spec(fusion="none")
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec)
        assert torch.equal(model(x, y, t, lat), model(x, y, t, None))

    @pytest.mark.parametrize("fusion", FUSION_VARIANTS)
    def test_distinct_latents_give_distinct_outputs(self, fusion):
        spec = small_spec(fusion=fusion)
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec)
        other = lat + 0.5
        with torch.no_grad():
            out1 = model(x, y, t, lat)
            out2 = model(x, y, t, other)
        assert float((out1 - out2).abs().max()) > 1e-6

    def test_2d_latent_promoted(self):
        spec = small_spec(fusion="bottleneck_cross_attn")
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec, b=1)
        out2d = model(x, y, t[:1], lat[0])
        out3d = model(x, y, t[:1], lat)
        assert torch.equal(out2d, out3d)

    def test_scalar_t_matches_vector_t(self):
        spec = small_spec()
        model = ScoreNet(spec)
        x, y, _, lat = rand_inputs(spec)
        t = 0.37
        out_scalar = model(x, y, t, lat)
        out_vector = model(x, y, torch.full((2,), t), lat)
        # float32 accumulation order differs between the two paths
        assert torch.allclose(out_scalar, out_vector, atol=5e-5)

    def test_fresh_init_norm_bounded(self):
        spec = small_spec()
        model = ScoreNet(spec)
        x, y, _, lat = rand_inputs(spec, b=1)
        with torch.no_grad():
            out = model(x, y, 0.5, lat)
        assert float(out.norm()) <= 10.0 * float(x.norm())

    def test_deterministic_construction(self):
        spec = small_spec()
        x, y, t, lat = rand_inputs(spec)
        out1 = ScoreNet(spec)(x, y, t, lat)
        out2 = ScoreNet(spec)(x, y, t, lat)
        assert torch.equal(out1, out2)

    def test_init_seed_changes_weights(self):
        x, y, t, lat = rand_inputs(small_spec())
        out1 = ScoreNet(small_spec(init_seed=1))(x, y, t, lat)
        out2 = ScoreNet(small_spec(init_seed=2))(x, y, t, lat)
        assert not torch.equal(out1, out2)


class TestScaleBySigma:
    def test_output_divided_by_kernel_std(self):
        spec = small_spec(scale_by_sigma=True)
        raw_spec = small_spec(scale_by_sigma=False)
        model = ScoreNet(spec)
        raw_model = ScoreNet(raw_spec)
        x, y, t, lat = rand_inputs(spec)
        sched = OuveSchedule(gamma=spec.gamma, sigma_min=spec.sigma_min, sigma_max=spec.sigma_max)
        sigma = torch.tensor(
            [kernel_std(float(ti), sched) for ti in t], dtype=torch.float32
        )[:, None, None, None]
        out = model(x, y, t, lat)
        raw = raw_model(x, y, t, lat)
        assert torch.allclose(out, raw / sigma, rtol=1e-5, atol=1e-7)

    def test_scaling_grows_toward_t_eps(self):
        spec = small_spec()
        model = ScoreNet(spec)
        x, y, _, lat = rand_inputs(spec, b=1)
        with torch.no_grad():
            near = model(x, y, 0.03, lat)
            far = model(x, y, 1.0, lat)
        assert float(near.norm()) > float(far.norm())


class TestZeroFusionIdentity:
    @pytest.mark.parametrize(
        "fusion", ["bottleneck_cross_attn", "triple_cross_attn", "transformer_block"]
    )
    def test_zeroed_variant_matches_latent_free(self, fusion):
        spec = small_spec(fusion=fusion)
        model = ScoreNet(spec)
        zero_fusion_output_projections(model)

        baseline = ScoreNet(small_spec(fusion="none"))
        shared = {k: v for k, v in model.state_dict().items() if k in baseline.state_dict()}
        baseline.load_state_dict(shared)

        x, y, t, lat = rand_inputs(spec)
        assert torch.equal(model(x, y, t, lat), baseline(x, y, t, None))


class TestPermutationInvariance:
    def test_invariant_without_positions(self):
        # attention sums over tokens, so the check runs at float64 where
        # reduction-order noise sits far below the 1e-6 bound
        spec = small_spec(fusion="bottleneck_cross_attn", use_positions=False)
        model = ScoreNet(spec).to(torch.float64)
        x, y, t, lat = rand_inputs(spec, n_tok=7, dtype=torch.float64)
        perm = torch.randperm(7, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            out1 = model(x, y, t, lat)
            out2 = model(x, y, t, lat[:, perm])
        assert float((out1 - out2).abs().max()) < 1e-6

    def test_sensitive_with_positions(self):
        spec = small_spec(fusion="bottleneck_cross_attn", use_positions=True)
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec, n_tok=7)
        perm = torch.tensor([3, 1, 4, 0, 6, 2, 5])
        with torch.no_grad():
            out1 = model(x, y, t, lat)
            out2 = model(x, y, t, lat[:, perm])
        assert float((out1 - out2).abs().max()) > 1e-6


class TestGradients:
    @pytest.mark.parametrize("fusion", FUSION_VARIANTS)
    def test_full_network_gradients(self, fusion):
        spec = small_spec(fusion=fusion)
        model = ScoreNet(spec).to(torch.float64)
        x, y, t, lat = rand_inputs(spec, b=1, f=4, t=4, n_tok=3, dtype=torch.float64)
        gen = torch.Generator().manual_seed(11)
        w = torch.randn(1, 2, 4, 4, generator=gen, dtype=torch.float64)

        def loss():
            return (model(x, y, t[:1], lat) * w).sum()

        params = list(model.parameters())
        indices = max_grad_indices(loss, params)
        worst, n_checked = fd_gradient(loss, params, indices)
        assert n_checked >= 10
        assert worst <= 1e-4, f"{fusion}: worst fd/autograd mismatch {worst:.3e}"

    def test_latent_projection_receives_gradient(self):
        spec = small_spec(fusion="bottleneck_cross_attn")
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec)
        model(x, y, t, lat).sum().backward()
        grad = model.tokenizer.proj.weight.grad
        assert grad is not None and float(grad.abs().max()) > 0

    def test_latent_planes_receive_gradient(self):
        spec = small_spec(fusion="input_concat")
        model = ScoreNet(spec)
        x, y, t, lat = rand_inputs(spec)
        model(x, y, t, lat).sum().backward()
        grad = model.latent_planes.weight.grad
        assert grad is not None and float(grad.abs().max()) > 0


class TestInputValidation:
    def setup_method(self):
        self.spec = small_spec()
        self.model = ScoreNet(self.spec)
        self.x, self.y, self.t, self.lat = rand_inputs(self.spec)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            self.model(self.x, self.y[:, :, :, :4], self.t, self.lat)

    def test_wrong_channel_count(self):
        bad = torch.randn(2, 3, 8, 8)
        with pytest.raises(ValueError, match="B, 2, F, T"):
            self.model(bad, bad, self.t, self.lat)

    def test_grid_not_divisible(self):
        bad = torch.randn(2, 2, 7, 8)
        with pytest.raises(ValueError, match="divisible"):
            self.model(bad, bad, self.t, self.lat)

    def test_latent_width_mismatch(self):
        with pytest.raises(ValueError, match="latent width"):
            self.model(self.x, self.y, self.t, torch.randn(2, 6, 13))
