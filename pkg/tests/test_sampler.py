"""Tests for Predictor-Corrector sampling and the enhancement pipeline."""

import numpy as np
import pytest
import torch

from voxdiff.checkpoint import Checkpoint
from voxdiff.latents import LatentRepresentation, ToyLatentProvider
from voxdiff.sampler import SamplerConfig, _chunk_starts, _crossfade_window, enhance, init_xT, model_score_fn, pc_sample
from voxdiff.scorenet import ScoreNet, ScoreNetSpec
from voxdiff.sde import OuveSchedule, complex_randn, kernel_score, kernel_std
from voxdiff.spectro import Waveform

TINY = ScoreNetSpec(
    n_levels=2,
    base_channels=8,
    channel_multipliers=(1, 2),
    attn_dim=16,
    time_embed_dim=16,
    latent_width=32,
    init_seed=2,
)

RUN_CONFIG = {
    "schedule": {"gamma": 1.5, "sigma_min": 0.05, "sigma_max": 0.5, "t_max": 1.0, "t_eps": 0.03},
    "stft": {"fft_size": 126, "hop_length": 63, "window_length": 126},
    "compression": {"exponent": 0.5, "scale": 0.15},
    "chunk_frames": 64,
    "latent": {"width": 32, "provider": {"kind": "toy", "h": 32, "seed": 3}},
}


@pytest.fixture(scope="module")
def tiny_ckpt():
    return Checkpoint.from_model(ScoreNet(TINY), config=RUN_CONFIG)


@pytest.fixture(scope="module")
def provider():
    return ToyLatentProvider(h=32, seed=3)


class TestSamplerConfig:
    @pytest.mark.parametrize("kw", [{"n_steps": 0}, {"corrector_steps": -1}, {"snr_r": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SamplerConfig(**kw)

    def test_defaults(self):
        cfg = SamplerConfig()
        assert cfg.n_steps == 40
        assert cfg.corrector_steps == 1
        assert cfg.snr_r == 0.5
        assert cfg.use_ema


class TestInitXT:
    def test_terminal_statistics(self):
        sched = OuveSchedule()
        rng = np.random.Generator(np.random.Philox(key=0))
        y = np.zeros((64, 64), dtype=np.complex128)
        x = init_xT(y, sched, rng)
        var = float(np.mean(np.abs(x) ** 2))
        assert var == pytest.approx(kernel_std(1.0, sched) ** 2, rel=0.05)

    def test_centered_on_condition(self):
        sched = OuveSchedule()
        rng = np.random.Generator(np.random.Philox(key=1))
        y = (3.0 + 4.0j) * np.ones((80, 80))
        x = init_xT(y, sched, rng)
        assert np.abs(x.mean() - (3.0 + 4.0j)) < 0.05

    def test_deterministic(self):
        sched = OuveSchedule()
        y = np.ones((8, 8), dtype=np.complex128)
        a = init_xT(y, sched, np.random.Generator(np.random.Philox(key=5)))
        b = init_xT(y, sched, np.random.Generator(np.random.Philox(key=5)))
        assert np.array_equal(a, b)


def analytic_pair(seed=0, shape=(64, 64), noise=0.5):
    rng = np.random.Generator(np.random.Philox(key=seed))
    x0 = complex_randn(shape, rng)
    y = x0 + noise * complex_randn(shape, rng)
    return x0, y


def oracle(x0, sched):
    return lambda x, y, t, l: kernel_score(x, x0, y, t, sched)


class TestPcSample:
    def test_analytic_score_recovery(self):
        sched = OuveSchedule()
        x0, y = analytic_pair()
        cfg = SamplerConfig(n_steps=40, corrector_steps=1, seed=3)
        out = pc_sample(oracle(x0, sched), y, None, sched, cfg)
        rel = np.linalg.norm(out - x0) / np.linalg.norm(x0)
        assert rel <= 0.10

    def test_error_nonincreasing_in_steps(self):
        sched = OuveSchedule()
        x0, y = analytic_pair(seed=4)
        errs = []
        for n in (10, 20, 40, 90):
            cfg = SamplerConfig(n_steps=n, corrector_steps=1, seed=3)
            out = pc_sample(oracle(x0, sched), y, None, sched, cfg)
            errs.append(np.linalg.norm(out - x0) / np.linalg.norm(x0))
        for a, b in zip(errs, errs[1:]):
            assert b <= a + 0.02

    def test_deterministic_given_seed(self):
        sched = OuveSchedule()
        x0, y = analytic_pair(seed=7)
        cfg = SamplerConfig(n_steps=10, seed=9)
        a = pc_sample(oracle(x0, sched), y, None, sched, cfg)
        b = pc_sample(oracle(x0, sched), y, None, sched, cfg)
        assert np.array_equal(a, b)

    def test_seed_changes_output(self):
        sched = OuveSchedule()
        x0, y = analytic_pair(seed=7)
        a = pc_sample(oracle(x0, sched), y, None, sched, SamplerConfig(n_steps=10, seed=1))
        b = pc_sample(oracle(x0, sched), y, None, sched, SamplerConfig(n_steps=10, seed=2))
        assert not np.array_equal(a, b)

    def test_zero_score_corrector_skipped(self):
        sched = OuveSchedule()
        y = np.ones((8, 8), dtype=np.complex128)
        zero = lambda x, yc, t, l: np.zeros_like(x)
        out = pc_sample(zero, y, None, sched, SamplerConfig(n_steps=5, corrector_steps=2, seed=0))
        assert np.all(np.isfinite(out))

    def test_nonfinite_state_reported_with_step(self):
        sched = OuveSchedule()
        y = np.ones((4, 4), dtype=np.complex128)
        blowup = lambda x, yc, t, l: np.full_like(x, np.inf)
        with np.errstate(invalid="ignore"):
            with pytest.raises(RuntimeError, match="step 0"):
                pc_sample(blowup, y, None, sched, SamplerConfig(n_steps=3, seed=0))

    def test_corrector_steps_zero(self):
        sched = OuveSchedule()
        x0, y = analytic_pair(seed=2)
        cfg = SamplerConfig(n_steps=40, corrector_steps=0, seed=3)
        out = pc_sample(oracle(x0, sched), y, None, sched, cfg)
        rel = np.linalg.norm(out - x0) / np.linalg.norm(x0)
        assert rel <= 0.20


class TestModelScoreFn:
    def test_shapes_and_dtype(self):
        score = model_score_fn(ScoreNet(TINY))
        rng = np.random.Generator(np.random.Philox(key=0))
        x = complex_randn((8, 8), rng)
        y = complex_randn((8, 8), rng)
        lat = rng.standard_normal((5, 32)).astype(np.float32)
        out = score(x, y, 0.5, lat)
        assert out.shape == (8, 8)
        assert out.dtype == np.complex128
        assert np.all(np.isfinite(out))

    def test_accepts_latent_representation(self):
        score = model_score_fn(ScoreNet(TINY))
        rng = np.random.Generator(np.random.Philox(key=1))
        x = complex_randn((8, 8), rng)
        y = complex_randn((8, 8), rng)
        frames = rng.standard_normal((5, 32)).astype(np.float32)
        lat = LatentRepresentation(frames=frames, pooled=frames.mean(axis=0), frame_hop=0.01)
        assert np.array_equal(score(x, y, 0.5, lat), score(x, y, 0.5, frames))

    def test_latent_free_model(self):
        spec = ScoreNetSpec(
            n_levels=2,
            base_channels=8,
            channel_multipliers=(1, 2),
            attn_dim=16,
            time_embed_dim=16,
            latent_width=32,
            fusion="none",
        )
        score = model_score_fn(ScoreNet(spec))
        rng = np.random.Generator(np.random.Philox(key=2))
        x = complex_randn((8, 8), rng)
        out = score(x, x, 0.3, None)
        assert out.shape == (8, 8)


class TestChunking:
    def test_single_chunk_when_short(self):
        assert _chunk_starts(40, 64) == [0]
        assert _chunk_starts(64, 64) == [0]

    def test_half_overlap_and_tail_coverage(self):
        starts = _chunk_starts(200, 64)
        assert starts[0] == 0
        assert starts[-1] == 200 - 64
        assert all(b - a <= 32 for a, b in zip(starts, starts[1:]))

    def test_crossfade_partitions_unity(self):
        fade = _crossfade_window(64)
        assert fade.shape == (64,)
        assert np.all(fade > 0)
        assert np.allclose(fade[:32] + fade[32:], 1.0, atol=1e-12)


class TestEnhance:
    def test_output_matches_input_geometry(self, tiny_ckpt, provider):
        rng = np.random.Generator(np.random.Philox(key=3))
        w = Waveform(samples=0.1 * rng.standard_normal(16000), sample_rate=16000)
        out = enhance(w, tiny_ckpt, latent_provider=provider, cfg=SamplerConfig(n_steps=2, corrector_steps=0))
        assert isinstance(out, Waveform)
        assert out.sample_rate == 16000
        assert out.samples.shape == w.samples.shape
        assert np.all(np.isfinite(out.samples))

    def test_short_clip_padded_path(self, tiny_ckpt, provider):
        rng = np.random.Generator(np.random.Philox(key=4))
        w = Waveform(samples=0.1 * rng.standard_normal(3200), sample_rate=16000)
        out = enhance(w, tiny_ckpt, latent_provider=provider, cfg=SamplerConfig(n_steps=2, corrector_steps=0))
        assert out.samples.shape == (3200,)

    def test_deterministic_given_seed(self, tiny_ckpt, provider):
        rng = np.random.Generator(np.random.Philox(key=5))
        w = Waveform(samples=0.1 * rng.standard_normal(8000), sample_rate=16000)
        cfg = SamplerConfig(n_steps=2, corrector_steps=0, seed=21)
        a = enhance(w, tiny_ckpt, latent_provider=provider, cfg=cfg)
        b = enhance(w, tiny_ckpt, latent_provider=provider, cfg=cfg)
        assert np.array_equal(a.samples, b.samples)

    def test_seed_changes_output(self, tiny_ckpt, provider):
        rng = np.random.Generator(np.random.Philox(key=6))
        w = Waveform(samples=0.1 * rng.standard_normal(8000), sample_rate=16000)
        a = enhance(w, tiny_ckpt, latent_provider=provider, cfg=SamplerConfig(n_steps=2, corrector_steps=0, seed=1))
        b = enhance(w, tiny_ckpt, latent_provider=provider, cfg=SamplerConfig(n_steps=2, corrector_steps=0, seed=2))
        assert not np.array_equal(a.samples, b.samples)

    def test_provider_resolved_from_config(self, tiny_ckpt):
        rng = np.random.Generator(np.random.Philox(key=7))
        w = Waveform(samples=0.1 * rng.standard_normal(6000), sample_rate=16000)
        out = enhance(w, tiny_ckpt, cfg=SamplerConfig(n_steps=2, corrector_steps=0))
        ref = enhance(
            w,
            tiny_ckpt,
            latent_provider=ToyLatentProvider(h=32, seed=3),
            cfg=SamplerConfig(n_steps=2, corrector_steps=0),
        )
        assert np.array_equal(out.samples, ref.samples)

    def test_latent_free_checkpoint_needs_no_provider(self):
        spec = ScoreNetSpec(
            n_levels=2,
            base_channels=8,
            channel_multipliers=(1, 2),
            attn_dim=16,
            time_embed_dim=16,
            latent_width=32,
            fusion="none",
        )
        ckpt = Checkpoint.from_model(ScoreNet(spec), config=RUN_CONFIG)
        rng = np.random.Generator(np.random.Philox(key=8))
        w = Waveform(samples=0.1 * rng.standard_normal(6000), sample_rate=16000)
        out = enhance(w, ckpt, cfg=SamplerConfig(n_steps=2, corrector_steps=0))
        assert out.samples.shape == (6000,)
