"""Toy latent extractor and EXLT file format tests."""

import struct

import numpy as np
import pytest

from conftest import make_noise, make_tone
from voxdiff.latents import (
    LATENT_MAGIC,
    FileLatentProvider,
    LatentRepresentation,
    ToyLatentProvider,
    extract_toy,
    pool,
    read_latent,
    toy_event_posterior,
    write_latent,
)
from voxdiff.spectro import Waveform


class TestLatentRepresentation:
    def test_pooled_must_be_frame_mean(self, rng):
        frames = rng.standard_normal((5, 8)).astype(np.float32)
        with pytest.raises(ValueError):
            LatentRepresentation(frames=frames, pooled=np.zeros(8, np.float32), frame_hop=0.01)

    def test_rejects_bad_shapes(self, rng):
        frames = rng.standard_normal((5, 8)).astype(np.float32)
        with pytest.raises(ValueError):
            LatentRepresentation(frames=frames[0], pooled=frames.mean(0), frame_hop=0.01)
        with pytest.raises(ValueError):
            LatentRepresentation(frames=frames, pooled=frames.mean(0)[:4], frame_hop=0.01)
        with pytest.raises(ValueError):
            LatentRepresentation(frames=frames, pooled=frames.mean(0), frame_hop=0.0)

    def test_rejects_nonfinite(self, rng):
        frames = rng.standard_normal((5, 8)).astype(np.float32)
        frames[0, 0] = np.inf
        with pytest.raises(ValueError):
            LatentRepresentation(frames=frames, pooled=frames.mean(0), frame_hop=0.01)

    def test_properties(self, rng):
        frames = rng.standard_normal((7, 16)).astype(np.float32)
        l = LatentRepresentation(frames=frames, pooled=frames.mean(0), frame_hop=0.01)
        assert (l.n_frames, l.width) == (7, 16)


class TestExtractToy:
    def test_deterministic(self):
        w = make_noise(0.5, seed=50)
        a = extract_toy(w, h=64, seed=3)
        b = extract_toy(w, h=64, seed=3)
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_frame_count_and_hop(self):
        w = make_noise(1.0, seed=51)  # 16000 samples, 400-sample frames, 160 hop
        l = extract_toy(w, h=32)
        assert l.frame_hop == pytest.approx(0.010)
        assert l.n_frames == 1 + (16000 - 400) // 160

    def test_values_tanh_bounded(self):
        l = extract_toy(make_noise(0.3, seed=52), h=32)
        assert np.all(np.abs(l.frames) <= 1.0)

    def test_seed_changes_projection(self):
        w = make_noise(0.5, seed=53)
        a = extract_toy(w, h=64, seed=0)
        b = extract_toy(w, h=64, seed=1)
        assert not np.array_equal(a.frames, b.frames)

    def test_disjoint_spectra_give_distinct_latents(self):
        # the projection must keep spectrally distinct inputs separable
        lo = extract_toy(make_tone(220.0, 0.5), h=128)
        hi = extract_toy(make_tone(3500.0, 0.5), h=128)
        a, b = lo.pooled, hi.pooled
        cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cos < 0.99

    def test_rejects_too_short_input(self):
        w = Waveform(samples=np.ones(100), sample_rate=16000)
        with pytest.raises(ValueError):
            extract_toy(w)

    def test_pool_is_frame_mean(self, rng):
        frames = rng.standard_normal((6, 4))
        np.testing.assert_allclose(pool(frames), frames.mean(axis=0))
        with pytest.raises(ValueError):
            pool(np.zeros((0, 4)))


class TestEventPosterior:
    def test_probabilities_in_unit_interval(self):
        p = toy_event_posterior(make_noise(0.5, seed=54), n_classes=8)
        assert p.n_classes == 8
        assert p.probs.min() >= 0.0 and p.probs.max() <= 1.0


class TestLatentFile:
    def test_roundtrip(self, tmp_path):
        l = extract_toy(make_noise(0.5, seed=55), h=32)
        path = tmp_path / "x.exlt"
        write_latent(l, path)
        back = read_latent(path)
        np.testing.assert_array_equal(back.frames, l.frames)
        np.testing.assert_array_equal(back.pooled, l.pooled)
        assert back.frame_hop == pytest.approx(l.frame_hop, rel=1e-6)

    def test_header_layout(self, tmp_path):
        l = extract_toy(make_noise(0.5, seed=56), h=16)
        path = tmp_path / "x.exlt"
        write_latent(l, path)
        raw = path.read_bytes()
        assert raw[:4] == LATENT_MAGIC
        version, h, t = struct.unpack("<III", raw[4:16])
        assert (version, h, t) == (1, 16, l.n_frames)
        assert len(raw) == 16 + 4 + 4 * t * h + 4 * h

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.exlt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            read_latent(path)

    def test_bad_version_rejected(self, tmp_path):
        l = extract_toy(make_noise(0.5, seed=57), h=8)
        path = tmp_path / "v.exlt"
        write_latent(l, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            read_latent(path)

    def test_truncation_names_missing_section(self, tmp_path):
        l = extract_toy(make_noise(0.5, seed=58), h=8)
        path = tmp_path / "t.exlt"
        write_latent(l, path)
        raw = path.read_bytes()
        truncated = tmp_path / "trunc.exlt"
        truncated.write_bytes(raw[: len(raw) - 1])
        with pytest.raises(ValueError, match="pooled"):
            read_latent(truncated)
        truncated.write_bytes(raw[: len(raw) - 4 * 8 - 1])
        with pytest.raises(ValueError, match="frame matrix"):
            read_latent(truncated)
        truncated.write_bytes(raw[:10])
        with pytest.raises(ValueError, match="header"):
            read_latent(truncated)

    def test_corrupt_pooled_rejected(self, tmp_path):
        l = extract_toy(make_noise(0.5, seed=59), h=8)
        path = tmp_path / "c.exlt"
        write_latent(l, path)
        raw = bytearray(path.read_bytes())
        bad = np.full(8, 7.0, dtype="<f4").tobytes()
        raw[-len(bad):] = bad
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="pooled"):
            read_latent(path)


class TestProviders:
    def test_toy_provider_matches_function(self):
        w = make_noise(0.5, seed=60)
        p = ToyLatentProvider(h=32, seed=4)
        np.testing.assert_array_equal(p(w).frames, extract_toy(w, h=32, seed=4).frames)
        assert p.describe() == {"kind": "toy", "h": 32, "seed": 4}

    def test_file_provider_serves_fixed_latent(self, tmp_path):
        l = extract_toy(make_noise(0.5, seed=61), h=16)
        path = tmp_path / "f.exlt"
        write_latent(l, path)
        p = FileLatentProvider(str(path))
        for w in (make_noise(0.3, seed=62), make_noise(0.4, seed=63)):
            np.testing.assert_array_equal(p(w).frames, l.frames)
        assert p.describe()["kind"] == "file"
