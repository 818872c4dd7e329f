"""Shared fixtures: seeded RNGs and small synthetic signals."""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=1234))


def make_tone(freq_hz: float, seconds: float, sample_rate: int = 16000, level: float = 0.3):
    from voxdiff.spectro import Waveform

    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    return Waveform(samples=level * np.sin(2 * np.pi * freq_hz * t), sample_rate=sample_rate)


def make_noise(seconds: float, seed: int, sample_rate: int = 16000, level: float = 0.1):
    from voxdiff.spectro import Waveform

    gen = np.random.Generator(np.random.Philox(key=seed))
    n = int(round(seconds * sample_rate))
    return Waveform(samples=level * gen.standard_normal(n), sample_rate=sample_rate)
