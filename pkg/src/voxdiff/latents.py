"""Conditioning latents: toy extractor, provider interface, and the EXLT file format.

The diffusion model is conditioned on a frame-wise feature matrix extracted
from the noisy input audio.  In the intended deployment those features come
from a large pretrained audio tagger; here a deterministic stand-in computes
log-Mel energy frames and pushes them through a fixed random projection with
a tanh squash.  Externally computed features (e.g. genuine tagger
activations) can be injected through the latent file format instead.

A latent provider is any callable mapping a Waveform to a
LatentRepresentation; ToyLatentProvider and FileLatentProvider cover the two
built-in routes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .spectro import Waveform, mel_filterbank

__all__ = [
    "LatentRepresentation",
    "EventPosterior",
    "extract_toy",
    "toy_event_posterior",
    "pool",
    "write_latent",
    "read_latent",
    "ToyLatentProvider",
    "FileLatentProvider",
]

LATENT_MAGIC = b"EXLT"
LATENT_VERSION = 1

_FRAME_SECONDS = 0.025
_HOP_SECONDS = 0.010
_N_MELS = 64
_LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class LatentRepresentation:
    """Frame-wise conditioning features plus their temporal mean."""

    frames: np.ndarray  # (T_frames, H)
    pooled: np.ndarray  # (H,)
    frame_hop: float  # seconds between frames

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        pooled = np.asarray(self.pooled, dtype=np.float32)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "pooled", pooled)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must be a (T, H) matrix with T, H >= 1, got {frames.shape}")
        if pooled.shape != (frames.shape[1],):
            raise ValueError(f"pooled shape {pooled.shape} does not match H = {frames.shape[1]}")
        if not (np.all(np.isfinite(frames)) and np.all(np.isfinite(pooled))):
            raise ValueError("latent contains non-finite values")
        if not np.allclose(pooled, frames.mean(axis=0), atol=1e-6):
            raise ValueError("pooled vector is not the frame mean")
        if self.frame_hop <= 0:
            raise ValueError(f"frame_hop must be positive, got {self.frame_hop}")

    @property
    def width(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class EventPosterior:
    """Frame-wise event probabilities, diagnostic output of the toy extractor."""

    probs: np.ndarray  # (T_frames, K)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float32)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError(f"probs must be a (T, K) matrix, got shape {probs.shape}")
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ValueError("event probabilities must lie in [0, 1]")

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


def _logmel_frames(w: Waveform) -> tuple[np.ndarray, float]:
    """Log-Mel energy per 25 ms frame at 10 ms hop; independent of the diffusion STFT."""
    frame_len = int(round(_FRAME_SECONDS * w.sample_rate))
    hop = int(round(_HOP_SECONDS * w.sample_rate))
    x = w.samples
    if x.shape[0] < frame_len:
        raise ValueError(
            f"waveform too short for latent extraction: {x.shape[0]} samples < one {frame_len}-sample frame"
        )
    n_frames = 1 + (x.shape[0] - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    window = np.hanning(frame_len)
    spec = np.fft.rfft(x[idx] * window, axis=1)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(_N_MELS, frame_len // 2 + 1, w.sample_rate, frame_len)
    mel = power @ fb.T
    return np.log10(mel + _LOG_FLOOR), hop / w.sample_rate


def _projection(h: int, n_in: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed))
    return (rng.standard_normal((n_in, h)) / np.sqrt(n_in)).astype(np.float64)


def extract_toy(w: Waveform, h: int = 2048, seed: int = 0) -> LatentRepresentation:
    """Deterministic latent features for a (noisy) waveform.

    Log-Mel frames are mapped to width `h` through a fixed Gaussian
    projection drawn from `seed` and squashed with tanh, so two calls with
    identical input always produce bitwise-identical features.
    """
    if h < 1:
        raise ValueError(f"latent width must be >= 1, got {h}")
    logmel, frame_hop = _logmel_frames(w)
    proj = _projection(h, logmel.shape[1], seed)
    frames = np.tanh(logmel @ proj).astype(np.float32)
    return LatentRepresentation(frames=frames, pooled=pool(frames), frame_hop=frame_hop)


def toy_event_posterior(w: Waveform, n_classes: int = 8, seed: int = 0) -> EventPosterior:
    """Sigmoid read-out over the log-Mel frames; diagnostic only."""
    logmel, _ = _logmel_frames(w)
    proj = _projection(n_classes, logmel.shape[1], seed + 1)
    return EventPosterior(probs=(1.0 / (1.0 + np.exp(-(logmel @ proj)))).astype(np.float32))


def pool(frames: np.ndarray) -> np.ndarray:
    """Mean over the frame axis: (T, H) -> (H,)."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError(f"pool expects a non-empty (T, H) matrix, got shape {frames.shape}")
    return frames.mean(axis=0)


def write_latent(l: LatentRepresentation, path: str | os.PathLike) -> None:
    """Serialize a latent to the EXLT binary format."""
    t, h = l.frames.shape
    with open(path, "wb") as f:
        f.write(LATENT_MAGIC)
        f.write(struct.pack("<III", LATENT_VERSION, h, t))
        f.write(struct.pack("<f", l.frame_hop))
        f.write(l.frames.astype("<f4").tobytes(order="C"))
        f.write(l.pooled.astype("<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated latent file: missing {what}")
    return buf


def read_latent(path: str | os.PathLike) -> LatentRepresentation:
    """Read an EXLT file, validating structure and the pooled-mean invariant."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != LATENT_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {LATENT_MAGIC!r}")
        version, h, t = struct.unpack("<III", _read_exact(f, 12, "header"))
        if version != LATENT_VERSION:
            raise ValueError(f"unsupported latent file version {version}")
        if h < 1 or t < 1:
            raise ValueError(f"invalid latent dimensions T={t}, H={h}")
        (frame_hop,) = struct.unpack("<f", _read_exact(f, 4, "frame hop"))
        frames = np.frombuffer(_read_exact(f, 4 * t * h, "frame matrix"), dtype="<f4").reshape(t, h)
        pooled = np.frombuffer(_read_exact(f, 4 * h, "pooled vector"), dtype="<f4")
    if not np.allclose(pooled, frames.mean(axis=0), atol=1e-4):
        raise ValueError("corrupt latent file: stored pooled vector is not the frame mean")
    return LatentRepresentation(frames=frames.copy(), pooled=pooled.copy(), frame_hop=frame_hop)


@dataclass(frozen=True)
class ToyLatentProvider:
    """Latent provider computing toy features on the fly."""

    h: int = 2048
    seed: int = 0

    def __call__(self, w: Waveform) -> LatentRepresentation:
        return extract_toy(w, h=self.h, seed=self.seed)

    def describe(self) -> dict:
        return {"kind": "toy", "h": self.h, "seed": self.seed}


@dataclass(frozen=True)
class FileLatentProvider:
    """Latent provider serving one fixed precomputed latent (e.g. real tagger output)."""

    path: str
    _cached: list = field(default_factory=list, repr=False, compare=False)

    def __call__(self, w: Waveform) -> LatentRepresentation:
        if not self._cached:
            self._cached.append(read_latent(self.path))
        return self._cached[0]

    def describe(self) -> dict:
        return {"kind": "file", "path": str(self.path)}
