"""Waveform <-> complex spectrogram conversion, amplitude compression, mel rendering.

All diffusion-side processing happens on complex STFT grids of shape
(n_freq, n_frames) with n_freq = fft_size // 2 + 1.  Analysis uses a plain
framed rfft (no implicit padding); synthesis is least-squares overlap-add
with division by the window-square sum, so any NOLA-satisfying window/hop
pair round-trips on the covered region.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.io.wavfile
import scipy.signal

__all__ = [
    "Waveform",
    "StftParams",
    "Compression",
    "ComplexSpectrogram",
    "stft",
    "istft",
    "compress",
    "decompress",
    "spectral_energy",
    "mel_filterbank",
    "mel_power_db",
    "mel_render",
    "read_wav",
    "write_wav",
]

DB_FLOOR = -80.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal: float samples (nominally in [-1, 1]) plus sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def energy(self) -> float:
        return float(np.sum(self.samples**2))


@dataclass(frozen=True)
class StftParams:
    """Analysis/synthesis configuration.

    Defaults follow the common enhancement-model setup: 510-sample periodic
    Hann window, hop 128, at 16 kHz.  Any combination with
    0 < hop <= window <= fft_size that satisfies the NOLA condition is
    accepted.
    """

    window_length: int = 510
    hop_length: int = 128
    fft_size: int = 510
    window_kind: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_length <= self.window_length <= self.fft_size):
            raise ValueError(
                "need 0 < hop_length <= window_length <= fft_size, got "
                f"hop={self.hop_length} window={self.window_length} fft={self.fft_size}"
            )
        win = self.window()
        if not scipy.signal.check_NOLA(win, self.window_length, self.window_length - self.hop_length):
            raise ValueError("window/hop pair violates the NOLA condition; synthesis would be singular")

    def window(self) -> np.ndarray:
        if self.window_kind != "hann":
            return scipy.signal.get_window(self.window_kind, self.window_length, fftbins=True)
        # periodic Hann
        return scipy.signal.get_window("hann", self.window_length, fftbins=True)

    @property
    def n_freq(self) -> int:
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            raise ValueError(
                f"waveform too short for one frame: {n_samples} < window_length {self.window_length}"
            )
        return 1 + (n_samples - self.window_length) // self.hop_length


@dataclass(frozen=True)
class Compression:
    """Magnitude power-law state: c -> scale * |c|**exponent * exp(i arg c)."""

    exponent: float = 0.5
    scale: float = 0.15
    applied: bool = False

    def __post_init__(self):
        if self.exponent <= 0 or self.exponent > 1:
            raise ValueError(f"compression exponent must be in (0, 1], got {self.exponent}")
        if self.scale <= 0:
            raise ValueError(f"compression scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Complex time-frequency grid of shape (n_freq, n_frames)."""

    bins: np.ndarray
    params: StftParams
    compression: Compression = field(default_factory=Compression)
    sample_rate: int = 16000

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if not np.iscomplexobj(bins):
            bins = bins.astype(np.complex128)
        if bins.ndim != 2:
            raise ValueError("spectrogram bins must be 2-D (n_freq, n_frames)")
        if bins.shape[0] != self.params.n_freq:
            raise ValueError(
                f"bin count {bins.shape[0]} does not match fft_size//2+1 = {self.params.n_freq}"
            )
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectrogram contains non-finite bins")
        object.__setattr__(self, "bins", bins)

    @property
    def n_freq(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)


def stft(w: Waveform, p: StftParams | None = None) -> ComplexSpectrogram:
    """Windowed rfft frames of `w`, hop by hop, without padding.

    Trailing samples that do not fill a frame are dropped; callers that need
    an exact length round trip should pad to a frame boundary first.
    """
    p = p or StftParams()
    n = w.samples.size
    n_frames = p.n_frames(n)
    win = p.window()
    idx = np.arange(p.window_length)[None, :] + p.hop_length * np.arange(n_frames)[:, None]
    frames = w.samples[idx] * win[None, :]
    bins = np.fft.rfft(frames, n=p.fft_size, axis=1).T
    return ComplexSpectrogram(bins=bins, params=p, sample_rate=w.sample_rate)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Least-squares overlap-add inverse of `stft`.

    Returns window_length + (n_frames - 1) * hop_length samples.  Samples
    whose window-square sum is numerically zero (the first/last taper tails)
    come back as zero; everything else is recovered exactly.
    """
    if s.compression.applied:
        raise ValueError("spectrogram is amplitude-compressed; call decompress() before istft()")
    p = s.params
    win = p.window()
    frames = np.fft.irfft(s.bins.T, n=p.fft_size, axis=1)[:, : p.window_length]
    n_out = p.window_length + (s.n_frames - 1) * p.hop_length
    out = np.zeros(n_out)
    wss = np.zeros(n_out)
    for k in range(s.n_frames):
        sl = slice(k * p.hop_length, k * p.hop_length + p.window_length)
        out[sl] += frames[k] * win
        wss[sl] += win**2
    covered = wss > 1e-10
    out[covered] /= wss[covered]
    return Waveform(samples=out, sample_rate=s.sample_rate)


def compress(s: ComplexSpectrogram, exponent: float = 0.5, scale: float = 0.15) -> ComplexSpectrogram:
    """Apply the magnitude power law; phase is untouched."""
    if s.compression.applied:
        raise ValueError("spectrogram is already compressed")
    comp = Compression(exponent=exponent, scale=scale, applied=True)
    mag = np.abs(s.bins)
    phase = np.where(mag > 0, s.bins / np.where(mag > 0, mag, 1.0), 0.0)
    bins = scale * mag**exponent * phase
    return ComplexSpectrogram(bins=bins, params=s.params, compression=comp, sample_rate=s.sample_rate)


def decompress(s: ComplexSpectrogram) -> ComplexSpectrogram:
    """Invert `compress` exactly (up to float rounding)."""
    if not s.compression.applied:
        raise ValueError("spectrogram is not compressed")
    c = s.compression
    mag = np.abs(s.bins)
    phase = np.where(mag > 0, s.bins / np.where(mag > 0, mag, 1.0), 0.0)
    bins = (mag / c.scale) ** (1.0 / c.exponent) * phase
    return ComplexSpectrogram(
        bins=bins, params=s.params, compression=replace(c, applied=False), sample_rate=s.sample_rate
    )


def spectral_energy(s: ComplexSpectrogram) -> float:
    """Time-domain energy estimate from the STFT grid.

    Uses per-frame Parseval with rfft bin weights (2 for every bin except DC
    and, for even fft sizes, Nyquist) and divides by sum(win^2)/hop.  Exact
    for signals supported where the window-square sum has reached its COLA
    constant.
    """
    p = s.params
    win = p.window()
    weights = np.full(p.n_freq, 2.0)
    weights[0] = 1.0
    if p.fft_size % 2 == 0:
        weights[-1] = 1.0
    frame_energy = np.sum(weights[:, None] * np.abs(s.bins) ** 2) / p.fft_size
    cola = np.sum(win**2) / p.hop_length
    return float(frame_energy / cola)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_freq: int, sample_rate: int, fft_size: int) -> np.ndarray:
    """Triangular mel filters, rows normalized to unit peak, shape (n_mels, n_freq)."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    f_max = sample_rate / 2.0
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(f_max), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    freqs = np.arange(n_freq) * sample_rate / fft_size
    fb = np.zeros((n_mels, n_freq))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / max(ctr - lo, 1e-9)
        down = (hi - freqs) / max(hi - ctr, 1e-9)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_power_db(s: ComplexSpectrogram, n_mels: int = 80) -> np.ndarray:
    """Log mel energies in dB, shape (n_mels, n_frames), floored at DB_FLOOR."""
    if n_mels < 8:
        raise ValueError("n_mels must be >= 8")
    grid = decompress(s) if s.compression.applied else s
    power = np.abs(grid.bins) ** 2
    fb = mel_filterbank(n_mels, s.n_freq, s.sample_rate, s.params.fft_size)
    mel = fb @ power
    db = 10.0 * np.log10(np.maximum(mel, 10.0 ** (DB_FLOOR / 10.0)))
    return np.maximum(db, DB_FLOOR)


def mel_render(s: ComplexSpectrogram, n_mels: int, out: str | os.PathLike) -> np.ndarray:
    """Write a grayscale mel-spectrogram image and return the dB matrix.

    Height is n_mels (low frequencies at the bottom row of the image), width
    is n_frames.  Pixel values are the dB matrix min/max normalized to
    0..255; a constant image maps to 0.  Output format follows the file
    extension: .png via Pillow, anything else as binary PGM (P5).
    """
    db = mel_power_db(s, n_mels=n_mels)
    lo, hi = db.min(), db.max()
    if hi - lo < 1e-12:
        pixels = np.zeros_like(db, dtype=np.uint8)
    else:
        pixels = np.round(255.0 * (db - lo) / (hi - lo)).astype(np.uint8)
    img = pixels[::-1]  # low frequencies at the bottom
    path = os.fspath(out)
    if path.lower().endswith(".png"):
        from PIL import Image

        Image.fromarray(img, mode="L").save(path)
    else:
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(img.tobytes())
    return db


def read_wav(path: str | os.PathLike) -> Waveform:
    """Read a mono WAV file (16-bit int or 32/64-bit float PCM)."""
    rate, data = scipy.io.wavfile.read(os.fspath(path))
    if data.ndim > 1:
        raise ValueError(f"expected mono audio, got {data.shape[1]} channels: {path}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype}: {path}")
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path: str | os.PathLike, w: Waveform) -> None:
    """Write 32-bit float PCM."""
    scipy.io.wavfile.write(os.fspath(path), w.sample_rate, w.samples.astype(np.float32))
