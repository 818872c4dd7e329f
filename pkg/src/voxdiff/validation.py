"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .spectro import Waveform

__all__ = ["as_waveform_list", "check_paired_clips"]


def as_waveform_list(X, sample_rate: int, name: str = "X") -> list[Waveform]:
    """Coerce clip collections to a list of Waveforms.

    Accepts a 2-D array (n_clips, n_samples), a sequence of 1-D arrays of
    possibly differing lengths, or a sequence of Waveforms (whose sample
    rates must match the requested one).
    """
    if isinstance(X, Waveform):
        X = [X]
    if isinstance(X, np.ndarray):
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise ValueError(f"{name} must be 2-D (n_clips, n_samples), got shape {X.shape}")
        return [Waveform(samples=np.asarray(row, dtype=np.float64), sample_rate=sample_rate) for row in X]
    clips = []
    for i, item in enumerate(X):
        if isinstance(item, Waveform):
            if item.sample_rate != sample_rate:
                raise ValueError(
                    f"{name}[{i}] has sample rate {item.sample_rate}, expected {sample_rate}"
                )
            clips.append(item)
            continue
        arr = np.asarray(item, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"{name}[{i}] must be a 1-D signal, got shape {arr.shape}")
        clips.append(Waveform(samples=arr, sample_rate=sample_rate))
    if not clips:
        raise ValueError(f"{name} contains no clips")
    return clips


def check_paired_clips(noisy: list[Waveform], clean: list[Waveform]) -> None:
    """Training pairs must align one-to-one with equal lengths."""
    if len(noisy) != len(clean):
        raise ValueError(f"clip count mismatch: {len(noisy)} noisy vs {len(clean)} clean")
    for i, (a, b) in enumerate(zip(noisy, clean)):
        if a.samples.shape[0] != b.samples.shape[0]:
            raise ValueError(
                f"pair {i}: noisy has {a.samples.shape[0]} samples, clean has {b.samples.shape[0]}"
            )
