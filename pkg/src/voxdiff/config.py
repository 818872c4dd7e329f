"""Experiment configuration: strict JSON loading, defaults, cross-field checks.

A config file is a JSON object whose sections mirror the component
dataclasses (schedule, stft, compression, net, train, sampler, data,
latent).  Unknown keys anywhere are rejected with their full key path, and
an empty file resolves to the documented defaults.  The reverse-step count
defaults per task: 40 for speech, 90 for vocals.
"""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field

from .datapipe import MixSpec
from .sampler import SamplerConfig
from .scorenet import ScoreNetSpec
from .sde import OuveSchedule
from .spectro import Compression, StftParams
from .train import TrainConfig

__all__ = [
    "ConfigError",
    "DataConfig",
    "LatentConfig",
    "ExperimentConfig",
    "parse_config",
    "config_from_dict",
    "desk_config",
]

TASKS = ("speech", "vocal")
DEFAULT_N_STEPS = {"speech": 40, "vocal": 90}


class ConfigError(ValueError):
    """Configuration parse or consistency failure, with the offending key path."""


@dataclass(frozen=True)
class DataConfig:
    """Where training pairs come from: directories of stems, or the synthetic corpus."""

    mix: MixSpec = field(default_factory=MixSpec)
    clean_dir: str | None = None
    interference_dir: str | None = None
    n_pairs: int = 12
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError(f"n_pairs must be >= 1, got {self.n_pairs}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass(frozen=True)
class LatentConfig:
    provider: str = "toy"
    h: int = 2048
    seed: int = 0
    file: str | None = None

    def __post_init__(self):
        if self.provider not in ("toy", "file"):
            raise ValueError(f"latent provider must be 'toy' or 'file', got {self.provider!r}")
        if self.h < 1:
            raise ValueError(f"latent width must be >= 1, got {self.h}")
        if self.provider == "file" and not self.file:
            raise ValueError("latent provider 'file' requires a file path")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "speech"
    chunk_frames: int = 64
    schedule: OuveSchedule = field(default_factory=OuveSchedule)
    stft: StftParams = field(default_factory=StftParams)
    compression: Compression = field(default_factory=Compression)
    net: ScoreNetSpec = field(default_factory=ScoreNetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    latent: LatentConfig = field(default_factory=LatentConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.chunk_frames < 1:
            raise ValueError(f"chunk_frames must be >= 1, got {self.chunk_frames}")

    def validate(self) -> None:
        """Cross-field consistency checks, raising ConfigError with key paths."""
        factor = self.net.downsample_factor
        if self.stft.n_freq % factor:
            raise ConfigError(
                f"stft.fft_size: {self.stft.n_freq} frequency bins not divisible "
                f"by the model downsampling factor {factor}"
            )
        if self.chunk_frames % factor:
            raise ConfigError(
                f"chunk_frames: {self.chunk_frames} not divisible by the model "
                f"downsampling factor {factor}"
            )
        if self.net.fusion != "none" and self.net.latent_width != self.latent.h:
            raise ConfigError(
                f"latent.h: width {self.latent.h} does not match net.latent_width {self.net.latent_width}"
            )
        if self.net.scale_by_sigma and (
            self.net.gamma != self.schedule.gamma
            or self.net.sigma_min != self.schedule.sigma_min
            or self.net.sigma_max != self.schedule.sigma_max
        ):
            raise ConfigError(
                "net.gamma/sigma_min/sigma_max: process constants "
                f"({self.net.gamma}, {self.net.sigma_min}, {self.net.sigma_max}) do not match "
                f"schedule ({self.schedule.gamma}, {self.schedule.sigma_min}, {self.schedule.sigma_max})"
            )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["net"]["channel_multipliers"] = list(d["net"]["channel_multipliers"])
        return d


_SECTIONS = {
    "schedule": OuveSchedule,
    "stft": StftParams,
    "compression": Compression,
    "net": ScoreNetSpec,
    "train": TrainConfig,
    "sampler": SamplerConfig,
    "data": DataConfig,
    "latent": LatentConfig,
}
_NESTED = {"mix": MixSpec}


def _build_dataclass(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown key '{where}'")
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _build_dataclass(_NESTED[key], value, where)
            continue
        hint = hints.get(key)
        if isinstance(value, list) and hint is not None and "tuple" in str(hint):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a parsed JSON object."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    raw = dict(raw)
    task = raw.get("task", "speech")
    sampler_raw = raw.get("sampler")
    if not isinstance(sampler_raw, dict) or "n_steps" not in sampler_raw:
        if task in DEFAULT_N_STEPS:
            sampler_raw = dict(sampler_raw or {})
            sampler_raw["n_steps"] = DEFAULT_N_STEPS[task]
            raw["sampler"] = sampler_raw

    # The net carries the process constants for its output scaling; inherit
    # them from the schedule section unless the net section pins them itself.
    sched_raw = raw.get("schedule")
    if isinstance(sched_raw, dict):
        net_raw = raw.get("net")
        net_raw = dict(net_raw) if isinstance(net_raw, dict) else {}
        for key in ("gamma", "sigma_min", "sigma_max"):
            if key in sched_raw and key not in net_raw:
                net_raw[key] = sched_raw[key]
        if net_raw:
            raw["net"] = net_raw

    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build_dataclass(_SECTIONS[key], value, key)
        elif key in ("task", "chunk_frames"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown key '{key}'")
    try:
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    cfg.validate()
    return cfg


def parse_config(path: str | os.PathLike) -> ExperimentConfig:
    """Strictly parse a JSON config file; an empty file means all defaults."""
    with open(path) as f:
        text = f.read()
    if not text.strip():
        return config_from_dict({})
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{os.fspath(path)}: invalid JSON: {e}") from None
    return config_from_dict(raw)


def desk_config(task: str = "vocal", **overrides) -> ExperimentConfig:
    """Small-everything preset that trains in minutes on one CPU core.

    126-sample frames give 64 frequency bins; 64-frame chunks then form
    64 x 64 grids for the default 3-level net.
    """
    base = {
        "task": task,
        "chunk_frames": 64,
        "stft": {"fft_size": 126, "hop_length": 63, "window_length": 126},
        "net": {"latent_width": 512},
        "latent": {"h": 512},
        "train": {"batch_size": 8, "max_steps": 2000},
        "data": {"mix": {"segment_seconds": 2.0}, "n_pairs": 12},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return config_from_dict(base)
