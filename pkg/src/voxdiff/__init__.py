"""Conditional score-based diffusion for speech and vocal enhancement.

The forward process drifts a compressed complex spectrogram toward its noisy
counterpart while injecting exponentially growing noise; a U-Net score model
conditioned on the noisy input and an audio-event latent reverses it with
Predictor-Corrector sampling.  Submodules:

  spectro    STFT/ISTFT, magnitude compression, mel rendering, WAV I/O
  sde        schedule, closed-form perturbation kernel, forward-SDE oracle
  nnops      shape-checked tensor ops, Adam, EMA
  scorenet   multi-resolution U-Net with four latent-fusion variants
  latents    toy latent extractor, provider interface, latent file format
  train      denoising score matching loop
  sampler    Predictor-Corrector reverse SDE, end-to-end enhancement
  metrics    SI-SDR / SI-SIR / SI-SAR and Table-style reports
  datapipe   SNR remixing, incoherent mixing, synthetic corpus
  config     strict experiment configuration
  estimator  scikit-learn style fit/transform wrapper
  cli        command-line workflows
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, desk_config, parse_config
from .datapipe import MixSpec, PairRecord, incoherent_mix, remix_to_snr, resample, synth_corpus
from .estimator import DiffusionEnhancer
from .latents import (
    FileLatentProvider,
    LatentRepresentation,
    ToyLatentProvider,
    extract_toy,
    pool,
    read_latent,
    write_latent,
)
from .metrics import EvalReport, evaluate_set, si_decompose, si_sdr
from .sampler import SamplerConfig, enhance, init_xT, pc_sample
from .scorenet import FUSION_VARIANTS, ScoreNet, ScoreNetSpec
from .sde import OuveSchedule, kernel_mean, kernel_score, kernel_std, sample_xt, simulate_forward
from .spectro import (
    ComplexSpectrogram,
    StftParams,
    Waveform,
    compress,
    decompress,
    istft,
    mel_render,
    read_wav,
    spectral_energy,
    stft,
    write_wav,
)
from .train import TrainConfig, dsm_loss, train_loop

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ComplexSpectrogram",
    "DiffusionEnhancer",
    "EvalReport",
    "ExperimentConfig",
    "FUSION_VARIANTS",
    "FileLatentProvider",
    "LatentRepresentation",
    "MixSpec",
    "OuveSchedule",
    "PairRecord",
    "SamplerConfig",
    "ScoreNet",
    "ScoreNetSpec",
    "StftParams",
    "ToyLatentProvider",
    "TrainConfig",
    "Waveform",
    "compress",
    "decompress",
    "desk_config",
    "dsm_loss",
    "enhance",
    "evaluate_set",
    "extract_toy",
    "incoherent_mix",
    "init_xT",
    "istft",
    "kernel_mean",
    "kernel_score",
    "kernel_std",
    "load_checkpoint",
    "mel_render",
    "parse_config",
    "pc_sample",
    "pool",
    "read_latent",
    "read_wav",
    "remix_to_snr",
    "resample",
    "sample_xt",
    "save_checkpoint",
    "si_decompose",
    "si_sdr",
    "simulate_forward",
    "spectral_energy",
    "stft",
    "synth_corpus",
    "train_loop",
    "write_latent",
    "write_wav",
]
