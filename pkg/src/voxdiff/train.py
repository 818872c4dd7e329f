"""Denoising score matching objective and the training loop.

Training pairs are (clean, mixture) waveforms.  Each step draws a batch of
random fixed-width crops from the compressed spectrograms, perturbs the
clean grid with the closed-form kernel at a uniformly sampled t, and
regresses the model output onto the known perturbation score -z/sigma(t).
Adam with EMA shadow weights, both stored in every checkpoint.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, asdict

import numpy as np
import torch

from . import nnops
from .checkpoint import Checkpoint
from .latents import LatentRepresentation
from .scorenet import ScoreNet, ScoreNetSpec, complex_to_channels, channels_to_complex
from .sde import OuveSchedule, complex_randn
from .spectro import StftParams, stft, compress

__all__ = ["TrainConfig", "dsm_loss", "train_loop", "slice_latent_tokens"]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    ema_decay: float = 0.999
    max_steps: int = 2000
    t_sampling: str = "uniform"
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    precision: int = 32

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0.0 <= self.ema_decay < 1.0):
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.t_sampling != "uniform":
            raise ValueError(f"only uniform t sampling is supported, got {self.t_sampling!r}")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")


def dsm_loss(
    model: ScoreNet,
    x0: torch.Tensor,
    y: torch.Tensor,
    latent_tokens: torch.Tensor | None,
    t: torch.Tensor,
    z: torch.Tensor,
    sched: OuveSchedule,
) -> torch.Tensor:
    """Score-matching loss: mean over batch and grid of |s(x_t,y,t,l) + z/sigma(t)|^2.

    x0, y, z are complex grids (B, F, T); t is a (B,) vector in
    [t_eps, t_max].  Raises FloatingPointError on non-finite model output so
    the training loop can skip the step.
    """
    if x0.shape != y.shape or x0.shape != z.shape:
        raise ValueError("x0, y and z must share a shape")
    real_dtype = x0.real.dtype
    t = torch.as_tensor(t, dtype=real_dtype)
    if t.dim() == 0:
        t = t[None]
    ex = torch.exp(-sched.gamma * t)[:, None, None]
    logr = sched.log_ratio
    var = (
        sched.sigma_min**2
        * (torch.exp(2.0 * t * logr) - torch.exp(-2.0 * sched.gamma * t))
        * logr
        / (sched.gamma + logr)
    )
    sigma = torch.sqrt(var)[:, None, None]
    mu = ex * x0 + (1.0 - ex) * y
    x_t = mu + sigma * z
    out = model(complex_to_channels(x_t), complex_to_channels(y), t, latent_tokens)
    if not bool(torch.isfinite(out).all()):
        raise FloatingPointError("model produced non-finite score values")
    resid = channels_to_complex(out) + z / sigma
    return (resid.real**2 + resid.imag**2).mean()


def slice_latent_tokens(l: LatentRepresentation, start_s: float, end_s: float, n_tokens: int) -> np.ndarray:
    """Fixed-count token slice of a latent covering the time span [start_s, end_s)."""
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    t0 = int(math.floor(start_s / l.frame_hop))
    t1 = int(math.ceil(end_s / l.frame_hop))
    t0 = max(0, min(t0, l.n_frames - 1))
    t1 = max(t0 + 1, min(t1, l.n_frames))
    idx = np.linspace(t0, t1 - 1, n_tokens).round().astype(int)
    return l.frames[idx]


def chunk_token_count(stft_params: StftParams, chunk_frames: int, sample_rate: int, latent_hop: float) -> int:
    """Number of latent tokens spanning one spectrogram chunk."""
    chunk_samples = stft_params.window_length + (chunk_frames - 1) * stft_params.hop_length
    return max(1, int(round(chunk_samples / sample_rate / latent_hop)))


class _ClipCache:
    """Per-clip compressed spectrograms and full-length latent."""

    def __init__(self, pair, latent_provider, stft_params, exponent, scale):
        clean_spec = compress(stft(pair.clean, stft_params), exponent=exponent, scale=scale)
        noisy_spec = compress(stft(pair.mixture, stft_params), exponent=exponent, scale=scale)
        self.x0 = clean_spec.bins.astype(np.complex64)
        self.y = noisy_spec.bins.astype(np.complex64)
        self.latent = latent_provider(pair.mixture)
        self.sample_rate = pair.mixture.sample_rate


def train_loop(
    dataset,
    latent_provider,
    spec: ScoreNetSpec,
    cfg: TrainConfig,
    *,
    sched: OuveSchedule | None = None,
    stft_params: StftParams | None = None,
    chunk_frames: int = 64,
    compress_exponent: float = 0.5,
    compress_scale: float = 0.15,
    out_dir: str | os.PathLike | None = None,
    log_hook=None,
    extra_config: dict | None = None,
) -> Checkpoint:
    """Run the score-matching loop over (clean, mixture) waveform pairs.

    `dataset` is a sequence of records exposing .clean and .mixture
    Waveforms.  Returns the final checkpoint (raw + EMA weights + config);
    when out_dir is given, also writes loss_log.csv, periodic snapshots and
    final.exdf there.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    sched = sched or OuveSchedule()
    stft_params = stft_params or StftParams()
    if spec.scale_by_sigma and (spec.gamma, spec.sigma_min, spec.sigma_max) != (
        sched.gamma,
        sched.sigma_min,
        sched.sigma_max,
    ):
        raise ValueError(
            "model process constants "
            f"({spec.gamma}, {spec.sigma_min}, {spec.sigma_max}) do not match the "
            f"training schedule ({sched.gamma}, {sched.sigma_min}, {sched.sigma_max})"
        )

    clips = [_ClipCache(p, latent_provider, stft_params, compress_exponent, compress_scale) for p in dataset]
    n_freq = clips[0].x0.shape[0]
    for c in clips:
        if c.x0.shape[1] < chunk_frames:
            raise ValueError(
                f"clip has {c.x0.shape[1]} spectrogram frames, need at least chunk_frames = {chunk_frames}"
            )
    sample_rate = clips[0].sample_rate
    n_tokens = chunk_token_count(stft_params, chunk_frames, sample_rate, clips[0].latent.frame_hop)
    factor = spec.downsample_factor
    if n_freq % factor or chunk_frames % factor:
        raise ValueError(
            f"grid ({n_freq} x {chunk_frames}) not divisible by the model downsampling factor {factor}"
        )

    model = ScoreNet(spec)
    dtype = torch.float64 if cfg.precision == 64 else torch.float32
    cdtype = torch.complex128 if cfg.precision == 64 else torch.complex64
    model = model.to(dtype)
    params = list(model.parameters())
    param_names = [n for n, _ in model.named_parameters()]
    adam = nnops.AdamState(params)
    shadow = {k: v.detach().clone() for k, v in model.state_dict().items()}
    shadow_params = [shadow[n] for n in param_names]

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    run_config = {
        "schedule": {
            "gamma": sched.gamma,
            "sigma_min": sched.sigma_min,
            "sigma_max": sched.sigma_max,
            "t_max": sched.t_max,
            "t_eps": sched.t_eps,
        },
        "stft": {
            "fft_size": stft_params.fft_size,
            "hop_length": stft_params.hop_length,
            "window_length": stft_params.window_length,
        },
        "compression": {"exponent": compress_exponent, "scale": compress_scale},
        "chunk_frames": chunk_frames,
        "sample_rate": sample_rate,
        "latent": {
            "width": spec.latent_width,
            "provider": getattr(latent_provider, "describe", lambda: {"kind": "custom"})(),
        },
        "train": asdict(cfg),
    }
    run_config.update(extra_config or {})

    loss_rows: list[tuple[int, float, float]] = []
    consecutive_bad = 0
    t_start = time.monotonic()

    use_latent = spec.fusion != "none"
    chunk_samples = stft_params.window_length + (chunk_frames - 1) * stft_params.hop_length

    for step in range(cfg.max_steps):
        xs, ys, toks = [], [], []
        for _ in range(cfg.batch_size):
            c = clips[rng.integers(len(clips))]
            f0 = int(rng.integers(c.x0.shape[1] - chunk_frames + 1))
            xs.append(c.x0[:, f0 : f0 + chunk_frames])
            ys.append(c.y[:, f0 : f0 + chunk_frames])
            if use_latent:
                start_s = f0 * stft_params.hop_length / sample_rate
                toks.append(slice_latent_tokens(c.latent, start_s, start_s + chunk_samples / sample_rate, n_tokens))
        x0 = torch.from_numpy(np.stack(xs)).to(cdtype)
        y = torch.from_numpy(np.stack(ys)).to(cdtype)
        tokens = torch.from_numpy(np.stack(toks)).to(dtype) if use_latent else None
        t = torch.from_numpy(rng.uniform(sched.t_eps, sched.t_max, size=cfg.batch_size)).to(dtype)
        z = torch.from_numpy(complex_randn((cfg.batch_size, n_freq, chunk_frames), rng)).to(cdtype)

        skipped = False
        try:
            loss = dsm_loss(model, x0, y, tokens, t, z, sched)
        except FloatingPointError:
            skipped = True
        if not skipped and not bool(torch.isfinite(loss)):
            skipped = True
        if skipped:
            consecutive_bad += 1
            if consecutive_bad >= 50:
                raise RuntimeError(f"aborting at step {step}: 50 consecutive non-finite losses")
            continue
        consecutive_bad = 0

        model.zero_grad(set_to_none=True)
        nnops.backward(loss)
        grads = [p.grad for p in params]
        nnops.adam_step(params, grads, adam, lr=cfg.lr)
        nnops.ema_update(shadow_params, [p.detach() for p in params], cfg.ema_decay)

        loss_rows.append((step, float(loss.detach()), time.monotonic() - t_start))
        if log_hook is not None:
            log_hook(step, float(loss.detach()))

        if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            _snapshot(model, shadow, run_config, cfg).save(os.path.join(out_dir, f"step_{step + 1:07d}.exdf"))

    ckpt = _snapshot(model, shadow, run_config, cfg)
    if out_dir is not None:
        ckpt.save(os.path.join(out_dir, "final.exdf"))
        with open(os.path.join(out_dir, "loss_log.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "time_s"])
            for row in loss_rows:
                w.writerow([row[0], f"{row[1]:.8g}", f"{row[2]:.3f}"])
    ckpt.loss_log = loss_rows
    return ckpt


def _snapshot(model: ScoreNet, shadow: dict, run_config: dict, cfg: TrainConfig) -> Checkpoint:
    f32_shadow = {k: v.detach().to(torch.float32) for k, v in shadow.items()}
    if cfg.precision == 64:
        model32 = {k: v.detach().to(torch.float32).cpu().numpy() for k, v in model.state_dict().items()}
        return Checkpoint(
            spec=model.spec,
            config=run_config,
            params=model32,
            ema={k: v.cpu().numpy() for k, v in f32_shadow.items()},
        )
    return Checkpoint.from_model(model, ema_state=f32_shadow, config=run_config)
