"""Multi-resolution U-Net score model with latent-conditioning fusion variants.

The network estimates the score of the perturbed state given the noisy
condition: input is the channel concatenation of x_t and y (real/imag each),
output is a 2-channel grid interpreted as a complex score.  A latent feature
matrix extracted from the noisy audio conditions the model through one of
four fusion strategies:

  * bottleneck_cross_attn  - cross-attention at the U-Net bottleneck
  * triple_cross_attn      - cross-attention at the deepest encoder stage,
                             the bottleneck, and the matching decoder stage
  * transformer_block      - cross-attention followed by a feed-forward
                             sublayer (both pre-normalized, residual) at the
                             bottleneck
  * input_concat           - pooled latent broadcast to extra input planes
  * none                   - latent-free baseline

Queries always come from the (flattened) spatial feature map; keys and values
come from the latent tokens.  Fusion blocks add their output residually, so a
zeroed output projection leaves the backbone untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from . import nnops

__all__ = [
    "FUSION_VARIANTS",
    "ScoreNetSpec",
    "ScoreNet",
    "GaussianFourierBasis",
    "time_embed",
    "sinusoidal_positions",
    "positional_encode",
    "zero_fusion_output_projections",
    "complex_to_channels",
    "channels_to_complex",
]


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """Complex grid (B, F, T) -> real/imag channel pair (B, 2, F, T)."""
    if not x.is_complex():
        raise ValueError(f"expected a complex tensor, got dtype {x.dtype}")
    if x.dim() == 2:
        x = x[None]
    return torch.stack([x.real, x.imag], dim=1)


def channels_to_complex(x: torch.Tensor) -> torch.Tensor:
    """Channel pair (B, 2, F, T) -> complex grid (B, F, T)."""
    if x.dim() != 4 or x.shape[1] != 2:
        raise ValueError(f"expected (B, 2, F, T), got {tuple(x.shape)}")
    return torch.complex(x[:, 0], x[:, 1])

FUSION_VARIANTS = (
    "bottleneck_cross_attn",
    "triple_cross_attn",
    "transformer_block",
    "input_concat",
)


@dataclass(frozen=True)
class ScoreNetSpec:
    """Architecture description, JSON-serializable for checkpoint headers.

    The process constants (gamma, sigma_min, sigma_max) live here as well
    because the network divides its raw output by the kernel width sigma(t)
    ("scale_by_sigma"): the head then regresses the unit-scale quantity
    -z instead of -z/sigma(t), whose magnitude varies by orders of magnitude
    over t.  They must match the schedule used for training and sampling.
    """

    n_levels: int = 3
    base_channels: int = 16
    channel_multipliers: tuple[int, ...] = (1, 2, 2)
    attn_dim: int = 64
    fusion: str = "bottleneck_cross_attn"
    time_embed_dim: int = 64
    use_progressive_input: bool = True
    latent_width: int = 2048
    latent_tokens: str = "frames"  # "frames" or "pooled"
    use_positions: bool = True
    fourier_scale: float = 16.0
    init_seed: int = 0
    scale_by_sigma: bool = True
    gamma: float = 1.5
    sigma_min: float = 0.05
    sigma_max: float = 0.5

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError(f"n_levels must be >= 2, got {self.n_levels}")
        if len(self.channel_multipliers) != self.n_levels:
            raise ValueError(
                f"need one channel multiplier per level: {self.channel_multipliers} vs {self.n_levels}"
            )
        if self.fusion not in FUSION_VARIANTS + ("none",):
            raise ValueError(f"unknown fusion variant {self.fusion!r}; options: {FUSION_VARIANTS + ('none',)}")
        if self.attn_dim <= 0:
            raise ValueError("attn_dim must be positive")
        if self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be even (sin/cos pairs)")
        if self.latent_tokens not in ("frames", "pooled"):
            raise ValueError(f"latent_tokens must be 'frames' or 'pooled', got {self.latent_tokens!r}")
        if self.latent_width <= 0:
            raise ValueError("latent_width must be positive")
        if self.gamma <= 0 or not (0 < self.sigma_min <= self.sigma_max):
            raise ValueError(
                f"invalid process constants: gamma={self.gamma}, "
                f"sigma_min={self.sigma_min}, sigma_max={self.sigma_max}"
            )
        if self.scale_by_sigma and self.sigma_min == self.sigma_max:
            raise ValueError("scale_by_sigma needs sigma_min < sigma_max (sigma(t) > 0)")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.channel_multipliers)

    @property
    def downsample_factor(self) -> int:
        return 2 ** (self.n_levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreNetSpec":
        d = dict(d)
        d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return cls(**d)


class GaussianFourierBasis(nn.Module):
    """Fixed random Fourier features of a scalar time value."""

    def __init__(self, dim: int, scale: float = 16.0, seed: int = 0):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError("Fourier feature dim must be even")
        gen = torch.Generator().manual_seed(seed)
        freqs = torch.randn(dim // 2, generator=gen) * scale
        self.register_buffer("freqs", freqs)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=self.freqs.dtype, device=self.freqs.device)
        if t.dim() == 0:
            t = t[None]
        proj = 2.0 * math.pi * t[:, None] * self.freqs[None, :]
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)


def time_embed(t: float | torch.Tensor, basis: GaussianFourierBasis) -> torch.Tensor:
    """Fourier time embedding, shape (B, dim)."""
    return basis(t)


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Standard sinusoidal position table, shape (n, dim), values in [-1, 1]."""
    if n < 1:
        raise ValueError("need at least one position")
    pos = torch.arange(n, dtype=dtype)[:, None]
    half = torch.arange(0, dim, 2, dtype=dtype)
    div = torch.exp(-math.log(10000.0) * half / dim)
    table = torch.zeros(n, dim, dtype=dtype)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


def positional_encode(tokens: torch.Tensor) -> torch.Tensor:
    """Add sinusoidal position encodings along the token (frame) axis.

    tokens: (..., T, d) already projected to the attention width.
    """
    t, d = tokens.shape[-2], tokens.shape[-1]
    return tokens + sinusoidal_positions(t, d, dtype=tokens.dtype).to(tokens.device)


class ResBlock(nn.Module):
    """Pre-normalized residual block with time conditioning and optional resampling.

    Structure follows the BigGAN-style up/down residual blocks: when
    `resample` is set, both the residual branch and the skip path are
    resampled so the block itself changes resolution.  The time embedding
    enters as a per-channel affine (scale, shift) after the second norm.
    """

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, resample: str | None = None):
        super().__init__()
        if resample not in (None, "up", "down"):
            raise ValueError(f"resample must be None, 'up' or 'down', got {resample!r}")
        self.resample = resample
        groups = math.gcd(8, in_ch)
        self.norm1 = nn.GroupNorm(groups, in_ch, eps=1e-6)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, 2 * out_ch)
        self.norm2 = nn.GroupNorm(math.gcd(8, out_ch), out_ch, eps=1e-6)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else None

    def _resample(self, x: torch.Tensor) -> torch.Tensor:
        if self.resample == "down":
            return nnops.downsample2x(x)
        if self.resample == "up":
            return nnops.upsample2x(x)
        return x

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = nnops.silu(self.norm1(x))
        h = self._resample(h)
        x = self._resample(x)
        h = self.conv1(h)
        scale_shift = self.emb_proj(nnops.silu(emb))[:, :, None, None]
        a, b = scale_shift.chunk(2, dim=1)
        h = self.norm2(h) * (1.0 + a) + b
        h = self.conv2(nnops.silu(h))
        if self.skip is not None:
            x = self.skip(x)
        return x + h


class LatentTokenizer(nn.Module):
    """Project latent frames to the attention width and add position encodings.

    In "pooled" mode the frame axis is averaged to a single token first, so
    the positional term is the constant position-0 row.
    """

    def __init__(self, latent_width: int, attn_dim: int, mode: str, use_positions: bool = True):
        super().__init__()
        self.mode = mode
        self.use_positions = use_positions
        self.proj = nn.Linear(latent_width, attn_dim)

    def forward(self, latent_frames: torch.Tensor) -> torch.Tensor:
        if latent_frames.dim() == 2:
            latent_frames = latent_frames[None]
        if latent_frames.shape[-1] != self.proj.in_features:
            raise ValueError(
                f"latent width {latent_frames.shape[-1]} does not match model "
                f"latent_width {self.proj.in_features}"
            )
        if self.mode == "pooled":
            latent_frames = latent_frames.mean(dim=1, keepdim=True)
        tokens = self.proj(latent_frames)
        if self.use_positions:
            tokens = positional_encode(tokens)
        return tokens


class CrossAttentionFusion(nn.Module):
    """Residual cross-attention: queries from the feature map, keys/values from tokens."""

    def __init__(self, channels: int, attn_dim: int, feed_forward: bool = False):
        super().__init__()
        self.norm = nn.GroupNorm(math.gcd(8, channels), channels, eps=1e-6)
        self.q_proj = nn.Linear(channels, attn_dim)
        self.k_proj = nn.Linear(attn_dim, attn_dim)
        self.v_proj = nn.Linear(attn_dim, attn_dim)
        self.out_proj = nn.Linear(attn_dim, channels)
        if feed_forward:
            self.ff_norm = nn.GroupNorm(math.gcd(8, channels), channels, eps=1e-6)
            self.ff_in = nn.Linear(channels, 2 * channels)
            self.ff_out = nn.Linear(2 * channels, channels)
        else:
            self.ff_norm = self.ff_in = self.ff_out = None

    def output_projections(self) -> list[nn.Linear]:
        """The residual-branch output layers; zeroing them makes the block an identity."""
        layers = [self.out_proj]
        if self.ff_out is not None:
            layers.append(self.ff_out)
        return layers

    def forward(self, x: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q_src = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)
        q = self.q_proj(q_src)
        k = self.k_proj(tokens)
        v = self.v_proj(tokens)
        attended = nnops.attention(q, k, v)
        x = x + self.out_proj(attended).transpose(1, 2).reshape(b, c, h, w)
        if self.ff_out is not None:
            y = self.ff_norm(x).flatten(2).transpose(1, 2)
            y = self.ff_out(nnops.silu(self.ff_in(y)))
            x = x + y.transpose(1, 2).reshape(b, c, h, w)
        return x


class ScoreNet(nn.Module):
    """The score model s(x_t, y, t, latent) over 2-channel complex grids."""

    def __init__(self, spec: ScoreNetSpec):
        super().__init__()
        torch.manual_seed(spec.init_seed)
        self.spec = spec
        chans = spec.channels
        emb_dim = spec.time_embed_dim

        self.fourier = GaussianFourierBasis(emb_dim, scale=spec.fourier_scale, seed=spec.init_seed)
        self.emb_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))

        in_ch = 4
        self.latent_planes = None
        if spec.fusion == "input_concat":
            self.latent_planes = nn.Linear(spec.latent_width, 4)
            in_ch += 4

        needs_tokens = spec.fusion in ("bottleneck_cross_attn", "triple_cross_attn", "transformer_block")
        self.tokenizer = (
            LatentTokenizer(spec.latent_width, spec.attn_dim, spec.latent_tokens, spec.use_positions)
            if needs_tokens
            else None
        )

        self.stem = nn.Conv2d(in_ch, chans[0], 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.down_blocks = nn.ModuleList()
        self.input_taps = nn.ModuleList()
        for i in range(spec.n_levels):
            self.enc_blocks.append(ResBlock(chans[i], chans[i], emb_dim))
            if i < spec.n_levels - 1:
                self.down_blocks.append(ResBlock(chans[i], chans[i + 1], emb_dim, resample="down"))
                if spec.use_progressive_input:
                    self.input_taps.append(nn.Conv2d(in_ch, chans[i + 1], 1))

        self.mid1 = ResBlock(chans[-1], chans[-1], emb_dim)
        self.mid2 = ResBlock(chans[-1], chans[-1], emb_dim)

        self.enc_fuse = self.mid_fuse = self.dec_fuse = None
        if spec.fusion in ("bottleneck_cross_attn", "triple_cross_attn"):
            self.mid_fuse = CrossAttentionFusion(chans[-1], spec.attn_dim)
        if spec.fusion == "triple_cross_attn":
            self.enc_fuse = CrossAttentionFusion(chans[-1], spec.attn_dim)
            self.dec_fuse = CrossAttentionFusion(chans[-1], spec.attn_dim)
        if spec.fusion == "transformer_block":
            self.mid_fuse = CrossAttentionFusion(chans[-1], spec.attn_dim, feed_forward=True)

        self.dec_blocks = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for i in range(spec.n_levels - 1, -1, -1):
            self.dec_blocks.append(ResBlock(2 * chans[i], chans[i], emb_dim))
            if i > 0:
                self.up_blocks.append(ResBlock(chans[i], chans[i - 1], emb_dim, resample="up"))

        self.head_norm = nn.GroupNorm(math.gcd(8, chans[0]), chans[0], eps=1e-6)
        self.head = nn.Conv2d(chans[0], 2, 3, padding=1)

    def fusion_blocks(self) -> list[CrossAttentionFusion]:
        return [blk for blk in (self.enc_fuse, self.mid_fuse, self.dec_fuse) if blk is not None]

    def _kernel_std(self, t: torch.Tensor) -> torch.Tensor:
        s = self.spec
        logr = math.log(s.sigma_max / s.sigma_min)
        var = (
            s.sigma_min**2
            * (torch.exp(2.0 * logr * t) - torch.exp(-2.0 * s.gamma * t))
            * logr
            / (s.gamma + logr)
        )
        return torch.sqrt(torch.clamp(var, min=1e-20))

    def _check_input(self, x_t: torch.Tensor, y: torch.Tensor) -> None:
        if x_t.shape != y.shape:
            raise ValueError(f"x_t shape {tuple(x_t.shape)} != y shape {tuple(y.shape)}")
        if x_t.dim() != 4 or x_t.shape[1] != 2:
            raise ValueError(f"expected (B, 2, F, T) grids, got {tuple(x_t.shape)}")
        f = self.spec.downsample_factor
        if x_t.shape[2] % f or x_t.shape[3] % f:
            raise ValueError(
                f"grid {tuple(x_t.shape[2:])} not divisible by the downsampling factor {f}"
            )

    def forward(
        self,
        x_t: torch.Tensor,
        y: torch.Tensor,
        t: float | torch.Tensor,
        latent_frames: torch.Tensor | None = None,
    ) -> torch.Tensor:
        self._check_input(x_t, y)
        if self.spec.fusion != "none" and latent_frames is None:
            raise ValueError(f"fusion variant {self.spec.fusion!r} requires a latent")

        t_vec = torch.as_tensor(t, dtype=x_t.dtype, device=x_t.device)
        if t_vec.dim() == 0:
            t_vec = t_vec[None]
        emb = self.emb_mlp(self.fourier(t_vec))
        if emb.shape[0] == 1 and x_t.shape[0] > 1:
            emb = emb.expand(x_t.shape[0], -1)

        inp = nnops.concat_channels(x_t, y)
        tokens = None
        if self.tokenizer is not None:
            tokens = self.tokenizer(latent_frames.to(x_t.dtype))
            if tokens.shape[0] == 1 and x_t.shape[0] > 1:
                tokens = tokens.expand(x_t.shape[0], -1, -1)
        elif self.latent_planes is not None:
            lat = latent_frames.to(x_t.dtype)
            if lat.dim() == 2:
                lat = lat[None]
            pooled = lat.mean(dim=1)
            planes = self.latent_planes(pooled)[:, :, None, None]
            planes = planes.expand(-1, -1, x_t.shape[2], x_t.shape[3])
            if planes.shape[0] == 1 and x_t.shape[0] > 1:
                planes = planes.expand(x_t.shape[0], -1, -1, -1)
            inp = nnops.concat_channels(inp, planes)

        h = self.stem(inp)
        pyramid = inp
        skips = []
        for i in range(self.spec.n_levels):
            h = self.enc_blocks[i](h, emb)
            skips.append(h)
            if i < self.spec.n_levels - 1:
                h = self.down_blocks[i](h, emb)
                if self.spec.use_progressive_input:
                    pyramid = nnops.downsample2x(pyramid)
                    h = h + self.input_taps[i](pyramid)
        if self.enc_fuse is not None:
            h = self.enc_fuse(h, tokens)

        h = self.mid1(h, emb)
        if self.mid_fuse is not None:
            h = self.mid_fuse(h, tokens)
        h = self.mid2(h, emb)

        for j, i in enumerate(range(self.spec.n_levels - 1, -1, -1)):
            h = self.dec_blocks[j](nnops.concat_channels(h, skips[i]), emb)
            if j == 0 and self.dec_fuse is not None:
                h = self.dec_fuse(h, tokens)
            if i > 0:
                h = self.up_blocks[j](h, emb)

        out = self.head(nnops.silu(self.head_norm(h)))
        if self.spec.scale_by_sigma:
            sigma = self._kernel_std(t_vec)
            if sigma.shape[0] == 1 and out.shape[0] > 1:
                sigma = sigma.expand(out.shape[0])
            out = out / sigma[:, None, None, None]
        return out


def zero_fusion_output_projections(model: ScoreNet) -> None:
    """Zero every fusion block's residual output layers, in place.

    Afterwards the attention-based variants compute exactly the latent-free
    backbone (the fusion residuals contribute exact zeros).
    """
    with torch.no_grad():
        for blk in model.fusion_blocks():
            for layer in blk.output_projections():
                layer.weight.zero_()
                if layer.bias is not None:
                    layer.bias.zero_()
