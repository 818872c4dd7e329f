"""Differentiable building blocks for the score model, plus Adam and EMA updates.

Thin, shape-checked wrappers over torch so every block the score model uses
has a single, finite-difference-testable definition.  Everything runs on CPU;
float32 for training, float64 for gradient checks.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

__all__ = [
    "conv2d",
    "linear",
    "group_normalize",
    "silu",
    "softmax",
    "matmul",
    "add",
    "scale",
    "concat_channels",
    "downsample2x",
    "upsample2x",
    "attention",
    "backward",
    "AdamState",
    "adam_step",
    "ema_update",
]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1) -> torch.Tensor:
    """Same-padded 2-D convolution for odd kernel sizes (3x3 default usage)."""
    _require(x.dim() == 4, f"conv2d expects (B, C, H, W), got {tuple(x.shape)}")
    _require(weight.dim() == 4, f"conv2d weight must be 4-D, got {tuple(weight.shape)}")
    _require(x.shape[1] == weight.shape[1],
             f"conv2d channel mismatch: input {x.shape[1]} vs weight {weight.shape[1]}")
    kh, kw = weight.shape[2], weight.shape[3]
    _require(kh % 2 == 1 and kw % 2 == 1, "conv2d supports odd kernel sizes only")
    return F.conv2d(x, weight, bias, stride=stride, padding=(kh // 2, kw // 2))


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    _require(x.shape[-1] == weight.shape[1],
             f"linear feature mismatch: input {x.shape[-1]} vs weight {tuple(weight.shape)}")
    return F.linear(x, weight, bias)


def group_normalize(x: torch.Tensor, n_groups: int, weight: torch.Tensor | None = None,
                    bias: torch.Tensor | None = None, eps: float = 1e-6) -> torch.Tensor:
    """Per-group standardization over (channels/groups, spatial) with optional affine."""
    _require(x.dim() >= 2, "group_normalize expects at least (B, C)")
    _require(x.shape[1] % n_groups == 0,
             f"channels {x.shape[1]} not divisible by n_groups {n_groups}")
    return F.group_norm(x, n_groups, weight, bias, eps)


def silu(x: torch.Tensor) -> torch.Tensor:
    return F.silu(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return F.softmax(x, dim=dim)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require(a.shape[-1] == b.shape[-2],
             f"matmul inner-dimension mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _require(a.shape == b.shape, f"add shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


def scale(x: torch.Tensor, alpha: float) -> torch.Tensor:
    return x * alpha


def concat_channels(*tensors: torch.Tensor) -> torch.Tensor:
    _require(len(tensors) >= 1, "concat_channels needs at least one tensor")
    base = tensors[0]
    for t in tensors[1:]:
        _require(t.dim() == base.dim() and t.shape[0] == base.shape[0]
                 and t.shape[2:] == base.shape[2:],
                 "concat_channels requires matching batch/spatial dims")
    return torch.cat(tensors, dim=1)


def downsample2x(x: torch.Tensor) -> torch.Tensor:
    """2x average-pool downsampling; spatial dims must be even."""
    _require(x.dim() == 4, f"downsample2x expects (B, C, H, W), got {tuple(x.shape)}")
    _require(x.shape[2] % 2 == 0 and x.shape[3] % 2 == 0,
             f"spatial dims must be even for 2x downsampling, got {tuple(x.shape[2:])}")
    return F.avg_pool2d(x, kernel_size=2)


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    """2x nearest-neighbor upsampling."""
    _require(x.dim() == 4, f"upsample2x expects (B, C, H, W), got {tuple(x.shape)}")
    return F.interpolate(x, scale_factor=2, mode="nearest")


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention softmax(q k^T / sqrt(d)) v.

    q: (..., n_q, d), k: (..., n_kv, d), v: (..., n_kv, d_v).  Single head;
    leading batch dims broadcast.
    """
    _require(q.shape[-1] == k.shape[-1],
             f"attention q/k width mismatch: {q.shape[-1]} vs {k.shape[-1]}")
    _require(k.shape[-2] == v.shape[-2],
             f"attention k/v token-count mismatch: {k.shape[-2]} vs {v.shape[-2]}")
    _require(q.shape[-2] > 0 and k.shape[-2] > 0, "attention over zero tokens")
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return softmax(logits, dim=-1) @ v


def backward(loss: torch.Tensor) -> None:
    """Accumulate d(loss)/d(parameter) into .grad for every reachable parameter."""
    if loss.dim() != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise RuntimeError("loss is not connected to any parameter (no recorded graph)")
    loss.backward()


class AdamState:
    """First/second moment accumulators for one parameter set."""

    def __init__(self, params: list[torch.Tensor]):
        self.step = 0
        self.m = [torch.zeros_like(p) for p in params]
        self.v = [torch.zeros_like(p) for p in params]


def adam_step(
    params: list[torch.Tensor],
    grads: list[torch.Tensor | None],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> bool:
    """In-place Adam update with bias correction.

    Skips the update (returns False) if any gradient is non-finite; moment
    buffers still decay so a transient spike does not poison later steps.
    Parameters with a None gradient are treated as zero-gradient.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    finite = all(g is None or bool(torch.isfinite(g).all()) for g in grads)
    state.step += 1
    t = state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            if p.shape != g.shape:
                raise ValueError(f"gradient shape {tuple(g.shape)} != param shape {tuple(p.shape)}")
            m.mul_(beta1)
            v.mul_(beta2)
            if finite:
                m.add_(g, alpha=1.0 - beta1)
                v.addcmul_(g, g, value=1.0 - beta2)
                m_hat = m / (1.0 - beta1**t)
                v_hat = v / (1.0 - beta2**t)
                p.add_(-lr * m_hat / (v_hat.sqrt() + eps))
    return finite


def ema_update(shadow: list[torch.Tensor], params: list[torch.Tensor], decay: float) -> None:
    """shadow <- decay * shadow + (1 - decay) * params, in place."""
    if not (0.0 <= decay < 1.0):
        raise ValueError(f"decay must be in [0, 1), got {decay}")
    if len(shadow) != len(params):
        raise ValueError("shadow/params length mismatch")
    with torch.no_grad():
        for s, p in zip(shadow, params):
            if s.shape != p.shape:
                raise ValueError(f"shadow shape {tuple(s.shape)} != param shape {tuple(p.shape)}")
            s.mul_(decay).add_(p, alpha=1.0 - decay)
