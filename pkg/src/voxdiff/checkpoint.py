"""Versioned binary checkpoint container for score-model weights.

Layout (all integers little-endian u32, all values little-endian f32):

    magic 'EXDF' | version | json_len | json metadata (architecture + run
    config) | n_params | param records | n_ema | ema records

Each parameter record is: name_len, name bytes (utf-8), rank, one u32 per
dim, then the f32 values in C order.  The EMA shadow is stored as a parallel
record section with the same names, so a file always carries both the raw
and the averaged weights.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .scorenet import ScoreNet, ScoreNetSpec

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

CKPT_MAGIC = b"EXDF"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    """In-memory view of a checkpoint: weights, EMA shadow, and metadata."""

    spec: ScoreNetSpec
    config: dict = field(default_factory=dict)
    params: dict[str, np.ndarray] = field(default_factory=dict)
    ema: dict[str, np.ndarray] = field(default_factory=dict)

    def build_model(self, use_ema: bool = True) -> ScoreNet:
        """Instantiate a ScoreNet and load either the EMA or the raw weights."""
        model = ScoreNet(self.spec)
        source = self.ema if use_ema else self.params
        state = {k: torch.from_numpy(v.copy()) for k, v in source.items()}
        model.load_state_dict(state)
        model.eval()
        return model

    @classmethod
    def from_model(cls, model: ScoreNet, ema_state: dict | None = None, config: dict | None = None) -> "Checkpoint":
        params = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
        if ema_state is None:
            ema = {k: v.copy() for k, v in params.items()}
        else:
            ema = {
                k: (v.detach().cpu().numpy() if isinstance(v, torch.Tensor) else np.asarray(v)).astype(np.float32)
                for k, v in ema_state.items()
            }
        return cls(spec=model.spec, config=dict(config or {}), params=params, ema=ema)

    def save(self, path: str | os.PathLike) -> None:
        save_checkpoint(self, path)


def _write_records(f, records: dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(records)))
    for name, value in records.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        name_b = name.encode("utf-8")
        f.write(struct.pack("<I", len(name_b)))
        f.write(name_b)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes(order="C"))


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated checkpoint: missing {what}")
    return buf


def _read_records(f, section: str) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(f, 4, f"{section} count"))
    records: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(f, 4, f"{section} record {i} name length"))
        name = _read_exact(f, name_len, f"{section} record {i} name").decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(f, 4, f"{name} rank"))
        shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"{name} shape")) if rank else ()
        n_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = _read_exact(f, 4 * n_values, f"{name} values")
        records[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return records


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    meta = {"spec": ckpt.spec.to_dict(), "config": ckpt.config}
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(meta_b)))
        f.write(meta_b)
        _write_records(f, ckpt.params)
        _write_records(f, ckpt.ema)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}")
        version, meta_len = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        params = _read_records(f, "parameter")
        ema = _read_records(f, "EMA")
    if set(params) != set(ema):
        raise ValueError("checkpoint parameter and EMA sections disagree on names")
    return Checkpoint(
        spec=ScoreNetSpec.from_dict(meta["spec"]),
        config=meta.get("config", {}),
        params=params,
        ema=ema,
    )
